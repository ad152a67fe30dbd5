//! Classification head, loss and per-modality attention attribution.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::inter::{FusionRepresentation, ModalitySpan};
use super::layers::{Linear, MultiHeadAttention};
use super::params::{Forward, ParamStore};
use crate::dataset::Label;
use crate::error::{Error, Result};
use crate::numerics::{positive_probability, Graph, Tensor, Var, BCE_EPS};

/// Self-attention over the fused sequence, a residual ReLU projection,
/// mean pooling and a two-way linear read-out.
#[derive(Clone, Debug)]
pub struct PredictionHead {
    pub attn: MultiHeadAttention,
    pub nu: Linear,
    pub tau: Linear,
}

#[derive(Clone, Debug)]
pub struct HeadOutput {
    /// `1 × 2`
    pub logits: Var,
    pub maps: Vec<Var>,
}

impl PredictionHead {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        d: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(PredictionHead {
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), d, heads, rng)?,
            nu: Linear::new(store, &format!("{name}.nu"), d, d, rng),
            tau: Linear::new(store, &format!("{name}.tau"), d, 2, rng),
        })
    }

    pub fn forward(
        &self,
        f: &mut Forward,
        fr_h: Var,
        attn_dropout: f64,
        out_dropout: f64,
    ) -> Result<HeadOutput> {
        let (bar, maps) = self.attn.forward(f, fr_h, fr_h, attn_dropout)?;
        let h = self.nu.forward(f, bar)?;
        let h = f.g.relu(h);
        let h = f.g.dropout(h, out_dropout)?;
        let hat = f.g.add(bar, h)?;
        let pooled = f.g.mean_pool(hat, 0)?;
        let logits = self.tau.forward(f, pooled)?;
        Ok(HeadOutput { logits, maps })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub probs: [f64; 2],
    pub label: Label,
    #[serde(skip)]
    pub attn: Vec<Tensor>,
}

impl Prediction {
    pub fn from_logits(z: &[f64], attn: Vec<Tensor>) -> Prediction {
        let p = positive_probability(z[0], z[1]);
        Prediction {
            probs: [1.0 - p, p],
            label: Label::from_index(usize::from(p > 0.5)),
            attn,
        }
    }
}

/// Runs the head on `fr_h`. Pass `Graph::new(true, seed)` to enable dropout.
pub fn predict(
    fr_h: &FusionRepresentation,
    head: &PredictionHead,
    store: &ParamStore,
    graph: Graph,
    attn_dropout: f64,
    out_dropout: f64,
) -> Result<Prediction> {
    let mut f = Forward::new(store, graph);
    let x = f.g.constant(&fr_h.data);
    let out = head.forward(&mut f, x, attn_dropout, out_dropout)?;
    let attn = out.maps.iter().map(|&m| f.g.value(m).clone()).collect();
    Ok(Prediction::from_logits(f.g.value(out.logits).values(), attn))
}

/// Mean binary cross-entropy of positive-class probabilities, clamped to
/// `[BCE_EPS, 1 − BCE_EPS]`.
pub fn bce_loss(y: &[Label], p: &[f64]) -> Result<f64> {
    if y.len() != p.len() {
        return Err(Error::InvalidArgument(format!(
            "{} labels but {} probabilities",
            y.len(),
            p.len()
        )));
    }
    if y.is_empty() {
        return Err(Error::EmptyInput);
    }
    let total: f64 = y
        .iter()
        .zip(p)
        .map(|(l, &p)| {
            let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
            let t = l.as_f64();
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum();
    Ok(total / y.len() as f64)
}

/// Which attention mass is attributed to a modality.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum McsMode {
    /// Mass of the query rows belonging to the modality, averaged over its
    /// rows. Every softmax row carries unit mass, so this is uniform.
    #[default]
    Row,
    /// Mass that all queries place on the modality's key columns, averaged
    /// over its length.
    Column,
}

impl fmt::Display for McsMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            McsMode::Row => "row",
            McsMode::Column => "column",
        })
    }
}

impl FromStr for McsMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "row" => Ok(McsMode::Row),
            "column" => Ok(McsMode::Column),
            _ => Err(Error::InvalidArgument(format!("unknown MCS mode `{s}` (row, column)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McsReport {
    pub modalities: Vec<String>,
    pub scores: Vec<f64>,
}

/// Normalized attention mass per modality over the per-head `l_f × l_f` maps.
pub fn mcs(attn: &[Tensor], spans: &[ModalitySpan], mode: McsMode) -> Result<McsReport> {
    let l_f = spans.last().map_or(0, |s| s.end);
    let mut pos = 0;
    for s in spans {
        if s.start != pos || s.end <= s.start {
            return Err(Error::InvalidArgument(format!(
                "modality spans must tile the sequence without gaps or empty spans (at `{}`)",
                s.modality
            )));
        }
        pos = s.end;
    }
    if spans.is_empty() || attn.is_empty() {
        return Err(Error::EmptyInput);
    }
    for a in attn {
        if a.rank() != 2 || a.rows() != l_f || a.cols() != l_f {
            return Err(Error::ShapeMismatch {
                op: "modality contribution",
                left: a.shape().to_vec(),
                right: vec![l_f, l_f],
            });
        }
    }
    let heads = attn.len() as f64;
    let sa: Vec<f64> = spans
        .iter()
        .map(|s| {
            let mass: f64 = attn
                .iter()
                .map(|a| match mode {
                    McsMode::Row => (s.start..s.end).map(|j| a.row(j).iter().sum::<f64>()).sum::<f64>(),
                    McsMode::Column => (0..l_f).map(|j| a.row(j)[s.start..s.end].iter().sum::<f64>()).sum(),
                })
                .sum();
            mass / heads / (s.end - s.start) as f64
        })
        .collect();
    let total: f64 = sa.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Data("attention carries no mass".into()));
    }
    Ok(McsReport {
        modalities: spans.iter().map(|s| s.modality.clone()).collect(),
        scores: sa.iter().map(|v| v / total).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fd;
    use crate::model::inter::tile_spans;
    use crate::numerics::gradcheck::random;
    use crate::numerics::softmax_in_place;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn head(d: usize, seed: u64) -> (ParamStore, PredictionHead) {
        let mut store = ParamStore::new();
        let h = PredictionHead::new(&mut store, "p", d, 2, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        (store, h)
    }

    fn fr(l: usize, d: usize, seed: u64) -> FusionRepresentation {
        FusionRepresentation {
            data: random(&[l, d], seed),
            modality_spans: tile_spans([("a", l)]),
        }
    }

    fn random_maps(spans: &[ModalitySpan], heads: usize, seed: u64) -> Vec<Tensor> {
        let l = spans.last().unwrap().end;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..heads)
            .map(|_| {
                let mut v: Vec<f64> = (0..l * l).map(|_| rng.random_range(-3.0..3.0)).collect();
                v.chunks_mut(l).for_each(softmax_in_place);
                Tensor::matrix(l, l, v).unwrap()
            })
            .collect()
    }

    #[test]
    fn zero_readout_gives_even_odds() {
        let (mut store, h) = head(4, 0);
        store.set("p.tau.weight", Tensor::zeros(&[4, 2])).unwrap();
        let p = predict(&fr(5, 4, 1), &h, &store, Graph::eval(), 0.1, 0.1).unwrap();
        assert_eq!(p.probs, [0.5, 0.5]);
        assert_eq!(p.label, Label::Negative);
    }

    #[test]
    fn scaled_logits_keep_label() {
        let (store, h) = head(4, 2);
        let x = fr(6, 4, 3);
        let base = predict(&x, &h, &store, Graph::eval(), 0.0, 0.0).unwrap();
        assert!((base.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for c in [0.01, 3.0, 100.0] {
            let mut s = store.clone();
            for name in ["p.tau.weight", "p.tau.bias"] {
                let id = s.id(name).unwrap();
                s.get_mut(id).values_mut().iter_mut().for_each(|v| *v *= c);
            }
            assert_eq!(predict(&x, &h, &s, Graph::eval(), 0.0, 0.0).unwrap().label, base.label);
        }
    }

    #[test]
    fn bce_closed_forms() {
        assert!((bce_loss(&[Label::Positive], &[0.5]).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        let l = bce_loss(&[Label::Positive, Label::Negative], &[1.0 - BCE_EPS, BCE_EPS]).unwrap();
        assert!(l <= 1e-6 && l >= 0.0);
        assert!(bce_loss(&[Label::Positive], &[0.1, 0.2]).is_err());
    }

    #[test]
    fn head_gradients_match_finite_differences() {
        for seed in 0..3 {
            let (store, h) = head(4, seed);
            let x = random(&[5, 4], seed + 7);
            let err = fd::check_params(&store, |f| {
                let xv = f.g.constant(&x);
                let out = h.forward(f, xv, 0.0, 0.0).unwrap();
                f.g.bce_with_logits(out.logits, (seed % 2) as f64, 1.0).unwrap()
            });
            assert!(err < 1e-4, "seed {seed}: {err}");
        }
    }

    #[test]
    fn uniform_attention_gives_equal_shares() {
        let spans = tile_spans([("a", 3), ("b", 3), ("c", 3), ("d", 3)]);
        let maps = vec![Tensor::filled(&[12, 12], 1.0 / 12.0); 2];
        for mode in [McsMode::Row, McsMode::Column] {
            let r = mcs(&maps, &spans, mode).unwrap();
            assert!(r.scores.iter().all(|&s| (s - 0.25).abs() < 1e-15), "{mode}: {:?}", r.scores);
        }
        let one = mcs(&random_maps(&tile_spans([("a", 4)]), 1, 0), &tile_spans([("a", 4)]), McsMode::Column).unwrap();
        assert_eq!(one.scores, vec![1.0]);
    }

    #[test]
    fn column_mode_sees_where_attention_goes() {
        let spans = tile_spans([("a", 2), ("b", 2)]);
        let mut v = vec![0.0; 16];
        for j in 0..4 {
            v[j * 4 + 3] = 1.0;
        }
        let maps = vec![Tensor::matrix(4, 4, v).unwrap()];
        assert_eq!(mcs(&maps, &spans, McsMode::Column).unwrap().scores, vec![0.0, 1.0]);
        assert_eq!(mcs(&maps, &spans, McsMode::Row).unwrap().scores, vec![0.5, 0.5]);
    }

    #[test]
    fn bad_spans_rejected() {
        let maps = vec![Tensor::filled(&[4, 4], 0.25)];
        assert!(mcs(&maps, &tile_spans([("a", 2), ("b", 1)]), McsMode::Row).is_err());
        let gap = vec![
            ModalitySpan { modality: "a".into(), start: 0, end: 2 },
            ModalitySpan { modality: "b".into(), start: 3, end: 4 },
        ];
        assert!(mcs(&maps, &gap, McsMode::Row).is_err());
    }

    proptest! {
        #[test]
        fn matches_recount(lens in prop::collection::vec(1usize..5, 1..5), heads in 1usize..4, seed in 0u64..1000, column in any::<bool>()) {
            let names = ["a", "b", "c", "d"];
            let spans = tile_spans(names.iter().copied().zip(lens.iter().copied()));
            let maps = random_maps(&spans, heads, seed);
            let mode = if column { McsMode::Column } else { McsMode::Row };
            let r = mcs(&maps, &spans, mode).unwrap();
            let l = spans.last().unwrap().end;
            let mut sa = vec![0.0; spans.len()];
            for (i, s) in spans.iter().enumerate() {
                for a in &maps {
                    for j in 0..l {
                        for k in 0..l {
                            let inside = if column { (s.start..s.end).contains(&k) } else { (s.start..s.end).contains(&j) };
                            if inside {
                                sa[i] += a.at(j, k);
                            }
                        }
                    }
                }
                sa[i] /= heads as f64 * (s.end - s.start) as f64;
            }
            let total: f64 = sa.iter().sum();
            prop_assert!((r.scores.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            for (got, want) in r.scores.iter().zip(&sa) {
                prop_assert!(*got >= 0.0);
                prop_assert!((got - want / total).abs() < 1e-9);
            }
        }
    }
}
