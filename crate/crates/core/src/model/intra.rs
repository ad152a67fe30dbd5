//! Per-modality self-attention stacks.

use rand::Rng;

use super::embedding::{DomainSpan, TokenSequence};
use super::layers::SelfAttentionBlock;
use super::params::{Forward, ParamStore};
use crate::error::{Error, Result};
use crate::numerics::{Graph, Tensor, Var};

/// Output of one intra-modal stack, `l_m × d`.
#[derive(Clone, Debug, PartialEq)]
pub struct UnimodalRepresentation {
    pub data: Tensor,
    pub modality: String,
    pub domain_spans: Vec<DomainSpan>,
}

#[derive(Clone, Debug)]
pub struct IntraModalTransformer {
    pub modality: String,
    pub d: usize,
    pub blocks: Vec<SelfAttentionBlock>,
}

impl IntraModalTransformer {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        modality: &str,
        d: usize,
        depth: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let blocks = (0..depth)
            .map(|i| SelfAttentionBlock::new(store, &format!("{name}.{i}"), d, heads, rng))
            .collect::<Result<_>>()?;
        Ok(IntraModalTransformer {
            modality: modality.to_string(),
            d,
            blocks,
        })
    }

    /// Runs every block; returns the output and, per block, the per-head maps.
    pub fn forward(&self, f: &mut Forward, x: Var, dropout: f64) -> Result<(Var, Vec<Vec<Var>>)> {
        let mut x = x;
        let mut maps = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (y, m) = b.forward(f, x, dropout)?;
            x = y;
            maps.push(m);
        }
        Ok((x, maps))
    }
}

/// Multi-head self-attention of one block applied to `x` directly.
pub fn self_attention(
    x: &Tensor,
    block: &SelfAttentionBlock,
    store: &ParamStore,
) -> Result<(Tensor, Vec<Tensor>)> {
    let mut f = Forward::new(store, Graph::eval());
    let xv = f.g.constant(x);
    let (y, maps) = block.attn.forward(&mut f, xv, xv, 0.0)?;
    Ok((
        f.g.value(y).clone(),
        maps.into_iter().map(|m| f.g.value(m).clone()).collect(),
    ))
}

/// Runs `t` on one token sequence. Pass `Graph::new(true, seed)` to enable dropout.
pub fn forward_intra(
    x: &TokenSequence,
    t: &IntraModalTransformer,
    store: &ParamStore,
    graph: Graph,
    dropout: f64,
) -> Result<UnimodalRepresentation> {
    if x.data.cols() != t.d {
        return Err(Error::ShapeMismatch {
            op: "intra-modal transformer",
            left: x.data.shape().to_vec(),
            right: vec![t.d],
        });
    }
    let mut f = Forward::new(store, graph);
    let xv = f.g.constant(&x.data);
    let (y, _) = t.forward(&mut f, xv, dropout)?;
    Ok(UnimodalRepresentation {
        data: f.g.value(y).clone(),
        modality: x.modality.clone(),
        domain_spans: x.domain_spans.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fd;
    use crate::numerics::gradcheck::random;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn seq(l: usize, d: usize, seed: u64) -> TokenSequence {
        TokenSequence {
            data: random(&[l, d], seed),
            modality: "m".into(),
            domain_spans: Vec::new(),
        }
    }

    #[test]
    fn zero_depth_is_identity() {
        let mut store = ParamStore::new();
        let t = IntraModalTransformer::new(&mut store, "i", "m", 6, 0, 2, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let x = seq(4, 6, 1);
        let ur = forward_intra(&x, &t, &store, Graph::eval(), 0.1).unwrap();
        assert_eq!(ur.data, x.data);
    }

    #[test]
    fn attention_rows_are_distributions() {
        let mut store = ParamStore::new();
        let t = IntraModalTransformer::new(&mut store, "i", "m", 10, 1, 5, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let (_, maps) = self_attention(&random(&[7, 10], 3), &t.blocks[0], &store).unwrap();
        assert_eq!(maps.len(), 5);
        for m in maps {
            assert_eq!(m.shape(), &[7, 7]);
            for r in 0..7 {
                let row = m.row(r);
                assert!(row.iter().all(|&w| w >= 0.0));
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shape_wrong_width() {
        let mut store = ParamStore::new();
        let t = IntraModalTransformer::new(&mut store, "i", "m", 6, 1, 2, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(forward_intra(&seq(3, 5, 0), &t, &store, Graph::eval(), 0.0).is_err());
    }

    #[test]
    fn dropout_only_in_training() {
        let mut store = ParamStore::new();
        let t = IntraModalTransformer::new(&mut store, "i", "m", 8, 2, 2, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let x = seq(6, 8, 6);
        let a = forward_intra(&x, &t, &store, Graph::eval(), 0.5).unwrap();
        let b = forward_intra(&x, &t, &store, Graph::eval(), 0.5).unwrap();
        assert_eq!(a, b);
        let c = forward_intra(&x, &t, &store, Graph::new(true, 1), 0.5).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn block_gradients_match_finite_differences() {
        for seed in 0..3 {
            let mut store = ParamStore::new();
            let t = IntraModalTransformer::new(&mut store, "i", "m", 6, 1, 2, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let x = random(&[4, 6], seed + 10);
            let err = fd::check_params(&store, |f| {
                let xv = f.g.constant(&x);
                let (y, _) = t.forward(f, xv, 0.0).unwrap();
                fd::projected(f, y, seed)
            });
            assert!(err < 1e-4, "seed {seed}: {err}");
        }
    }
}
