//! The full classifier: embedding, intra-modal stacks, cross-modal stacks
//! and the prediction head, with two ablated variants.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::embedding::{DomainSpan, TemporalConvLayer, TokenSequence};
use super::inter::{tile_spans, CrossModalTransformer, FusionRepresentation, ModalitySpan};
use super::intra::{IntraModalTransformer, UnimodalRepresentation};
use super::params::{Forward, ParamStore};
use super::prediction::{mcs, McsMode, McsReport, Prediction, PredictionHead};
use crate::dataset::Instance;
use crate::dsp::{Domain, ModalityFeatureSet};
use crate::error::{Error, Result};
use crate::numerics::{Graph, Tensor, Var};

pub const SCOPE_EMBEDDING: &str = "embedding";
pub const SCOPE_INTRA: &str = "intra_modal";
pub const SCOPE_INTER: &str = "inter_modal";
pub const SCOPE_PREDICTION: &str = "prediction";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    #[default]
    Full,
    /// No cross-modal stacks; the head reads the concatenated unimodal outputs.
    IntraAtt,
    /// No intra-modal stacks; the embedded tokens feed the cross-modal stacks.
    InterAtt,
}

impl AblationMode {
    pub const ALL: [AblationMode; 3] = [AblationMode::Full, AblationMode::IntraAtt, AblationMode::InterAtt];

    pub fn name(self) -> &'static str {
        match self {
            AblationMode::Full => "full",
            AblationMode::IntraAtt => "intra_att",
            AblationMode::InterAtt => "inter_att",
        }
    }

    pub fn uses_intra(self) -> bool {
        self != AblationMode::InterAtt
    }

    pub fn uses_inter(self) -> bool {
        self != AblationMode::IntraAtt
    }
}

impl fmt::Display for AblationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AblationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AblationMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown ablation mode `{s}` (full, intra_att, inter_att)")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub modalities: Vec<String>,
    /// Feature width of each domain, in [`Domain::ALL`] order.
    pub domain_dims: Vec<usize>,
    pub d_tc: usize,
    pub intra_depth: usize,
    pub inter_depth: usize,
    pub heads: usize,
    pub intra_heads: usize,
    pub attn_dropout: f64,
    pub out_dropout: f64,
    pub max_tokens_per_domain: usize,
    pub scalar_kernel: usize,
    pub spectral_kernel: usize,
    pub ablation_mode: AblationMode,
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.modalities.is_empty() {
            return bad("at least one modality is required");
        }
        if self.d_tc == 0 || self.heads == 0 || self.intra_heads == 0 {
            return bad("d_tc and head counts must be positive");
        }
        if !(0.0..1.0).contains(&self.attn_dropout) || !(0.0..1.0).contains(&self.out_dropout) {
            return bad("dropout rates must lie in [0, 1)");
        }
        if self.domain_dims.len() != Domain::ALL.len() || self.domain_dims.contains(&0) {
            return bad("need a positive width for each of the seven domains");
        }
        Ok(())
    }
}

/// Graph handles of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// Embedded token sequence per modality.
    pub embedded: Vec<Var>,
    pub domain_spans: Vec<Vec<DomainSpan>>,
    /// Unimodal representations (the embeddings when intra stacks are ablated).
    pub urs: Vec<Var>,
    pub fr_l: Var,
    /// Equal to `fr_l` when cross-modal stacks are ablated.
    pub fr_h: Var,
    pub modality_spans: Vec<ModalitySpan>,
    /// `[modality][block][head]`
    pub intra_maps: Vec<Vec<Vec<Var>>>,
    /// `[modality][block][head]`
    pub cross_maps: Vec<Vec<Vec<Var>>>,
    pub head_maps: Vec<Var>,
    /// `1 × 2`
    pub logits: Var,
}

/// Materialized intermediate tensors of one eval-mode pass.
#[derive(Clone, Debug)]
pub struct Trace {
    pub prediction: Prediction,
    pub mcs: McsReport,
    pub embedded: Vec<TokenSequence>,
    pub urs: Vec<UnimodalRepresentation>,
    pub fr_l: FusionRepresentation,
    pub fr_h: FusionRepresentation,
    pub intra_maps: Vec<Vec<Vec<Tensor>>>,
    pub cross_maps: Vec<Vec<Vec<Tensor>>>,
}

#[derive(Clone, Debug)]
pub struct AudFormer {
    pub spec: NetworkSpec,
    pub store: ParamStore,
    pub embed: Vec<TemporalConvLayer>,
    pub intra: Vec<IntraModalTransformer>,
    pub inter: Vec<CrossModalTransformer>,
    pub head: PredictionHead,
}

impl AudFormer {
    /// Fresh parameters drawn from a stream seeded by `seed`.
    pub fn new(spec: NetworkSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let d = spec.d_tc;
        let mut embed = Vec::new();
        for m in &spec.modalities {
            embed.push(TemporalConvLayer::new(
                &mut store,
                &format!("embed.{m}"),
                &spec.domain_dims,
                d,
                spec.scalar_kernel,
                spec.spectral_kernel,
                spec.max_tokens_per_domain,
                &mut rng,
            )?);
        }
        let mut intra = Vec::new();
        if spec.ablation_mode.uses_intra() {
            for m in &spec.modalities {
                intra.push(IntraModalTransformer::new(
                    &mut store,
                    &format!("intra.{m}"),
                    m,
                    d,
                    spec.intra_depth,
                    spec.intra_heads,
                    &mut rng,
                )?);
            }
        }
        let mut inter = Vec::new();
        if spec.ablation_mode.uses_inter() {
            for m in &spec.modalities {
                inter.push(CrossModalTransformer::new(
                    &mut store,
                    &format!("inter.{m}"),
                    m,
                    d,
                    spec.inter_depth,
                    spec.heads,
                    &mut rng,
                )?);
            }
        }
        let head = PredictionHead::new(&mut store, "head", d, spec.heads, &mut rng)?;
        Ok(AudFormer {
            spec,
            store,
            embed,
            intra,
            inter,
            head,
        })
    }

    fn modality_features<'a>(&self, inst: &'a Instance) -> Result<Vec<&'a ModalityFeatureSet>> {
        self.spec
            .modalities
            .iter()
            .map(|m| {
                inst.features.get(m).ok_or_else(|| {
                    Error::Data(format!("subject `{}` has no `{m}` features", inst.subject_id))
                })
            })
            .collect()
    }

    /// Builds the whole network on `f`'s graph.
    pub fn forward(&self, f: &mut Forward, inst: &Instance) -> Result<ForwardOutput> {
        let feats = self.modality_features(inst)?;
        let drop = self.spec.attn_dropout;

        f.g.enter_scope(SCOPE_EMBEDDING);
        let mut embedded = Vec::with_capacity(feats.len());
        let mut domain_spans = Vec::with_capacity(feats.len());
        for (fs, layer) in feats.iter().zip(&self.embed) {
            let e = layer.forward(f, fs)?;
            embedded.push(e.tokens);
            domain_spans.push(e.spans);
        }
        f.g.exit_scope();

        let mut urs = embedded.clone();
        let mut intra_maps = Vec::new();
        if self.spec.ablation_mode.uses_intra() {
            f.g.enter_scope(SCOPE_INTRA);
            for (ur, t) in urs.iter_mut().zip(&self.intra) {
                let (y, maps) = t.forward(f, *ur, drop)?;
                *ur = y;
                intra_maps.push(maps);
            }
            f.g.exit_scope();
        }

        let lens: Vec<usize> = urs.iter().map(|&u| f.g.value(u).rows()).collect();
        let modality_spans = tile_spans(self.spec.modalities.iter().map(String::as_str).zip(lens));
        let fr_l = if urs.len() == 1 { urs[0] } else { f.g.concat(&urs, 0)? };

        let mut fr_h = fr_l;
        let mut cross_maps = Vec::new();
        if self.spec.ablation_mode.uses_inter() {
            f.g.enter_scope(SCOPE_INTER);
            let mut outs = Vec::with_capacity(urs.len());
            for (&ur, t) in urs.iter().zip(&self.inter) {
                let (y, maps) = t.forward(f, ur, fr_l, drop)?;
                outs.push(y);
                cross_maps.push(maps);
            }
            fr_h = if outs.len() == 1 { outs[0] } else { f.g.concat(&outs, 0)? };
            f.g.exit_scope();
        }

        f.g.enter_scope(SCOPE_PREDICTION);
        let head = self.head.forward(f, fr_h, drop, self.spec.out_dropout)?;
        f.g.exit_scope();

        Ok(ForwardOutput {
            embedded,
            domain_spans,
            urs,
            fr_l,
            fr_h,
            modality_spans,
            intra_maps,
            cross_maps,
            head_maps: head.maps,
            logits: head.logits,
        })
    }

    /// Weighted loss and parameter gradients for one instance, with dropout
    /// driven by `seed`.
    pub fn loss_and_grads(
        &self,
        inst: &Instance,
        weight: f64,
        seed: u64,
    ) -> Result<(f64, Vec<Option<Vec<f64>>>)> {
        let mut f = Forward::new(&self.store, Graph::new(true, seed));
        let out = self.forward(&mut f, inst)?;
        let loss = f.g.bce_with_logits(out.logits, inst.label.as_f64(), weight)?;
        let value = f.g.value(loss).values()[0];
        f.g.backward(loss)?;
        Ok((value, f.param_grads()))
    }

    /// Eval-mode class probabilities.
    pub fn infer(&self, inst: &Instance) -> Result<Prediction> {
        let mut f = Forward::new(&self.store, Graph::eval());
        let out = self.forward(&mut f, inst)?;
        Ok(Prediction::from_logits(f.g.value(out.logits).values(), Vec::new()))
    }

    /// Eval-mode pass keeping every intermediate representation and map.
    pub fn trace(&self, inst: &Instance, mode: McsMode) -> Result<Trace> {
        let mut f = Forward::new(&self.store, Graph::eval());
        let out = self.forward(&mut f, inst)?;
        let g = &mut f.g;
        let maps3 = |g: &mut Graph, m: &Vec<Vec<Vec<Var>>>| -> Vec<Vec<Vec<Tensor>>> {
            m.iter()
                .map(|blocks| blocks.iter().map(|hs| hs.iter().map(|&h| g.take_value(h)).collect()).collect())
                .collect()
        };
        let head_maps: Vec<Tensor> = out.head_maps.iter().map(|&m| g.take_value(m)).collect();
        let mcs = mcs(&head_maps, &out.modality_spans, mode)?;
        let prediction = Prediction::from_logits(g.value(out.logits).values(), head_maps);
        let modalities = &self.spec.modalities;
        Ok(Trace {
            prediction,
            mcs,
            embedded: out
                .embedded
                .iter()
                .zip(modalities)
                .zip(&out.domain_spans)
                .map(|((&v, m), s)| TokenSequence {
                    data: g.value(v).clone(),
                    modality: m.clone(),
                    domain_spans: s.clone(),
                })
                .collect(),
            urs: out
                .urs
                .iter()
                .zip(modalities)
                .zip(&out.domain_spans)
                .map(|((&v, m), s)| UnimodalRepresentation {
                    data: g.value(v).clone(),
                    modality: m.clone(),
                    domain_spans: s.clone(),
                })
                .collect(),
            fr_l: FusionRepresentation {
                data: g.value(out.fr_l).clone(),
                modality_spans: out.modality_spans.clone(),
            },
            fr_h: FusionRepresentation {
                data: g.value(out.fr_h).clone(),
                modality_spans: out.modality_spans.clone(),
            },
            intra_maps: maps3(g, &out.intra_maps),
            cross_maps: maps3(g, &out.cross_maps),
        })
    }
}
