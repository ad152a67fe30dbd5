//! Low-level fusion by concatenation and per-modality cross-attention
//! against it.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::intra::UnimodalRepresentation;
use super::layers::CrossAttentionBlock;
use super::params::{Forward, ParamStore};
use crate::error::{Error, Result};
use crate::numerics::{Graph, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModalitySpan {
    pub modality: String,
    pub start: usize,
    pub end: usize,
}

/// Spans for consecutive blocks of the given lengths.
pub fn tile_spans<'a>(parts: impl IntoIterator<Item = (&'a str, usize)>) -> Vec<ModalitySpan> {
    let mut start = 0;
    parts
        .into_iter()
        .map(|(m, l)| {
            let s = ModalitySpan {
                modality: m.to_string(),
                start,
                end: start + l,
            };
            start += l;
            s
        })
        .collect()
}

/// `l_f × d` with the row range of each modality.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionRepresentation {
    pub data: Tensor,
    pub modality_spans: Vec<ModalitySpan>,
}

impl FusionRepresentation {
    pub fn len(&self) -> usize {
        self.data.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn slice(&self, modality: &str) -> Result<Tensor> {
        let s = self
            .modality_spans
            .iter()
            .find(|s| s.modality == modality)
            .ok_or_else(|| Error::InvalidArgument(format!("no modality `{modality}`")))?;
        self.data.slice_rows(s.start, s.end)
    }
}

pub fn fuse_low(urs: &[UnimodalRepresentation]) -> Result<FusionRepresentation> {
    let first = urs.first().ok_or(Error::EmptyInput)?;
    for ur in urs {
        if ur.data.cols() != first.data.cols() {
            return Err(Error::ShapeMismatch {
                op: "low-level fusion",
                left: first.data.shape().to_vec(),
                right: ur.data.shape().to_vec(),
            });
        }
    }
    let parts: Vec<&Tensor> = urs.iter().map(|u| &u.data).collect();
    Ok(FusionRepresentation {
        data: Tensor::vstack(&parts)?,
        modality_spans: tile_spans(urs.iter().map(|u| (u.modality.as_str(), u.data.rows()))),
    })
}

#[derive(Clone, Debug)]
pub struct CrossModalTransformer {
    pub modality: String,
    pub d: usize,
    pub blocks: Vec<CrossAttentionBlock>,
}

impl CrossModalTransformer {
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
            .map(|i| CrossAttentionBlock::new(store, &format!("{name}.{i}"), d, heads, rng))
            .collect::<Result<_>>()?;
        Ok(CrossModalTransformer {
            modality: modality.to_string(),
            d,
            blocks,
        })
    }

    /// Every block queries with the running representation and reads keys
    /// and values from the same `fr_l`.
    pub fn forward(
        &self,
        f: &mut Forward,
        ur: Var,
        fr_l: Var,
        dropout: f64,
    ) -> Result<(Var, Vec<Vec<Var>>)> {
        let mut x = ur;
        let mut maps = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (y, m) = b.forward(f, x, fr_l, dropout)?;
            x = y;
            maps.push(m);
        }
        Ok((x, maps))
    }
}

/// Cross-attention of one block with queries from `ur` and keys/values from `fr`.
pub fn cross_attention(
    ur: &Tensor,
    fr: &FusionRepresentation,
    block: &CrossAttentionBlock,
    store: &ParamStore,
) -> Result<(Tensor, Vec<Tensor>)> {
    if ur.cols() != fr.data.cols() {
        return Err(Error::ShapeMismatch {
            op: "cross attention",
            left: ur.shape().to_vec(),
            right: fr.data.shape().to_vec(),
        });
    }
    let mut f = Forward::new(store, Graph::eval());
    let q = f.g.constant(ur);
    let kv = f.g.constant(&fr.data);
    let (y, maps) = block.attn.forward(&mut f, q, kv, 0.0)?;
    Ok((
        f.g.value(y).clone(),
        maps.into_iter().map(|m| f.g.value(m).clone()).collect(),
    ))
}

/// Enhances every unimodal representation against `fr_l` and concatenates
/// the results. Pass `Graph::new(true, seed)` to enable dropout.
pub fn fuse_high(
    urs: &[UnimodalRepresentation],
    fr_l: &FusionRepresentation,
    transformers: &[CrossModalTransformer],
    store: &ParamStore,
    graph: Graph,
    dropout: f64,
) -> Result<FusionRepresentation> {
    if urs.len() != transformers.len() || urs.len() != fr_l.modality_spans.len() {
        return Err(Error::InvalidArgument(format!(
            "{} representations, {} cross-modal transformers, {} fused spans",
            urs.len(),
            transformers.len(),
            fr_l.modality_spans.len()
        )));
    }
    let mut f = Forward::new(store, graph);
    let src = f.g.constant(&fr_l.data);
    let mut outs = Vec::with_capacity(urs.len());
    for (ur, t) in urs.iter().zip(transformers) {
        let x = f.g.constant(&ur.data);
        let (y, _) = t.forward(&mut f, x, src, dropout)?;
        outs.push(f.g.value(y).clone());
    }
    let parts: Vec<&Tensor> = outs.iter().collect();
    Ok(FusionRepresentation {
        data: Tensor::vstack(&parts)?,
        modality_spans: fr_l.modality_spans.clone(),
    })
}
