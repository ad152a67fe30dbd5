//! Per-domain temporal convolution into a shared width, sequence-axis
//! concatenation, and sinusoidal positions. Token content is scaled by
//! `sqrt(d_tc)` so the unit-amplitude position table does not swamp it.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{Forward, ParamId, ParamStore};
use crate::dsp::{Domain, ModalityFeatureSet};
use crate::error::{Error, Result};
use crate::numerics::{Graph, Tensor, Var};

/// `PE[p, 2i] = sin(p / 10000^(2i/d))`, `PE[p, 2i+1] = cos(p / 10000^(2i/d))`.
pub fn pe_table(l: usize, d: usize) -> Tensor {
    let mut values = Vec::with_capacity(l * d);
    for p in 0..l {
        for c in 0..d {
            let i2 = (c - c % 2) as f64;
            let angle = p as f64 / 10_000f64.powf(i2 / d as f64);
            values.push(if c % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    Tensor::matrix(l.max(1), d.max(1), values).unwrap_or_else(|_| Tensor::zeros(&[l, d]))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainSpan {
    pub domain: Domain,
    pub start: usize,
    pub end: usize,
}

/// Embedded tokens of one modality, `l_m × d_tc`.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenSequence {
    pub data: Tensor,
    pub modality: String,
    pub domain_spans: Vec<DomainSpan>,
}

#[derive(Clone, Debug)]
pub struct TemporalConvLayer {
    /// One `k × d_domain × d_tc` kernel per domain, in [`Domain::ALL`] order.
    pub kernels: Vec<ParamId>,
    pub kernel_sizes: Vec<usize>,
    pub domain_dims: Vec<usize>,
    pub d_tc: usize,
    pub max_tokens: usize,
}

/// Graph handles for one embedded modality.
#[derive(Clone, Debug)]
pub struct Embedded {
    /// Convolution outputs concatenated and scaled by `sqrt(d_tc)`, before
    /// positions are added.
    pub conv: Var,
    pub tokens: Var,
    pub spans: Vec<DomainSpan>,
}

impl TemporalConvLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        domain_dims: &[usize],
        d_tc: usize,
        scalar_kernel: usize,
        spectral_kernel: usize,
        max_tokens: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if domain_dims.len() != Domain::ALL.len() {
            return Err(Error::InvalidArgument(format!(
                "need {} domain widths, got {}",
                Domain::ALL.len(),
                domain_dims.len()
            )));
        }
        if scalar_kernel == 0 || spectral_kernel == 0 || max_tokens == 0 || d_tc == 0 {
            return Err(Error::InvalidArgument(
                "kernel sizes, token cap and d_tc must be positive".into(),
            ));
        }
        let mut kernels = Vec::new();
        let mut kernel_sizes = Vec::new();
        for (&d, &dim) in Domain::ALL.iter().zip(domain_dims) {
            let k = if d.is_scalar() { scalar_kernel } else { spectral_kernel };
            kernels.push(store.add_uniform(
                format!("{name}.{}", d.name().to_ascii_lowercase()),
                &[k, dim, d_tc],
                k * dim,
                rng,
            ));
            kernel_sizes.push(k);
        }
        Ok(TemporalConvLayer {
            kernels,
            kernel_sizes,
            domain_dims: domain_dims.to_vec(),
            d_tc,
            max_tokens,
        })
    }

    pub fn padding(&self, domain: Domain) -> usize {
        (self.kernel_sizes[domain.index()] - 1) / 2
    }

    /// Smallest stride that keeps a domain of `frames` rows within the token cap.
    pub fn stride(&self, domain: Domain, frames: usize) -> usize {
        let k = self.kernel_sizes[domain.index()];
        let span = (frames + 2 * self.padding(domain)).saturating_sub(k);
        span / self.max_tokens + 1
    }

    pub fn tokens_for(&self, domain: Domain, frames: usize) -> usize {
        let k = self.kernel_sizes[domain.index()];
        let padded = frames + 2 * self.padding(domain);
        if padded < k {
            return 0;
        }
        (padded - k) / self.stride(domain, frames) + 1
    }

    pub fn forward(&self, f: &mut Forward, fs: &ModalityFeatureSet) -> Result<Embedded> {
        let mut parts = Vec::with_capacity(Domain::ALL.len());
        let mut spans = Vec::with_capacity(Domain::ALL.len());
        let mut start = 0;
        for m in fs.iter() {
            let i = m.domain.index();
            let tag = |e: Error| e.in_domain(m.domain.name());
            if m.data.cols() != self.domain_dims[i] {
                return Err(Error::ShapeMismatch {
                    op: "temporal convolution",
                    left: m.data.shape().to_vec(),
                    right: vec![self.kernel_sizes[i], self.domain_dims[i], self.d_tc],
                }
                .in_domain(m.domain.name()));
            }
            let x = f.g.constant(&m.data);
            let kernel = f.p(self.kernels[i]);
            let stride = self.stride(m.domain, m.data.rows());
            let y = f.g.conv1d(x, kernel, stride, self.padding(m.domain)).map_err(tag)?;
            let n = f.g.value(y).rows();
            spans.push(DomainSpan {
                domain: m.domain,
                start,
                end: start + n,
            });
            start += n;
            parts.push(y);
        }
        let conv = f.g.concat(&parts, 0)?;
        let conv = f.g.scale(conv, (self.d_tc as f64).sqrt());
        let pe = f.g.constant(&pe_table(start, self.d_tc));
        let tokens = f.g.add(conv, pe)?;
        Ok(Embedded { conv, tokens, spans })
    }
}

/// Eval-mode embedding of one modality.
pub fn embed_modality(
    fs: &ModalityFeatureSet,
    layer: &TemporalConvLayer,
    store: &ParamStore,
    modality: &str,
) -> Result<TokenSequence> {
    let mut f = Forward::new(store, Graph::eval());
    let e = layer.forward(&mut f, fs)?;
    Ok(TokenSequence {
        data: f.g.value(e.tokens).clone(),
        modality: modality.to_string(),
        domain_spans: e.spans,
    })
}
