//! Linear, layer-norm, multi-head attention, feed-forward and the two
//! pre-norm transformer blocks built from them.

use rand::Rng;

use super::params::{Forward, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::numerics::{Tensor, Var};

pub const LN_EPS: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        d_out: usize,
        rng: &mut R,
    ) -> Self {
        Linear {
            weight: store.add_uniform(format!("{name}.weight"), &[d_in, d_out], d_in, rng),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[d_out])),
            d_in,
            d_out,
        }
    }

    pub fn forward(&self, f: &mut Forward, x: Var) -> Result<Var> {
        let (w, b) = (f.p(self.weight), f.p(self.bias));
        let y = f.g.matmul(x, w)?;
        f.g.add_row(y, b)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, d: usize) -> Self {
        LayerNorm {
            gain: store.add(format!("{name}.gain"), Tensor::filled(&[d], 1.0)),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[d])),
        }
    }

    pub fn forward(&self, f: &mut Forward, x: Var) -> Result<Var> {
        let (g, b) = (f.p(self.gain), f.p(self.bias));
        f.g.layer_norm(x, g, b, LN_EPS)
    }
}

/// Multi-head scaled dot-product attention.
///
/// Each head projects to `head_dim = ceil(d/heads)` query/key/value columns;
/// heads are concatenated and projected back to `d`.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub heads: usize,
    pub head_dim: usize,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
}

impl MultiHeadAttention {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        d: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if heads == 0 || d == 0 {
            return Err(Error::InvalidArgument("attention needs d ≥ 1 and heads ≥ 1".into()));
        }
        let head_dim = d.div_ceil(heads);
        let inner = heads * head_dim;
        Ok(MultiHeadAttention {
            heads,
            head_dim,
            q: Linear::new(store, &format!("{name}.q"), d, inner, rng),
            k: Linear::new(store, &format!("{name}.k"), d, inner, rng),
            v: Linear::new(store, &format!("{name}.v"), d, inner, rng),
            out: Linear::new(store, &format!("{name}.out"), inner, d, rng),
        })
    }

    /// Queries from `xq` (`l_q × d`), keys and values from `xkv` (`l_k × d`).
    /// Returns the `l_q × d` output and one `l_q × l_k` weight matrix per head
    /// (before dropout).
    pub fn forward(
        &self,
        f: &mut Forward,
        xq: Var,
        xkv: Var,
        dropout: f64,
    ) -> Result<(Var, Vec<Var>)> {
        let q = self.q.forward(f, xq)?;
        let k = self.k.forward(f, xkv)?;
        let v = self.v.forward(f, xkv)?;
        let scale = 1.0 / (self.head_dim as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        let mut maps = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (a, b) = (h * self.head_dim, (h + 1) * self.head_dim);
            let (qh, kh, vh) = (f.g.slice_cols(q, a, b)?, f.g.slice_cols(k, a, b)?, f.g.slice_cols(v, a, b)?);
            let weights = f.g.attention_weights(qh, kh, scale)?;
            maps.push(weights);
            let dropped = f.g.dropout(weights, dropout)?;
            outs.push(f.g.matmul(dropped, vh)?);
        }
        let joined = if outs.len() == 1 { outs[0] } else { f.g.concat(&outs, 1)? };
        Ok((self.out.forward(f, joined)?, maps))
    }
}

/// `d → 4d → d` with ReLU.
#[derive(Clone, Debug)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, d: usize, rng: &mut R) -> Self {
        FeedForward {
            up: Linear::new(store, &format!("{name}.up"), d, 4 * d, rng),
            down: Linear::new(store, &format!("{name}.down"), 4 * d, d, rng),
        }
    }

    pub fn forward(&self, f: &mut Forward, x: Var) -> Result<Var> {
        let h = self.up.forward(f, x)?;
        let h = f.g.relu(h);
        self.down.forward(f, h)
    }
}

/// `x += SA(LN(x)); x += dropout(FF(LN(x)))`
#[derive(Clone, Debug)]
pub struct SelfAttentionBlock {
    pub norm_attn: LayerNorm,
    pub attn: MultiHeadAttention,
    pub norm_ff: LayerNorm,
    pub ff: FeedForward,
}

impl SelfAttentionBlock {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        d: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(SelfAttentionBlock {
            norm_attn: LayerNorm::new(store, &format!("{name}.ln1"), d),
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), d, heads, rng)?,
            norm_ff: LayerNorm::new(store, &format!("{name}.ln2"), d),
            ff: FeedForward::new(store, &format!("{name}.ff"), d, rng),
        })
    }

    pub fn forward(&self, f: &mut Forward, x: Var, dropout: f64) -> Result<(Var, Vec<Var>)> {
        let n = self.norm_attn.forward(f, x)?;
        let (a, maps) = self.attn.forward(f, n, n, dropout)?;
        let x = f.g.add(x, a)?;
        let x = residual_ff(f, &self.norm_ff, &self.ff, x, dropout)?;
        Ok((x, maps))
    }
}

fn residual_ff(f: &mut Forward, norm: &LayerNorm, ff: &FeedForward, x: Var, dropout: f64) -> Result<Var> {
    let n = norm.forward(f, x)?;
    let h = ff.forward(f, n)?;
    let h = f.g.dropout(h, dropout)?;
    f.g.add(x, h)
}

/// `x += CA(LN_q(x), LN_kv(src)); x += dropout(FF(LN(x)))`
#[derive(Clone, Debug)]
pub struct CrossAttentionBlock {
    pub norm_q: LayerNorm,
    pub norm_kv: LayerNorm,
    pub attn: MultiHeadAttention,
    pub norm_ff: LayerNorm,
    pub ff: FeedForward,
}

impl CrossAttentionBlock {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        d: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(CrossAttentionBlock {
            norm_q: LayerNorm::new(store, &format!("{name}.ln_q"), d),
            norm_kv: LayerNorm::new(store, &format!("{name}.ln_kv"), d),
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), d, heads, rng)?,
            norm_ff: LayerNorm::new(store, &format!("{name}.ln2"), d),
            ff: FeedForward::new(store, &format!("{name}.ff"), d, rng),
        })
    }

    pub fn forward(&self, f: &mut Forward, x: Var, src: Var, dropout: f64) -> Result<(Var, Vec<Var>)> {
        let nq = self.norm_q.forward(f, x)?;
        let nkv = self.norm_kv.forward(f, src)?;
        let (a, maps) = self.attn.forward(f, nq, nkv, dropout)?;
        let x = f.g.add(x, a)?;
        let x = residual_ff(f, &self.norm_ff, &self.ff, x, dropout)?;
        Ok((x, maps))
    }

    /// Only the feed-forward residual path, as used when attention contributes nothing.
    pub fn ff_path(&self, f: &mut Forward, x: Var) -> Result<Var> {
        residual_ff(f, &self.norm_ff, &self.ff, x, 0.0)
    }
}
