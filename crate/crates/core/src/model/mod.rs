//! Network components and the assembled classifier.

pub mod embedding;
pub mod inter;
pub mod intra;
pub mod layers;
pub mod network;
pub mod params;
pub mod prediction;

pub use embedding::{embed_modality, pe_table, DomainSpan, TemporalConvLayer, TokenSequence};
pub use inter::{
    cross_attention, fuse_high, fuse_low, CrossModalTransformer, FusionRepresentation, ModalitySpan,
};
pub use intra::{forward_intra, self_attention, IntraModalTransformer, UnimodalRepresentation};
pub use layers::{
    CrossAttentionBlock, FeedForward, LayerNorm, Linear, MultiHeadAttention, SelfAttentionBlock,
};
pub use network::{AblationMode, AudFormer, ForwardOutput, NetworkSpec, Trace};
pub use params::{Forward, ParamId, ParamStore};
pub use prediction::{bce_loss, mcs, predict, McsMode, McsReport, Prediction, PredictionHead};

/// Finite differences over every parameter of a store.
#[cfg(test)]
pub(crate) mod fd {
    use super::{Forward, ParamStore};
    use crate::numerics::gradcheck::rel_err;
    use crate::numerics::{Graph, Tensor, Var};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// `sum(out ⊙ R)` for a fixed random `R`.
    pub fn projected(f: &mut Forward, out: Var, seed: u64) -> Var {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = f.g.value(out).shape().to_vec();
        let n = f.g.value(out).len();
        let w = Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let w = f.g.constant(&w);
        let p = f.g.mul(out, w).unwrap();
        f.g.sum(p)
    }

    /// Worst per-tensor relative error between tape and central differences.
    pub fn check_params(store: &ParamStore, loss: impl Fn(&mut Forward) -> Var) -> f64 {
        let h = 1e-5;
        let value = |s: &ParamStore| {
            let mut f = Forward::new(s, Graph::eval());
            let l = loss(&mut f);
            f.g.value(l).values()[0]
        };
        let mut f = Forward::new(store, Graph::eval());
        let l = loss(&mut f);
        f.g.backward(l).unwrap();
        let analytic = f.param_grads();
        let mut worst: f64 = 0.0;
        let mut probe = store.clone();
        for id in store.ids() {
            let n = store.get(id).len();
            let mut numeric = vec![0.0; n];
            for (i, slot) in numeric.iter_mut().enumerate() {
                let orig = store.get(id).values()[i];
                probe.get_mut(id).values_mut()[i] = orig + h;
                let up = value(&probe);
                probe.get_mut(id).values_mut()[i] = orig - h;
                let down = value(&probe);
                probe.get_mut(id).values_mut()[i] = orig;
                *slot = (up - down) / (2.0 * h);
            }
            let tape = analytic[id.index()].clone().unwrap_or_else(|| vec![0.0; n]);
            worst = worst.max(rel_err(&tape, &numeric));
        }
        worst
    }
}
