//! Dense tensors and a small reverse-mode differentiation tape.

pub mod container;
mod graph;
mod tensor;

pub use graph::{positive_probability, softmax_in_place, Graph, Scope, Var, BCE_EPS};
pub use tensor::Tensor;

/// Central finite differences against the tape, for unit tests.
#[cfg(test)]
pub(crate) mod gradcheck {
    use super::{Graph, Tensor, Var};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub fn random(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::uniform(shape, 1.0, &mut rng)
    }

    pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        // A gradient that vanishes identically (key bias under softmax) must
        // show only rounding-level differences on the other side.
        if na < 1e-12 {
            return if nb <= 1e-8 { 0.0 } else { 1.0 };
        }
        diff / na.max(nb)
    }

    /// Builds `sum(op(inputs) ⊙ R)` for a fixed random `R` and returns the
    /// worst relative error between tape and numerical gradients.
    pub fn check(inputs: &[Tensor], seed: u64, op: impl Fn(&mut Graph, &[Var]) -> Var) -> f64 {
        let h = 1e-5;
        let loss = |inputs: &[Tensor], grads: bool| -> (f64, Vec<Vec<f64>>) {
            let mut g = Graph::eval();
            let vars: Vec<Var> = inputs.iter().map(|t| g.param(t)).collect();
            let out = op(&mut g, &vars);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
            let shape = g.value(out).shape().to_vec();
            let n = g.value(out).len();
            let w = Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
                .unwrap();
            let w = g.constant(&w);
            let prod = g.mul(out, w).unwrap();
            let l = g.sum(prod);
            let value = g.value(l).values()[0];
            if !grads {
                return (value, Vec::new());
            }
            g.backward(l).unwrap();
            let gs = vars
                .iter()
                .map(|&v| g.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; g.value(v).len()]))
                .collect();
            (value, gs)
        };
        let (_, analytic) = loss(inputs, true);
        let mut worst: f64 = 0.0;
        for (which, t) in inputs.iter().enumerate() {
            let mut numeric = vec![0.0; t.len()];
            for j in 0..t.len() {
                let mut plus = inputs.to_vec();
                plus[which].values_mut()[j] += h;
                let mut minus = inputs.to_vec();
                minus[which].values_mut()[j] -= h;
                numeric[j] = (loss(&plus, false).0 - loss(&minus, false).0) / (2.0 * h);
            }
            worst = worst.max(rel_err(&analytic[which], &numeric));
        }
        worst
    }
}
