//! Tape-based reverse-mode differentiation.
//!
//! Every operation appends a node holding its output value and the
//! information its backward rule needs. Node order is creation order, so
//! the tape is already topologically sorted and [`Graph::backward`] walks it
//! in reverse. Gradients land in each node's [`Tensor`] gradient buffer and
//! accumulate across repeated `backward` calls until [`Graph::zero_grad`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulNt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Mask(Var, Vec<f64>),
    Concat(Vec<Var>, usize),
    MeanPool(Var, usize),
    Transpose(Var),
    SoftmaxRows(Var),
    /// `softmax_rows(scale · q · kᵀ)`
    Attention(Var, Var, f64),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normed: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Conv1d {
        x: Var,
        kernel: Var,
        stride: usize,
        padding: usize,
    },
    SliceCols(Var, usize, usize),
    SliceRows(Var, usize, usize),
    Sum(Var),
    Bce {
        logits: Var,
        target: f64,
        weight: f64,
        prob: f64,
        clamped: bool,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Named range of nodes, used to check which parts of a model executed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Scope {
    pub name: String,
    pub start: usize,
    pub end: usize,
}

pub const BCE_EPS: f64 = 1e-7;

pub struct Graph {
    nodes: Vec<Node>,
    train: bool,
    rng: ChaCha8Rng,
    scopes: Vec<Scope>,
    open_scopes: Vec<(String, usize)>,
}

impl Graph {
    /// A graph in evaluation mode: dropout is the identity.
    pub fn eval() -> Self {
        Graph::new(false, 0)
    }

    pub fn new(train: bool, seed: u64) -> Self {
        Graph {
            nodes: Vec::new(),
            train,
            rng: ChaCha8Rng::seed_from_u64(seed),
            scopes: Vec::new(),
            open_scopes: Vec::new(),
        }
    }

    pub fn is_train(&self) -> bool {
        self.train
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn enter_scope(&mut self, name: impl Into<String>) {
        self.open_scopes.push((name.into(), self.nodes.len()));
    }

    pub fn exit_scope(&mut self) {
        if let Some((name, start)) = self.open_scopes.pop() {
            self.scopes.push(Scope {
                name,
                start,
                end: self.nodes.len(),
            });
        }
    }

    pub fn scopes(&self) -> &[Scope] {
        &self.scopes
    }

    /// Number of nodes recorded inside scopes with the given name.
    pub fn nodes_in_scope(&self, name: &str) -> usize {
        self.scopes
            .iter()
            .filter(|s| s.name == name)
            .map(|s| s.end - s.start)
            .sum()
    }

    /// Leaf that receives gradients.
    pub fn param(&mut self, t: &Tensor) -> Var {
        let mut value = t.clone();
        value.zero_grad();
        value.set_requires_grad(true);
        self.push(value, Op::Leaf)
    }

    /// Leaf that never receives gradients.
    pub fn constant(&mut self, t: &Tensor) -> Var {
        let mut value = t.clone();
        value.set_requires_grad(false);
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Moves a value out of the graph, leaving a one-element placeholder. Only
    /// for graphs that are finished with.
    pub fn take_value(&mut self, v: Var) -> Tensor {
        std::mem::replace(&mut self.nodes[v.0].value, Tensor::zeros(&[1]))
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.value.zero_grad();
        }
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn needs_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].value.requires_grad())
    }

    fn push_derived(&mut self, mut value: Tensor, op: Op, inputs: &[Var]) -> Var {
        value.set_requires_grad(self.needs_grad(inputs));
        self.push(value, op)
    }

    fn matrix_dims(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        let t = self.value(v);
        match t.shape() {
            [r, c] => Ok((*r, *c)),
            s => Err(Error::InvalidShape {
                shape: s.to_vec(),
                reason: format!("{op} expects a matrix"),
            }),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix_dims(a, "matmul")?;
        let (k2, n) = self.matrix_dims(b, "matmul")?;
        if k != k2 {
            return Err(self.mismatch("matmul", a, b));
        }
        let out = matmul_raw(self.value(a).values(), self.value(b).values(), m, k, n);
        Ok(self.push_derived(Tensor::matrix(m, n, out)?, Op::MatMul(a, b), &[a, b]))
    }

    /// `a · bᵀ` without materializing the transpose.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix_dims(a, "matmul_nt")?;
        let (n, k2) = self.matrix_dims(b, "matmul_nt")?;
        if k != k2 {
            return Err(self.mismatch("matmul_nt", a, b));
        }
        let out = matmul_nt_raw(self.value(a).values(), self.value(b).values(), m, k, n);
        Ok(self.push_derived(Tensor::matrix(m, n, out)?, Op::MatMulNt(a, b), &[a, b]))
    }

    fn mismatch(&self, op: &'static str, a: Var, b: Var) -> Error {
        Error::ShapeMismatch {
            op,
            left: self.value(a).shape().to_vec(),
            right: self.value(b).shape().to_vec(),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(self.mismatch("add", a, b));
        }
        let out: Vec<f64> = zip_map(self.value(a).values(), self.value(b).values(), |x, y| x + y);
        let shape = self.value(a).shape().to_vec();
        Ok(self.push_derived(Tensor::new(shape, out)?, Op::Add(a, b), &[a, b]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(self.mismatch("mul", a, b));
        }
        let out: Vec<f64> = zip_map(self.value(a).values(), self.value(b).values(), |x, y| x * y);
        let shape = self.value(a).shape().to_vec();
        Ok(self.push_derived(Tensor::new(shape, out)?, Op::Mul(a, b), &[a, b]))
    }

    /// Adds the vector `b` to every row of the matrix `x`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (r, c) = self.matrix_dims(x, "add_row")?;
        if self.value(b).len() != c {
            return Err(self.mismatch("add_row", x, b));
        }
        let bv = self.value(b).values();
        let mut out = self.value(x).values().to_vec();
        for row in out.chunks_mut(c) {
            row.iter_mut().zip(bv).for_each(|(o, b)| *o += b);
        }
        Ok(self.push_derived(Tensor::matrix(r, c, out)?, Op::AddRow(x, b), &[x, b]))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let t = self.value(x);
        let out = t.values().iter().map(|v| v * s).collect();
        let value = Tensor::new(t.shape().to_vec(), out).expect("same shape");
        self.push_derived(value, Op::Scale(x, s), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let out = t.values().iter().map(|v| v.max(0.0)).collect();
        let value = Tensor::new(t.shape().to_vec(), out).expect("same shape");
        self.push_derived(value, Op::Relu(x), &[x])
    }

    /// Inverted dropout. Returns `x` itself outside training or when `p == 0`.
    pub fn dropout(&mut self, x: Var, p: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!("dropout rate {p} not in [0, 1)")));
        }
        if !self.train || p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let n = self.value(x).len();
        let mask: Vec<f64> = (0..n)
            .map(|_| if self.rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let t = self.value(x);
        let out = zip_map(t.values(), &mask, |a, m| a * m);
        let value = Tensor::new(t.shape().to_vec(), out)?;
        Ok(self.push_derived(value, Op::Mask(x, mask), &[x]))
    }

    /// Concatenates matrices along `axis` (0 = rows, 1 = columns).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of nothing".into()))?;
        let (r0, c0) = self.matrix_dims(first, "concat")?;
        let value = match axis {
            0 => {
                let mut rows = 0;
                let mut out = Vec::new();
                for &p in parts {
                    let (r, c) = self.matrix_dims(p, "concat")?;
                    if c != c0 {
                        return Err(self.mismatch("concat", first, p));
                    }
                    rows += r;
                    out.extend_from_slice(self.value(p).values());
                }
                Tensor::matrix(rows, c0, out)?
            }
            1 => {
                let mut widths = Vec::with_capacity(parts.len());
                for &p in parts {
                    let (r, c) = self.matrix_dims(p, "concat")?;
                    if r != r0 {
                        return Err(self.mismatch("concat", first, p));
                    }
                    widths.push(c);
                }
                let total: usize = widths.iter().sum();
                let mut out = Vec::with_capacity(r0 * total);
                for i in 0..r0 {
                    for (&p, &w) in parts.iter().zip(&widths) {
                        out.extend_from_slice(&self.value(p).values()[i * w..(i + 1) * w]);
                    }
                }
                Tensor::matrix(r0, total, out)?
            }
            _ => return Err(Error::InvalidArgument(format!("concat axis {axis}"))),
        };
        Ok(self.push_derived(value, Op::Concat(parts.to_vec(), axis), parts))
    }

    /// Mean over `axis`; axis 0 gives a `1×c` row, axis 1 an `r×1` column.
    pub fn mean_pool(&mut self, x: Var, axis: usize) -> Result<Var> {
        let (r, c) = self.matrix_dims(x, "mean_pool")?;
        let v = self.value(x).values();
        let value = match axis {
            0 => {
                let mut out = vec![0.0; c];
                for row in v.chunks(c) {
                    out.iter_mut().zip(row).for_each(|(o, x)| *o += x);
                }
                out.iter_mut().for_each(|o| *o /= r as f64);
                Tensor::matrix(1, c, out)?
            }
            1 => {
                let out = v.chunks(c).map(|row| row.iter().sum::<f64>() / c as f64).collect();
                Tensor::matrix(r, 1, out)?
            }
            _ => return Err(Error::InvalidArgument(format!("mean_pool axis {axis}"))),
        };
        Ok(self.push_derived(value, Op::MeanPool(x, axis), &[x]))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.matrix_dims(x, "transpose")?;
        let v = self.value(x).values();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = v[i * c + j];
            }
        }
        Ok(self.push_derived(Tensor::matrix(c, r, out)?, Op::Transpose(x), &[x]))
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.matrix_dims(x, "softmax_rows")?;
        let mut out = self.value(x).values().to_vec();
        softmax_rows_in_place(&mut out, c);
        Ok(self.push_derived(Tensor::matrix(r, c, out)?, Op::SoftmaxRows(x), &[x]))
    }

    /// `softmax_rows(scale · q · kᵀ)` as one node; only the weights are kept.
    pub fn attention_weights(&mut self, q: Var, k: Var, scale: f64) -> Result<Var> {
        let (m, d) = self.matrix_dims(q, "attention_weights")?;
        let (n, d2) = self.matrix_dims(k, "attention_weights")?;
        if d != d2 {
            return Err(self.mismatch("attention_weights", q, k));
        }
        let qs: Vec<f64> = self.value(q).values().iter().map(|v| v * scale).collect();
        let mut out = matmul_nt_raw(&qs, self.value(k).values(), m, d, n);
        softmax_rows_in_place(&mut out, n);
        Ok(self.push_derived(Tensor::matrix(m, n, out)?, Op::Attention(q, k, scale), &[q, k]))
    }

    /// Per-row normalization to zero mean and unit variance, then `gain·x̂ + bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (r, c) = self.matrix_dims(x, "layer_norm")?;
        if self.value(gain).len() != c || self.value(bias).len() != c {
            return Err(self.mismatch("layer_norm", x, gain));
        }
        if eps <= 0.0 {
            return Err(Error::InvalidArgument("layer_norm eps must be positive".into()));
        }
        let v = self.value(x).values();
        let (g, b) = (self.value(gain).values(), self.value(bias).values());
        let mut normed = vec![0.0; r * c];
        let mut inv_std = vec![0.0; r];
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &v[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / c as f64;
            let s = 1.0 / (var + eps).sqrt();
            inv_std[i] = s;
            for j in 0..c {
                let n = (row[j] - mean) * s;
                normed[i * c + j] = n;
                out[i * c + j] = g[j] * n + b[j];
            }
        }
        let op = Op::LayerNorm {
            x,
            gain,
            bias,
            normed,
            inv_std,
        };
        Ok(self.push_derived(Tensor::matrix(r, c, out)?, op, &[x, gain, bias]))
    }

    /// 1-D cross-correlation over the row (time) axis.
    ///
    /// `x` is `l×d_in`, `kernel` is `k×d_in×d_out`; output has
    /// `floor((l + 2·padding − k)/stride) + 1` rows. No kernel flip.
    pub fn conv1d(&mut self, x: Var, kernel: Var, stride: usize, padding: usize) -> Result<Var> {
        let (l, din) = self.matrix_dims(x, "conv1d")?;
        let (k, kin, dout) = match self.value(kernel).shape() {
            [k, i, o] => (*k, *i, *o),
            s => {
                return Err(Error::InvalidShape {
                    shape: s.to_vec(),
                    reason: "conv1d kernel must be k×d_in×d_out".into(),
                })
            }
        };
        if kin != din {
            return Err(self.mismatch("conv1d", x, kernel));
        }
        if stride == 0 {
            return Err(Error::InvalidArgument("conv1d stride must be ≥ 1".into()));
        }
        let padded = l + 2 * padding;
        if k > padded {
            return Err(Error::KernelTooLarge { kernel: k, padded });
        }
        let lout = (padded - k) / stride + 1;
        let xv = self.value(x).values();
        let kv = self.value(kernel).values();
        let mut out = vec![0.0; lout * dout];
        for t in 0..lout {
            let orow = &mut out[t * dout..(t + 1) * dout];
            for j in 0..k {
                let Some(src) = (t * stride + j).checked_sub(padding).filter(|&s| s < l) else {
                    continue;
                };
                let xrow = &xv[src * din..(src + 1) * din];
                for (c, &xc) in xrow.iter().enumerate() {
                    let krow = &kv[(j * din + c) * dout..(j * din + c + 1) * dout];
                    axpy(orow, xc, krow);
                }
            }
        }
        let op = Op::Conv1d {
            x,
            kernel,
            stride,
            padding,
        };
        Ok(self.push_derived(Tensor::matrix(lout, dout, out)?, op, &[x, kernel]))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (r, c) = self.matrix_dims(x, "slice_cols")?;
        if start >= end || end > c {
            return Err(Error::InvalidArgument(format!("column slice {start}..{end} of {c}")));
        }
        let v = self.value(x).values();
        let w = end - start;
        let mut out = Vec::with_capacity(r * w);
        for i in 0..r {
            out.extend_from_slice(&v[i * c + start..i * c + end]);
        }
        Ok(self.push_derived(Tensor::matrix(r, w, out)?, Op::SliceCols(x, start, end), &[x]))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let value = self.value(x).slice_rows(start, end)?;
        Ok(self.push_derived(value, Op::SliceRows(x, start, end), &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).values().iter().sum();
        let value = Tensor::new(vec![1], vec![s]).expect("scalar");
        self.push_derived(value, Op::Sum(x), &[x])
    }

    /// `weight · BCE(target, softmax(logits)[1])` for a two-class logit vector.
    ///
    /// The positive-class probability is clamped to `[BCE_EPS, 1 − BCE_EPS]`;
    /// inside the clamp the gradient is `weight·(p − y)` on the positive logit
    /// and its negation on the negative one, outside it is zero.
    pub fn bce_with_logits(&mut self, logits: Var, target: f64, weight: f64) -> Result<Var> {
        let z = self.value(logits).values();
        if z.len() != 2 {
            return Err(Error::InvalidShape {
                shape: self.value(logits).shape().to_vec(),
                reason: "expected two logits".into(),
            });
        }
        let prob = positive_probability(z[0], z[1]);
        let clamped_p = prob.clamp(BCE_EPS, 1.0 - BCE_EPS);
        let clamped = clamped_p != prob;
        let loss = -(target * clamped_p.ln() + (1.0 - target) * (1.0 - clamped_p).ln());
        let value = Tensor::new(vec![1], vec![weight * loss])?;
        let op = Op::Bce {
            logits,
            target,
            weight,
            prob,
            clamped,
        };
        Ok(self.push_derived(value, op, &[logits]))
    }

    /// Reverse pass from the scalar `loss`, adding into every gradient buffer.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::InvalidShape {
                shape: self.value(loss).shape().to_vec(),
                reason: "backward needs a scalar".into(),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].value.requires_grad() {
                continue;
            }
            self.propagate(i, &g, &mut grads);
            self.nodes[i].value.accumulate_grad(&g);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let shape = node.value.shape();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = dims2(self.value(*a));
                let n = shape[1];
                if self.wants(*a) {
                    let da = matmul_nt_raw(g, self.value(*b).values(), m, n, k);
                    add_into(self.slot(grads, *a), &da);
                }
                if self.wants(*b) {
                    let at = transpose(self.value(*a).values(), m, k);
                    let db = matmul_raw(&at, g, k, m, n);
                    add_into(self.slot(grads, *b), &db);
                }
            }
            Op::MatMulNt(a, b) => {
                let (m, k) = dims2(self.value(*a));
                let n = shape[1];
                if self.wants(*a) {
                    let da = matmul_raw(g, self.value(*b).values(), m, n, k);
                    add_into(self.slot(grads, *a), &da);
                }
                if self.wants(*b) {
                    let db = matmul_raw(&transpose(g, m, n), self.value(*a).values(), n, m, k);
                    add_into(self.slot(grads, *b), &db);
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.wants(v) {
                        add_into(self.slot(grads, v), g);
                    }
                }
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    let bv = self.value(*b).values();
                    let da = self.slot(grads, *a);
                    for j in 0..g.len() {
                        da[j] += g[j] * bv[j];
                    }
                }
                if self.wants(*b) {
                    let av = self.value(*a).values();
                    let db = self.slot(grads, *b);
                    for j in 0..g.len() {
                        db[j] += g[j] * av[j];
                    }
                }
            }
            Op::AddRow(x, b) => {
                if self.wants(*x) {
                    add_into(self.slot(grads, *x), g);
                }
                if self.wants(*b) {
                    let c = shape[1];
                    let db = self.slot(grads, *b);
                    for row in g.chunks(c) {
                        add_into(db, row);
                    }
                }
            }
            Op::Scale(x, s) => {
                if self.wants(*x) {
                    axpy(self.slot(grads, *x), *s, g);
                }
            }
            Op::Relu(x) => {
                if self.wants(*x) {
                    let xv = self.value(*x).values();
                    let dx = self.slot(grads, *x);
                    for j in 0..g.len() {
                        if xv[j] > 0.0 {
                            dx[j] += g[j];
                        }
                    }
                }
            }
            Op::Mask(x, mask) => {
                if self.wants(*x) {
                    let dx = self.slot(grads, *x);
                    for j in 0..g.len() {
                        dx[j] += g[j] * mask[j];
                    }
                }
            }
            Op::Concat(parts, axis) => {
                let total_cols = shape[1];
                let mut offset = 0;
                for &p in parts {
                    let (r, c) = dims2(self.value(p));
                    if self.wants(p) {
                        let dp = self.slot(grads, p);
                        if *axis == 0 {
                            add_into(dp, &g[offset * c..(offset + r) * c]);
                        } else {
                            for i in 0..r {
                                let src = &g[i * total_cols + offset..i * total_cols + offset + c];
                                add_into(&mut dp[i * c..(i + 1) * c], src);
                            }
                        }
                    }
                    offset += if *axis == 0 { r } else { c };
                }
            }
            Op::MeanPool(x, axis) => {
                if self.wants(*x) {
                    let (r, c) = dims2(self.value(*x));
                    let dx = self.slot(grads, *x);
                    if *axis == 0 {
                        for row in dx.chunks_mut(c) {
                            axpy(row, 1.0 / r as f64, g);
                        }
                    } else {
                        for (i, row) in dx.chunks_mut(c).enumerate() {
                            let share = g[i] / c as f64;
                            row.iter_mut().for_each(|d| *d += share);
                        }
                    }
                }
            }
            Op::Transpose(x) => {
                if self.wants(*x) {
                    let (r, c) = dims2(self.value(*x));
                    let dx = self.slot(grads, *x);
                    for i in 0..r {
                        for j in 0..c {
                            dx[i * c + j] += g[j * r + i];
                        }
                    }
                }
            }
            Op::SoftmaxRows(x) => {
                if self.wants(*x) {
                    let c = shape[1];
                    let y = node.value.values();
                    let dx = self.slot(grads, *x);
                    for ((yr, gr), dr) in y.chunks(c).zip(g.chunks(c)).zip(dx.chunks_mut(c)) {
                        let inner = dot(yr, gr);
                        for j in 0..c {
                            dr[j] += yr[j] * (gr[j] - inner);
                        }
                    }
                }
            }
            Op::Attention(q, k, scale) => {
                let (m, n) = (shape[0], shape[1]);
                let d = self.value(*q).cols();
                let y = node.value.values();
                let mut ds = vec![0.0; m * n];
                for ((yr, gr), dr) in y.chunks(n).zip(g.chunks(n)).zip(ds.chunks_mut(n)) {
                    let inner = dot(yr, gr);
                    for j in 0..n {
                        dr[j] = scale * yr[j] * (gr[j] - inner);
                    }
                }
                if self.wants(*q) {
                    let dq = matmul_raw(&ds, self.value(*k).values(), m, n, d);
                    add_into(self.slot(grads, *q), &dq);
                }
                if self.wants(*k) {
                    let dk = matmul_raw(&transpose(&ds, m, n), self.value(*q).values(), n, m, d);
                    add_into(self.slot(grads, *k), &dk);
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                normed,
                inv_std,
            } => {
                let c = shape[1];
                let gv = self.value(*gain).values();
                if self.wants(*x) {
                    let dx = self.slot(grads, *x);
                    for (i, row) in dx.chunks_mut(c).enumerate() {
                        let gr = &g[i * c..(i + 1) * c];
                        let nr = &normed[i * c..(i + 1) * c];
                        let mut mean_dn = 0.0;
                        let mut mean_dn_n = 0.0;
                        for j in 0..c {
                            let dn = gr[j] * gv[j];
                            mean_dn += dn;
                            mean_dn_n += dn * nr[j];
                        }
                        mean_dn /= c as f64;
                        mean_dn_n /= c as f64;
                        for j in 0..c {
                            let dn = gr[j] * gv[j];
                            row[j] += inv_std[i] * (dn - mean_dn - nr[j] * mean_dn_n);
                        }
                    }
                }
                if self.wants(*gain) {
                    let dg = self.slot(grads, *gain);
                    for (gr, nr) in g.chunks(c).zip(normed.chunks(c)) {
                        for j in 0..c {
                            dg[j] += gr[j] * nr[j];
                        }
                    }
                }
                if self.wants(*bias) {
                    let db = self.slot(grads, *bias);
                    for gr in g.chunks(c) {
                        add_into(db, gr);
                    }
                }
            }
            Op::Conv1d {
                x,
                kernel,
                stride,
                padding,
            } => {
                let (l, din) = dims2(self.value(*x));
                let kshape = self.value(*kernel).shape();
                let (k, dout) = (kshape[0], kshape[2]);
                let lout = shape[0];
                let source = |t: usize, j: usize| {
                    (t * stride + j).checked_sub(*padding).filter(|&s| s < l)
                };
                if self.wants(*x) {
                    let kv = self.value(*kernel).values();
                    let dx = self.slot(grads, *x);
                    for t in 0..lout {
                        let grow = &g[t * dout..(t + 1) * dout];
                        for j in 0..k {
                            let Some(src) = source(t, j) else { continue };
                            for c in 0..din {
                                let krow = &kv[(j * din + c) * dout..(j * din + c + 1) * dout];
                                dx[src * din + c] += dot(grow, krow);
                            }
                        }
                    }
                }
                if self.wants(*kernel) {
                    let xv = self.value(*x).values();
                    let dk = self.slot(grads, *kernel);
                    for t in 0..lout {
                        let grow = &g[t * dout..(t + 1) * dout];
                        for j in 0..k {
                            let Some(src) = source(t, j) else { continue };
                            for c in 0..din {
                                let off = (j * din + c) * dout;
                                axpy(&mut dk[off..off + dout], xv[src * din + c], grow);
                            }
                        }
                    }
                }
            }
            Op::SliceCols(x, start, end) => {
                if self.wants(*x) {
                    let c = self.value(*x).cols();
                    let w = end - start;
                    let dx = self.slot(grads, *x);
                    for (i, gr) in g.chunks(w).enumerate() {
                        add_into(&mut dx[i * c + start..i * c + end], gr);
                    }
                }
            }
            Op::SliceRows(x, start, end) => {
                if self.wants(*x) {
                    let c = self.value(*x).cols();
                    let dx = self.slot(grads, *x);
                    add_into(&mut dx[start * c..end * c], g);
                }
            }
            Op::Sum(x) => {
                if self.wants(*x) {
                    let dx = self.slot(grads, *x);
                    dx.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::Bce {
                logits,
                target,
                weight,
                prob,
                clamped,
            } => {
                if self.wants(*logits) && !clamped {
                    let d = g[0] * weight * (prob - target);
                    let dz = self.slot(grads, *logits);
                    dz[0] -= d;
                    dz[1] += d;
                }
            }
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].value.requires_grad()
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> &'g mut Vec<f64> {
        let n = self.nodes[v.0].value.len();
        grads[v.0].get_or_insert_with(|| vec![0.0; n])
    }
}

/// `σ(z1 − z0)`, the second entry of a two-way softmax.
pub fn positive_probability(z0: f64, z1: f64) -> f64 {
    let d = z1 - z0;
    if d >= 0.0 {
        1.0 / (1.0 + (-d).exp())
    } else {
        let e = d.exp();
        e / (1.0 + e)
    }
}

pub fn softmax_in_place(row: &mut [f64]) {
    softmax_row(row)
}

#[inline(always)]
fn softmax_row(row: &mut [f64]) {
    let mut lanes = [f64::NEG_INFINITY; 4];
    let chunks = row.chunks_exact(4);
    let mut max = chunks.remainder().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for c in chunks {
        for l in 0..4 {
            lanes[l] = if c[l] > lanes[l] { c[l] } else { lanes[l] };
        }
    }
    max = lanes.iter().copied().fold(max, f64::max);
    for v in row.iter_mut() {
        *v = exp_nonpositive(*v - max);
    }
    let total = sum(row);
    for v in row.iter_mut() {
        *v /= total;
    }
}

/// Row-wise softmax of a row-major buffer with `c` columns.
pub(crate) fn softmax_rows_in_place(x: &mut [f64], c: usize) {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: the feature was detected at runtime.
        unsafe { wide::softmax(x, c) };
        return;
    }
    for row in x.chunks_mut(c.max(1)) {
        softmax_row(row);
    }
}

/// `exp(x)` for `x <= 0`, within a few ulp, flushing to zero below -708.
/// Straight-line arithmetic so that whole rows vectorize.
#[inline(always)]
pub(crate) fn exp_nonpositive(x: f64) -> f64 {
    const SHIFT: f64 = 6755399441055744.0; // 1.5 · 2^52
    const LN2_HI: f64 = 6.931_471_803_691_238_2e-1;
    const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
    // 1/k! for k = 12 down to 0.
    const C: [f64; 13] = [
        2.087_675_698_786_81e-9,
        2.505_210_838_544_172e-8,
        2.755_731_922_398_589e-7,
        2.755_731_922_398_589_3e-6,
        2.480_158_730_158_730_2e-5,
        1.984_126_984_126_984_1e-4,
        1.388_888_888_888_889e-3,
        8.333_333_333_333_333e-3,
        4.166_666_666_666_666_4e-2,
        1.666_666_666_666_666_6e-1,
        0.5,
        1.0,
        1.0,
    ];
    let xc = x.max(-708.0);
    let t = xc * std::f64::consts::LOG2_E + SHIFT;
    let n = t - SHIFT;
    let r = (xc - n * LN2_HI) - n * LN2_LO;
    let mut p = C[0];
    for &c in &C[1..] {
        p = p * r + c;
    }
    let k = (t.to_bits() as i64).wrapping_sub(SHIFT.to_bits() as i64);
    let scale = f64::from_bits((k.wrapping_add(1023) as u64) << 52);
    if x < -708.0 {
        0.0
    } else {
        p * scale
    }
}

#[inline(always)]
fn sum(x: &[f64]) -> f64 {
    let mut acc = [0.0; 8];
    let chunks = x.chunks_exact(8);
    let tail: f64 = chunks.remainder().iter().sum();
    for c in chunks {
        for l in 0..8 {
            acc[l] += c[l];
        }
    }
    let half = [acc[0] + acc[4], acc[1] + acc[5], acc[2] + acc[6], acc[3] + acc[7]];
    (half[0] + half[2]) + (half[1] + half[3]) + tail
}

/// Below this width inner loops run along the shared axis instead.
const NARROW: usize = 32;

fn transpose(x: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut t = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            t[j * r + i] = x[i * c + j];
        }
    }
    t
}

/// `a · bᵀ` for row-major `a: m × k`, `b: n × k`.
pub(crate) fn matmul_nt_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    if k < NARROW {
        return matmul_raw(a, &transpose(b, n, k), m, k, n);
    }
    let mut out = vec![0.0; m * n];
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: the feature was detected at runtime.
        unsafe { wide::nt(a, b, &mut out, k, n) };
        return out;
    }
    nt_rows(a, b, &mut out, k, n);
    out
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    if n < NARROW && k >= NARROW {
        return matmul_nt_raw(a, &transpose(b, k, n), m, k, n);
    }
    let mut out = vec![0.0; m * n];
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: the feature was detected at runtime.
        unsafe { wide::nn(a, b, &mut out, k, n) };
        return out;
    }
    nn_rows(a, b, &mut out, k, n);
    out
}

#[inline(always)]
fn nt_rows(a: &[f64], b: &[f64], out: &mut [f64], k: usize, n: usize) {
    for (ar, orow) in a.chunks_exact(k).zip(out.chunks_exact_mut(n)) {
        for (o, br) in orow.iter_mut().zip(b.chunks_exact(k)) {
            *o = dot(ar, br);
        }
    }
}

#[inline(always)]
fn nn_rows(a: &[f64], b: &[f64], out: &mut [f64], k: usize, n: usize) {
    for (ar, orow) in a.chunks_exact(k).zip(out.chunks_exact_mut(n)) {
        for (&av, br) in ar.iter().zip(b.chunks_exact(n)) {
            if av != 0.0 {
                axpy(orow, av, br);
            }
        }
    }
}

/// The same loops compiled for 256-bit vectors. Operation order is unchanged,
/// so results match the portable path bit for bit.
#[cfg(target_arch = "x86_64")]
mod wide {
    #[target_feature(enable = "avx2")]
    pub(super) unsafe fn nt(a: &[f64], b: &[f64], out: &mut [f64], k: usize, n: usize) {
        super::nt_rows(a, b, out, k, n)
    }

    #[target_feature(enable = "avx2")]
    pub(super) unsafe fn softmax(x: &mut [f64], c: usize) {
        for row in x.chunks_mut(c.max(1)) {
            super::softmax_row(row);
        }
    }

    #[target_feature(enable = "avx2")]
    pub(super) unsafe fn nn(a: &[f64], b: &[f64], out: &mut [f64], k: usize, n: usize) {
        super::nn_rows(a, b, out, k, n)
    }
}

fn dims2(t: &Tensor) -> (usize, usize) {
    (t.shape()[0], t.shape()[1])
}

#[inline(always)]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 8];
    let (ac, bc) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: f64 = ac.remainder().iter().zip(bc.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ac.zip(bc) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let half = [acc[0] + acc[4], acc[1] + acc[5], acc[2] + acc[6], acc[3] + acc[7]];
    (half[0] + half[2]) + (half[1] + half[3]) + tail
}

#[inline(always)]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    y.iter_mut().zip(x).for_each(|(y, x)| *y += a * x);
}

#[inline]
fn add_into(y: &mut [f64], x: &[f64]) {
    y.iter_mut().zip(x).for_each(|(y, x)| *y += x);
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}
