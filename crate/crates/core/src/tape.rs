//! Reverse-mode automatic differentiation over a linear tape.
//!
//! A [`Tape`] records every value produced during a forward pass. Leaves are
//! either constants or parameters; gradients are only computed for nodes that
//! (transitively) depend on a parameter. [`Tape::backward`] replays the tape in
//! reverse and returns the gradient of a scalar node with respect to every
//! node that requires one.
//!
//! Matrices that flow through models are laid out as `features × batch`:
//! every column is one sample (or one token).

use crate::error::{Error, Result};
use crate::tensor::{matmul_at_into, matmul_bt_into, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Pointwise operations accepted by [`Tape::elementwise`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ElementwiseOp {
    Add,
    Mul,
    Relu,
    GeluTanh,
    /// `max(x, threshold)`; gradient passes only where `x > threshold`.
    ClampMin(f64),
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

pub fn gelu_tanh(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh())
}

fn gelu_tanh_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_K * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x * x)
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Gelu(Var),
    ClampMin(Var, f64),
    RowScale {
        a: Var,
        s: Var,
    },
    AddBias {
        a: Var,
        b: Var,
    },
    Transpose(Var),
    Sum(Var),
    SoftmaxCe {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        n_heads: usize,
        seq_len: usize,
        probs: Vec<f64>,
    },
    MeanPool {
        x: Var,
        group: usize,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Grads {
    grads: Vec<Option<Vec<f64>>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient of `v`, or zeros of length `len` if `v` did not influence the loss.
    pub fn get_or_zeros(&self, v: Var, len: usize) -> Vec<f64> {
        self.get(v).map_or_else(|| vec![0.0; len], <[f64]>::to_vec)
    }
}

fn same_or_scalar(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() == b.shape() || b.len() == 1 || a.len() == 1 {
        Ok(())
    } else {
        Err(Error::dim(op, a.shape(), b.shape()))
    }
}

/// Pairs elements of `a` and `b`, repeating whichever operand is a scalar.
fn zip_broadcast(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let (shape, n) = if a.len() >= b.len() { (a.shape(), a.len()) } else { (b.shape(), b.len()) };
    let ad = a.data();
    let bd = b.data();
    let data = (0..n)
        .map(|i| {
            let x = if ad.len() == 1 { ad[0] } else { ad[i] };
            let y = if bd.len() == 1 { bd[0] } else { bd[i] };
            f(x, y)
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape from operand")
}

/// Reduces a broadcast gradient back onto an operand's shape.
fn unbroadcast(g: Vec<f64>, len: usize) -> Vec<f64> {
    if g.len() == len {
        g
    } else {
        vec![g.iter().sum()]
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        let mut t = t;
        t.grad = None;
        t.requires_grad = false;
        self.push(t, Op::Leaf, false)
    }

    /// A leaf that receives a gradient; the tensor's own gradient state is not copied.
    pub fn param(&mut self, t: &Tensor) -> Var {
        let mut value = t.clone();
        value.grad = None;
        self.push(value, Op::Leaf, true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    pub fn elementwise(&mut self, op: ElementwiseOp, args: &[Var]) -> Result<Var> {
        let arity = match op {
            ElementwiseOp::Add | ElementwiseOp::Mul => 2,
            _ => 1,
        };
        if args.len() != arity {
            return Err(Error::Input(format!("{op:?} takes {arity} operand(s), got {}", args.len())));
        }
        match op {
            ElementwiseOp::Add => self.add(args[0], args[1]),
            ElementwiseOp::Mul => self.mul(args[0], args[1]),
            ElementwiseOp::Relu => Ok(self.relu(args[0])),
            ElementwiseOp::GeluTanh => Ok(self.gelu(args[0])),
            ElementwiseOp::ClampMin(t) => Ok(self.clamp_min(args[0], t)),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_or_scalar("add", self.value(a), self.value(b))?;
        let out = zip_broadcast(self.value(a), self.value(b), |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_or_scalar("mul", self.value(a), self.value(b))?;
        let out = zip_broadcast(self.value(a), self.value(b), |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x * c);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, c), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0));
        let rg = self.rg(a);
        self.push(out, Op::Relu(a), rg)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(gelu_tanh);
        let rg = self.rg(a);
        self.push(out, Op::Gelu(a), rg)
    }

    pub fn clamp_min(&mut self, a: Var, threshold: f64) -> Var {
        let out = self.value(a).map(|x| x.max(threshold));
        let rg = self.rg(a);
        self.push(out, Op::ClampMin(a, threshold), rg)
    }

    /// `diag(s) · a` for `a: r×B`, `s: r`.
    pub fn row_scale(&mut self, a: Var, s: Var) -> Result<Var> {
        let (av, sv) = (self.value(a), self.value(s));
        if !av.is_matrix() || sv.len() != av.rows() {
            return Err(Error::dim("row_scale", av.shape(), sv.shape()));
        }
        let cols = av.cols();
        let data = av
            .data()
            .chunks(cols)
            .zip(sv.data())
            .flat_map(|(row, &si)| row.iter().map(move |x| x * si))
            .collect();
        let out = Tensor::new(av.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(s);
        Ok(self.push(out, Op::RowScale { a, s }, rg))
    }

    /// `a + b·1ᵀ` for `a: m×B`, `b: m`.
    pub fn add_bias(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if !av.is_matrix() || bv.len() != av.rows() {
            return Err(Error::dim("add_bias", av.shape(), bv.shape()));
        }
        let cols = av.cols();
        let data = av
            .data()
            .chunks(cols)
            .zip(bv.data())
            .flat_map(|(row, &bi)| row.iter().map(move |x| x + bi))
            .collect();
        let out = Tensor::new(av.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::AddBias { a, b }, rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose()?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::Transpose(a), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    /// Mean cross-entropy of `logits: B×C` against class indices.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        if !lv.is_matrix() || lv.rows() != labels.len() {
            return Err(Error::dim("softmax_cross_entropy", lv.shape(), &[labels.len()]));
        }
        let (b, c) = (lv.rows(), lv.cols());
        if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
            return Err(Error::Index {
                what: "class label",
                index: bad,
                len: c,
            });
        }
        let mut probs = vec![0.0; b * c];
        let mut loss = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            let row = lv.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|x| (x - max).exp()).sum();
            let log_z = z.ln() + max;
            loss += log_z - row[y];
            for (p, x) in probs[i * c..(i + 1) * c].iter_mut().zip(row) {
                *p = (x - log_z).exp();
            }
        }
        loss /= b as f64;
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCe {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Normalizes every column of `x: d×N` to zero mean and unit variance,
    /// then applies per-feature `gain` and `bias` (both length `d`).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let xv = self.value(x);
        let (d, n) = (xv.rows(), xv.cols());
        if !xv.is_matrix() || self.value(gain).len() != d || self.value(bias).len() != d {
            return Err(Error::dim("layer_norm", xv.shape(), self.value(gain).shape()));
        }
        let g = self.value(gain).data();
        let bb = self.value(bias).data();
        let xd = xv.data();
        let mut xhat = vec![0.0; d * n];
        let mut inv_std = vec![0.0; n];
        let mut out = vec![0.0; d * n];
        for j in 0..n {
            let mean = (0..d).map(|i| xd[i * n + j]).sum::<f64>() / d as f64;
            let var = (0..d).map(|i| (xd[i * n + j] - mean).powi(2)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[j] = is;
            for i in 0..d {
                let h = (xd[i * n + j] - mean) * is;
                xhat[i * n + j] = h;
                out[i * n + j] = g[i] * h + bb[i];
            }
        }
        let out = Tensor::matrix(d, n, out)?;
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        Ok(self.push(out, Op::LayerNorm { x, gain, bias, xhat, inv_std }, rg))
    }

    /// Multi-head scaled dot-product self-attention.
    ///
    /// `q`, `k`, `v` are `d × (seq_len·B)`; columns `b·seq_len .. (b+1)·seq_len`
    /// hold the tokens of sample `b`. Head `h` uses feature rows
    /// `h·d/n_heads .. (h+1)·d/n_heads`. Attention never crosses samples.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, n_heads: usize, seq_len: usize) -> Result<Var> {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        if qv.shape() != kv.shape() || qv.shape() != vv.shape() || !qv.is_matrix() {
            return Err(Error::dim("attention", qv.shape(), kv.shape()));
        }
        let (d, n) = (qv.rows(), qv.cols());
        if n_heads == 0 || d % n_heads != 0 || seq_len == 0 || n % seq_len != 0 {
            return Err(Error::Input(format!("attention: d={d}, n_heads={n_heads}, columns={n}, seq_len={seq_len}")));
        }
        let dh = d / n_heads;
        let t = seq_len;
        let batch = n / t;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qd, kd, vd) = (qv.data(), kv.data(), vv.data());
        let mut probs = vec![0.0; batch * n_heads * t * t];
        let mut out = vec![0.0; d * n];
        for b in 0..batch {
            for h in 0..n_heads {
                let p = &mut probs[(b * n_heads + h) * t * t..(b * n_heads + h + 1) * t * t];
                for i in 0..t {
                    let qi = b * t + i;
                    let row = &mut p[i * t..(i + 1) * t];
                    for (j, s) in row.iter_mut().enumerate() {
                        let kj = b * t + j;
                        *s = (h * dh..(h + 1) * dh).map(|r| qd[r * n + qi] * kd[r * n + kj]).sum::<f64>() * scale;
                    }
                    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let mut z = 0.0;
                    for s in row.iter_mut() {
                        *s = (*s - max).exp();
                        z += *s;
                    }
                    for s in row.iter_mut() {
                        *s /= z;
                    }
                    for r in h * dh..(h + 1) * dh {
                        out[r * n + qi] = (0..t).map(|j| row[j] * vd[r * n + b * t + j]).sum();
                    }
                }
            }
        }
        let out = Tensor::matrix(d, n, out)?;
        let rg = self.rg(q) || self.rg(k) || self.rg(v);
        Ok(self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                n_heads,
                seq_len,
                probs,
            },
            rg,
        ))
    }

    /// Averages consecutive groups of `group` columns: `d × (group·B) → d × B`.
    pub fn mean_pool(&mut self, x: Var, group: usize) -> Result<Var> {
        let xv = self.value(x);
        if !xv.is_matrix() || group == 0 || !xv.cols().is_multiple_of(group) {
            return Err(Error::dim("mean_pool", xv.shape(), &[group]));
        }
        let (d, n) = (xv.rows(), xv.cols());
        let b = n / group;
        let xd = xv.data();
        let mut out = vec![0.0; d * b];
        for i in 0..d {
            for s in 0..b {
                out[i * b + s] = xd[i * n + s * group..i * n + (s + 1) * group].iter().sum::<f64>() / group as f64;
            }
        }
        let out = Tensor::matrix(d, b, out)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::MeanPool { x, group }, rg))
    }

    /// Gradients of the scalar `loss` with respect to every node that needs one.
    pub fn backward(&self, loss: Var) -> Result<Grads> {
        self.backward_scaled(loss, 1.0)
    }

    /// Like [`backward`](Self::backward) with the seed gradient set to `seed`.
    pub fn backward_scaled(&self, loss: Var, seed: f64) -> Result<Grads> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::dim("backward", lv.shape(), &[1]));
        }
        if !lv.data()[0].is_finite() {
            return Err(Error::Numeric(format!("non-finite loss {}", lv.data()[0])));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![seed]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Grads { grads })
    }

    fn backprop_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let mut acc = |v: Var, delta: Vec<f64>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.iter_mut().zip(&delta).for_each(|(e, d)| *e += d),
                slot @ None => *slot = Some(delta),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                if self.rg(*a) {
                    let mut ga = vec![0.0; m * k];
                    matmul_bt_into(g, bv.data(), &mut ga, m, n, k);
                    acc(*a, ga);
                }
                if self.rg(*b) {
                    let mut gb = vec![0.0; k * n];
                    matmul_at_into(av.data(), g, &mut gb, k, m, n);
                    acc(*b, gb);
                }
            }
            Op::Add(a, b) => {
                let (la, lb) = (self.value(*a).len(), self.value(*b).len());
                acc(*a, unbroadcast(g.to_vec(), la));
                acc(*b, unbroadcast(g.to_vec(), lb));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let pick = |t: &Tensor, i: usize| if t.len() == 1 { t.data()[0] } else { t.data()[i] };
                if self.rg(*a) {
                    let ga = g.iter().enumerate().map(|(i, gi)| gi * pick(bv, i)).collect();
                    acc(*a, unbroadcast(ga, av.len()));
                }
                if self.rg(*b) {
                    let gb = g.iter().enumerate().map(|(i, gi)| gi * pick(av, i)).collect();
                    acc(*b, unbroadcast(gb, bv.len()));
                }
            }
            Op::Scale(a, c) => acc(*a, g.iter().map(|x| x * c).collect()),
            Op::Relu(a) => {
                let x = self.value(*a).data();
                acc(*a, g.iter().zip(x).map(|(gi, &xi)| if xi > 0.0 { *gi } else { 0.0 }).collect());
            }
            Op::Gelu(a) => {
                let x = self.value(*a).data();
                acc(*a, g.iter().zip(x).map(|(gi, &xi)| gi * gelu_tanh_grad(xi)).collect());
            }
            Op::ClampMin(a, t) => {
                let x = self.value(*a).data();
                acc(*a, g.iter().zip(x).map(|(gi, &xi)| if xi > *t { *gi } else { 0.0 }).collect());
            }
            Op::RowScale { a, s } => {
                let (av, sv) = (self.value(*a), self.value(*s));
                let cols = av.cols();
                if self.rg(*a) {
                    let ga = g.chunks(cols).zip(sv.data()).flat_map(|(row, &si)| row.iter().map(move |x| x * si)).collect();
                    acc(*a, ga);
                }
                if self.rg(*s) {
                    let gs = g
                        .chunks(cols)
                        .zip(av.data().chunks(cols))
                        .map(|(gr, ar)| gr.iter().zip(ar).map(|(x, y)| x * y).sum())
                        .collect();
                    acc(*s, gs);
                }
            }
            Op::AddBias { a, b } => {
                let cols = self.value(*a).cols();
                acc(*a, g.to_vec());
                if self.rg(*b) {
                    acc(*b, g.chunks(cols).map(|r| r.iter().sum()).collect());
                }
            }
            Op::Transpose(a) => {
                let (m, n) = (node.value.rows(), node.value.cols());
                let gt = Tensor::matrix(m, n, g.to_vec()).and_then(|t| t.transpose());
                acc(*a, gt.expect("shape recorded on tape").into_data());
            }
            Op::Sum(a) => {
                let n = self.value(*a).len();
                acc(*a, vec![g[0]; n]);
            }
            Op::SoftmaxCe { logits, labels, probs } => {
                let c = self.value(*logits).cols();
                let b = labels.len() as f64;
                let mut gl = probs.clone();
                for (i, &y) in labels.iter().enumerate() {
                    gl[i * c + y] -= 1.0;
                }
                let scale = g[0] / b;
                gl.iter_mut().for_each(|v| *v *= scale);
                acc(*logits, gl);
            }
            Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                let (d, n) = (node.value.rows(), node.value.cols());
                let gd = self.value(*gain).data();
                if self.rg(*x) {
                    let mut gx = vec![0.0; d * n];
                    for j in 0..n {
                        let mut mean_dh = 0.0;
                        let mut mean_dh_h = 0.0;
                        for i in 0..d {
                            let dh = g[i * n + j] * gd[i];
                            mean_dh += dh;
                            mean_dh_h += dh * xhat[i * n + j];
                        }
                        mean_dh /= d as f64;
                        mean_dh_h /= d as f64;
                        for i in 0..d {
                            let dh = g[i * n + j] * gd[i];
                            gx[i * n + j] = inv_std[j] * (dh - mean_dh - xhat[i * n + j] * mean_dh_h);
                        }
                    }
                    acc(*x, gx);
                }
                if self.rg(*gain) {
                    let gg = (0..d).map(|i| (0..n).map(|j| g[i * n + j] * xhat[i * n + j]).sum()).collect();
                    acc(*gain, gg);
                }
                if self.rg(*bias) {
                    acc(*bias, g.chunks(n).map(|r| r.iter().sum()).collect());
                }
            }
            Op::Attention {
                q,
                k,
                v,
                n_heads,
                seq_len,
                probs,
            } => {
                let (qd, kd, vd) = (self.value(*q).data(), self.value(*k).data(), self.value(*v).data());
                let (d, n) = (node.value.rows(), node.value.cols());
                let (h_count, t) = (*n_heads, *seq_len);
                let dh = d / h_count;
                let scale = 1.0 / (dh as f64).sqrt();
                let mut gq = vec![0.0; d * n];
                let mut gk = vec![0.0; d * n];
                let mut gv = vec![0.0; d * n];
                let mut dp = vec![0.0; t];
                for b in 0..n / t {
                    for h in 0..h_count {
                        let p = &probs[(b * h_count + h) * t * t..(b * h_count + h + 1) * t * t];
                        let rows = h * dh..(h + 1) * dh;
                        for i in 0..t {
                            let qi = b * t + i;
                            for j in 0..t {
                                let kj = b * t + j;
                                let pij = p[i * t + j];
                                let mut dot = 0.0;
                                for r in rows.clone() {
                                    gv[r * n + kj] += pij * g[r * n + qi];
                                    dot += g[r * n + qi] * vd[r * n + kj];
                                }
                                dp[j] = dot;
                            }
                            let inner: f64 = (0..t).map(|j| p[i * t + j] * dp[j]).sum();
                            for j in 0..t {
                                let ds = p[i * t + j] * (dp[j] - inner) * scale;
                                if ds == 0.0 {
                                    continue;
                                }
                                let kj = b * t + j;
                                for r in rows.clone() {
                                    gq[r * n + qi] += ds * kd[r * n + kj];
                                    gk[r * n + kj] += ds * qd[r * n + qi];
                                }
                            }
                        }
                    }
                }
                acc(*q, gq);
                acc(*k, gk);
                acc(*v, gv);
            }
            Op::MeanPool { x, group } => {
                let (d, b) = (node.value.rows(), node.value.cols());
                let n = b * group;
                let mut gx = vec![0.0; d * n];
                for i in 0..d {
                    for s in 0..b {
                        let share = g[i * b + s] / *group as f64;
                        gx[i * n + s * group..i * n + (s + 1) * group].iter_mut().for_each(|v| *v = share);
                    }
                }
                acc(*x, gx);
            }
        }
    }
}
