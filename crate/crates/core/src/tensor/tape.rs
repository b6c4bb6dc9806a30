//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every operation in execution order, so node order is
//! already a topological order and [`Tape::backward`] is a single reverse
//! sweep. Leaves created with [`Tape::param`] accumulate gradients across
//! repeated `backward` calls until [`Tape::zero_grad`].

use rand::Rng;

use super::dense::gemm_acc;
use super::{Float, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Layout and masking for the fused multi-head attention op.
///
/// Queries are `[batch·q_len × d]`, keys/values `[batch·k_len × d]`.
#[derive(Debug, Clone)]
pub struct AttentionSpec {
    pub batch: usize,
    pub q_len: usize,
    pub k_len: usize,
    pub heads: usize,
    pub causal: bool,
    /// `batch·k_len` flags, `false` marks a padded key.
    pub key_valid: Vec<bool>,
}

#[derive(Debug)]
enum Op<T: Float> {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        ta: bool,
        tb: bool,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    AddRow(Var, Var),
    Relu(Var),
    Dropout(Var, Vec<T>),
    Softmax {
        x: Var,
        outer: usize,
        axis_len: usize,
        inner: usize,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        mean: Vec<T>,
        rstd: Vec<T>,
    },
    Embedding {
        table: Var,
        ids: Vec<u32>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        spec: AttentionSpec,
        probs: Vec<T>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<u32>,
        pad: u32,
        probs: Vec<T>,
        count: usize,
    },
    Sum(Var),
    Mean(Var),
    AbsPow {
        x: Var,
        gamma: T,
    },
}

#[derive(Debug)]
struct Node<T: Float> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Floor on `|x|` inside `|x|^(γ−1)` for γ < 1.
pub const ABS_POW_EPS: f64 = 1e-12;

#[derive(Debug, Default)]
pub struct Tape<T: Float = f32> {
    nodes: Vec<Node<T>>,
    leaf_grads: Vec<Option<Vec<T>>>,
}

impl<T: Float> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            leaf_grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every node recorded after the first `len`.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
        self.leaf_grads.truncate(len);
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.leaf_grads.push(None);
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.leaf_grads[v.0].as_deref()
    }

    pub fn grad_tensor(&self, v: Var) -> Option<Tensor<T>> {
        let shape = self.nodes[v.0].value.shape().to_vec();
        self.grad(v)
            .map(|g| Tensor::from_vec(shape, g.to_vec()).expect("grad shape matches value"))
    }

    pub fn zero_grad(&mut self) {
        self.leaf_grads.iter_mut().for_each(|g| *g = None);
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::Dimension {
                op,
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_flags(a, false, b, false)
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_flags(a, false, b, true)
    }

    fn matmul_flags(&mut self, a: Var, ta: bool, b: Var, tb: bool) -> Result<Var> {
        let value = super::dense::matmul_flags(self.value(a), ta, self.value(b), tb)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::MatMul { a, b, ta, tb }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let value = self.value(a).add(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let value = self.value(a).sub(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let value = self.value(a).mul(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let value = self.value(a).scale(c);
        let rg = self.rg(&[a]);
        self.push(value, Op::Scale(a, c), rg)
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Var {
        let value = self.value(a).map(|v| v + c);
        let rg = self.rg(&[a]);
        self.push(value, Op::AddScalar(a), rg)
    }

    /// Adds a row vector `b[d]` to every row of `a[n×d]`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (_, cols) = self.value(a).dims2()?;
        if self.value(b).len() != cols {
            return Err(Error::Dimension {
                op: "add_row",
                left: self.value(a).shape().to_vec(),
                right: self.value(b).shape().to_vec(),
            });
        }
        let mut value = self.value(a).clone();
        let bias = self.value(b).data();
        for row in value.data_mut().chunks_mut(cols) {
            for (v, &bv) in row.iter_mut().zip(bias) {
                *v += bv;
            }
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::AddRow(a, b), rg))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| if v > T::zero() { v } else { T::zero() });
        let rg = self.rg(&[a]);
        self.push(value, Op::Relu(a), rg)
    }

    /// Inverted dropout; identity when `p == 0`.
    pub fn dropout(&mut self, a: Var, p: f64, rng: &mut impl Rng) -> Var {
        if p <= 0.0 {
            return a;
        }
        let keep = T::from_f64_lossy(1.0 / (1.0 - p));
        let mask: Vec<T> = (0..self.value(a).len())
            .map(|_| {
                if rng.random::<f64>() < p {
                    T::zero()
                } else {
                    keep
                }
            })
            .collect();
        let mut value = self.value(a).clone();
        for (v, &m) in value.data_mut().iter_mut().zip(&mask) {
            *v *= m;
        }
        let rg = self.rg(&[a]);
        self.push(value, Op::Dropout(a, mask), rg)
    }

    /// Numerically stabilised softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.value(x).shape().to_vec();
        if axis >= shape.len() {
            return Err(Error::Input(format!(
                "softmax axis {axis} out of range for shape {shape:?}"
            )));
        }
        let outer: usize = shape[..axis].iter().product();
        let axis_len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let src = self.value(x).data();
        let mut out = vec![T::zero(); src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |a: usize| (o * axis_len + a) * inner + i;
                let mut max = T::neg_infinity();
                for a in 0..axis_len {
                    max = max.max(src[idx(a)]);
                }
                let mut total = T::zero();
                for a in 0..axis_len {
                    let e = (src[idx(a)] - max).exp();
                    out[idx(a)] = e;
                    total += e;
                }
                for a in 0..axis_len {
                    out[idx(a)] /= total;
                }
            }
        }
        let value = Tensor::from_vec(shape, out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(
            value,
            Op::Softmax {
                x,
                outer,
                axis_len,
                inner,
            },
            rg,
        ))
    }

    /// Layer normalisation over the last axis (population variance).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        if eps <= 0.0 || !eps.is_finite() {
            return Err(Error::config(format!("layer_norm eps must be > 0, got {eps}")));
        }
        let shape = self.value(x).shape().to_vec();
        let cols = *shape.last().expect("non-empty shape");
        for (p, name) in [(gain, "gain"), (bias, "bias")] {
            if self.value(p).len() != cols {
                return Err(Error::Dimension {
                    op: if name == "gain" {
                        "layer_norm gain"
                    } else {
                        "layer_norm bias"
                    },
                    left: shape.clone(),
                    right: self.value(p).shape().to_vec(),
                });
            }
        }
        let eps = T::from_f64_lossy(eps);
        let n = T::from_usize(cols).expect("cols fit");
        let src = self.value(x).data();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let rows = src.len() / cols;
        let mut out = vec![T::zero(); src.len()];
        let mut means = Vec::with_capacity(rows);
        let mut rstds = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &src[r * cols..(r + 1) * cols];
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let rstd = T::one() / (var + eps).sqrt();
            for c in 0..cols {
                out[r * cols + c] = (row[c] - mean) * rstd * g[c] + b[c];
            }
            means.push(mean);
            rstds.push(rstd);
        }
        let value = Tensor::from_vec(shape, out)?;
        let rg = self.rg(&[x, gain, bias]);
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                mean: means,
                rstd: rstds,
            },
            rg,
        ))
    }

    /// Gathers rows of `table[V×d]` for each id.
    pub fn embedding(&mut self, table: Var, ids: &[u32]) -> Result<Var> {
        let (vocab, d) = self.value(table).dims2()?;
        if let Some(&bad) = ids.iter().find(|&&i| i as usize >= vocab) {
            return Err(Error::Input(format!(
                "token id {bad} out of range for vocabulary of {vocab}"
            )));
        }
        if ids.is_empty() {
            return Err(Error::Input("embedding lookup with no ids".into()));
        }
        let src = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            let id = id as usize;
            out.extend_from_slice(&src[id * d..(id + 1) * d]);
        }
        let value = Tensor::from_vec([ids.len(), d], out)?;
        let rg = self.rg(&[table]);
        Ok(self.push(
            value,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// Fused scaled dot-product multi-head attention.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, spec: AttentionSpec) -> Result<Var> {
        let (qr, d) = self.value(q).dims2()?;
        let (kr, kd) = self.value(k).dims2()?;
        let (vr, vd) = self.value(v).dims2()?;
        if qr != spec.batch * spec.q_len
            || kr != spec.batch * spec.k_len
            || vr != kr
            || kd != d
            || vd != d
            || spec.key_valid.len() != kr
        {
            return Err(Error::Dimension {
                op: "attention",
                left: self.value(q).shape().to_vec(),
                right: self.value(k).shape().to_vec(),
            });
        }
        if spec.heads == 0 || d % spec.heads != 0 {
            return Err(Error::config(format!(
                "model width {d} not divisible by {} heads",
                spec.heads
            )));
        }
        if spec.causal && spec.q_len != spec.k_len {
            return Err(Error::Input("causal attention needs q_len == k_len".into()));
        }
        let dh = d / spec.heads;
        let scale = T::one() / T::from_usize(dh).expect("dh fits").sqrt();
        let (qd, kd_, vd_) = (
            self.value(q).data(),
            self.value(k).data(),
            self.value(v).data(),
        );
        let (tq, tk, h_n) = (spec.q_len, spec.k_len, spec.heads);
        let mut probs = vec![T::zero(); spec.batch * h_n * tq * tk];
        let mut out = vec![T::zero(); qr * d];
        let mut scores = vec![T::zero(); tk];
        for b in 0..spec.batch {
            for h in 0..h_n {
                let off = h * dh;
                for i in 0..tq {
                    let qrow = &qd[(b * tq + i) * d + off..][..dh];
                    let mut max = T::neg_infinity();
                    for (j, s) in scores.iter_mut().enumerate() {
                        let masked = !spec.key_valid[b * tk + j] || (spec.causal && j > i);
                        *s = if masked {
                            T::neg_infinity()
                        } else {
                            let krow = &kd_[(b * tk + j) * d + off..][..dh];
                            dot(qrow, krow) * scale
                        };
                        max = max.max(*s);
                    }
                    let prow = &mut probs[((b * h_n + h) * tq + i) * tk..][..tk];
                    if max == T::neg_infinity() {
                        continue;
                    }
                    let mut total = T::zero();
                    for (p, &s) in prow.iter_mut().zip(&scores) {
                        *p = (s - max).exp();
                        total += *p;
                    }
                    for p in prow.iter_mut() {
                        *p /= total;
                    }
                    let orow = &mut out[(b * tq + i) * d + off..][..dh];
                    for (j, &p) in prow.iter().enumerate() {
                        if p == T::zero() {
                            continue;
                        }
                        let vrow = &vd_[(b * tk + j) * d + off..][..dh];
                        for (o, &vv) in orow.iter_mut().zip(vrow) {
                            *o += p * vv;
                        }
                    }
                }
            }
        }
        let value = Tensor::from_vec([qr, d], out)?;
        let rg = self.rg(&[q, k, v]);
        Ok(self.push(
            value,
            Op::Attention {
                q,
                k,
                v,
                spec,
                probs,
            },
            rg,
        ))
    }

    /// Mean token negative log-likelihood over non-pad targets.
    ///
    /// An all-pad target yields 0 with zero gradient.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[u32], pad: u32) -> Result<Var> {
        let (rows, vocab) = self.value(logits).dims2()?;
        if targets.len() != rows {
            return Err(Error::Dimension {
                op: "cross_entropy",
                left: vec![rows, vocab],
                right: vec![targets.len()],
            });
        }
        if let Some(&bad) = targets
            .iter()
            .find(|&&t| t != pad && t as usize >= vocab)
        {
            return Err(Error::Input(format!(
                "target id {bad} out of range for {vocab} classes"
            )));
        }
        let src = self.value(logits).data();
        let mut probs = vec![T::zero(); src.len()];
        let mut total = 0.0f64;
        let mut count = 0usize;
        for r in 0..rows {
            if targets[r] == pad {
                continue;
            }
            let row = &src[r * vocab..(r + 1) * vocab];
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            let prow = &mut probs[r * vocab..(r + 1) * vocab];
            for (p, &l) in prow.iter_mut().zip(row) {
                *p = (l - max).exp();
                z += *p;
            }
            for p in prow.iter_mut() {
                *p /= z;
            }
            let t = targets[r] as usize;
            total += (z.ln() + max - row[t]).as_f64();
            count += 1;
        }
        let loss = if count == 0 {
            0.0
        } else {
            total / count as f64
        };
        let rg = self.rg(&[logits]);
        Ok(self.push(
            Tensor::scalar(T::from_f64_lossy(loss)),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                pad,
                probs,
                count,
            },
            rg,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = T::from_usize(self.value(a).len()).expect("len fits");
        let s = self.value(a).sum() / n;
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::Mean(a), rg)
    }

    /// Element-wise `|x|^γ` for γ > 0.
    pub fn abs_pow(&mut self, x: Var, gamma: T) -> Result<Var> {
        if !(gamma > T::zero()) || !gamma.is_finite() {
            return Err(Error::config(format!("exponent must be > 0, got {gamma}")));
        }
        let value = self.value(x).map(|v| v.abs().powf(gamma));
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::AbsPow { x, gamma }, rg))
    }

    /// Back-propagates from a scalar root, accumulating into leaf gradients.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if !self.nodes[root.0].value.is_scalar() {
            return Err(Error::Usage(format!(
                "backward needs a scalar root, got shape {:?}",
                self.nodes[root.0].value.shape()
            )));
        }
        let mut local: Vec<Option<Vec<T>>> = (0..=root.0).map(|_| None).collect();
        local[root.0] = Some(vec![T::one()]);
        for i in (0..=root.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = local[i].take() else {
                continue;
            };
            self.backprop_node(i, &g, &mut local);
            if matches!(self.nodes[i].op, Op::Leaf) {
                match &mut self.leaf_grads[i] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        for (node, slot) in self.nodes.iter().zip(self.leaf_grads.iter_mut()) {
            if node.requires_grad && matches!(node.op, Op::Leaf) && slot.is_none() {
                *slot = Some(vec![T::zero(); node.value.len()]);
            }
        }
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &[T], local: &mut [Option<Vec<T>>]) {
        let nodes = &self.nodes;
        let want = |v: Var| nodes[v.0].requires_grad;
        let val = |v: Var| &nodes[v.0].value;
        match &nodes[i].op {
            Op::Leaf => {}
            &Op::MatMul { a, b, ta, tb } => {
                let (av, bv) = (val(a), val(b));
                let (ar, ac) = av.dims2().expect("2-D");
                let (br, bc) = bv.dims2().expect("2-D");
                let (m, n) = val(Var(i)).dims2().expect("2-D");
                if want(a) {
                    let buf = slot(local, a, av.len());
                    if !ta {
                        gemm_acc(g, m, n, false, bv.data(), br, bc, !tb, buf, T::one());
                    } else {
                        gemm_acc(bv.data(), br, bc, tb, g, m, n, true, buf, T::one());
                    }
                }
                if want(b) {
                    let buf = slot(local, b, bv.len());
                    if !tb {
                        gemm_acc(av.data(), ar, ac, !ta, g, m, n, false, buf, T::one());
                    } else {
                        gemm_acc(g, m, n, true, av.data(), ar, ac, ta, buf, T::one());
                    }
                }
            }
            &Op::Add(a, b) => {
                for v in [a, b] {
                    if want(v) {
                        axpy(slot(local, v, g.len()), T::one(), g);
                    }
                }
            }
            &Op::Sub(a, b) => {
                if want(a) {
                    axpy(slot(local, a, g.len()), T::one(), g);
                }
                if want(b) {
                    axpy(slot(local, b, g.len()), -T::one(), g);
                }
            }
            &Op::Mul(a, b) => {
                if want(a) {
                    let other = val(b).data();
                    let buf = slot(local, a, g.len());
                    for ((d, &gg), &o) in buf.iter_mut().zip(g).zip(other) {
                        *d += gg * o;
                    }
                }
                if want(b) {
                    let other = val(a).data();
                    let buf = slot(local, b, g.len());
                    for ((d, &gg), &o) in buf.iter_mut().zip(g).zip(other) {
                        *d += gg * o;
                    }
                }
            }
            &Op::Scale(a, c) => {
                if want(a) {
                    axpy(slot(local, a, g.len()), c, g);
                }
            }
            &Op::AddScalar(a) => {
                if want(a) {
                    axpy(slot(local, a, g.len()), T::one(), g);
                }
            }
            &Op::AddRow(a, b) => {
                if want(a) {
                    axpy(slot(local, a, g.len()), T::one(), g);
                }
                if want(b) {
                    let cols = val(b).len();
                    let buf = slot(local, b, cols);
                    for row in g.chunks(cols) {
                        for (d, &gg) in buf.iter_mut().zip(row) {
                            *d += gg;
                        }
                    }
                }
            }
            &Op::Relu(a) => {
                if want(a) {
                    let x = val(a).data();
                    let buf = slot(local, a, g.len());
                    for ((d, &gg), &xv) in buf.iter_mut().zip(g).zip(x) {
                        if xv > T::zero() {
                            *d += gg;
                        }
                    }
                }
            }
            Op::Dropout(a, mask) => {
                if want(*a) {
                    let buf = slot(local, *a, g.len());
                    for ((d, &gg), &m) in buf.iter_mut().zip(g).zip(mask) {
                        *d += gg * m;
                    }
                }
            }
            &Op::Softmax {
                x,
                outer,
                axis_len,
                inner,
            } => {
                if want(x) {
                    let y = val(Var(i)).data();
                    let buf = slot(local, x, g.len());
                    for o in 0..outer {
                        for ii in 0..inner {
                            let idx = |a: usize| (o * axis_len + a) * inner + ii;
                            let dotp: T = (0..axis_len).map(|a| y[idx(a)] * g[idx(a)]).sum();
                            for a in 0..axis_len {
                                buf[idx(a)] += y[idx(a)] * (g[idx(a)] - dotp);
                            }
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                mean,
                rstd,
            } => {
                let xs = val(*x).data();
                let gs = val(*gain).data();
                let cols = gs.len();
                let n = T::from_usize(cols).expect("cols fit");
                if want(*gain) || want(*bias) {
                    let mut dg = vec![T::zero(); cols];
                    let mut db = vec![T::zero(); cols];
                    for (r, (&mu, &rs)) in mean.iter().zip(rstd).enumerate() {
                        for c in 0..cols {
                            let xhat = (xs[r * cols + c] - mu) * rs;
                            dg[c] += g[r * cols + c] * xhat;
                            db[c] += g[r * cols + c];
                        }
                    }
                    if want(*gain) {
                        axpy(slot(local, *gain, cols), T::one(), &dg);
                    }
                    if want(*bias) {
                        axpy(slot(local, *bias, cols), T::one(), &db);
                    }
                }
                if want(*x) {
                    let buf = slot(local, *x, xs.len());
                    let mut dxhat = vec![T::zero(); cols];
                    for (r, (&mu, &rs)) in mean.iter().zip(rstd).enumerate() {
                        let row = &xs[r * cols..(r + 1) * cols];
                        let grow = &g[r * cols..(r + 1) * cols];
                        let mut m1 = T::zero();
                        let mut m2 = T::zero();
                        for c in 0..cols {
                            dxhat[c] = grow[c] * gs[c];
                            let xhat = (row[c] - mu) * rs;
                            m1 += dxhat[c];
                            m2 += dxhat[c] * xhat;
                        }
                        m1 /= n;
                        m2 /= n;
                        for c in 0..cols {
                            let xhat = (row[c] - mu) * rs;
                            buf[r * cols + c] += rs * (dxhat[c] - m1 - xhat * m2);
                        }
                    }
                }
            }
            Op::Embedding { table, ids } => {
                if want(*table) {
                    let tv = val(*table);
                    let d = tv.shape()[1];
                    let buf = slot(local, *table, tv.len());
                    for (r, &id) in ids.iter().enumerate() {
                        let id = id as usize;
                        for c in 0..d {
                            buf[id * d + c] += g[r * d + c];
                        }
                    }
                }
            }
            Op::Attention {
                q,
                k,
                v,
                spec,
                probs,
            } => self.attention_backward(*q, *k, *v, spec, probs, g, local),
            Op::CrossEntropy {
                logits,
                targets,
                pad,
                probs,
                count,
            } => {
                if want(*logits) && *count > 0 {
                    let vocab = val(*logits).shape()[1];
                    let coef = g[0] / T::from_usize(*count).expect("count fits");
                    let buf = slot(local, *logits, probs.len());
                    for (r, &t) in targets.iter().enumerate() {
                        if t == *pad {
                            continue;
                        }
                        for c in 0..vocab {
                            let onehot = if c == t as usize { T::one() } else { T::zero() };
                            buf[r * vocab + c] += coef * (probs[r * vocab + c] - onehot);
                        }
                    }
                }
            }
            &Op::Sum(a) => {
                if want(a) {
                    let buf = slot(local, a, val(a).len());
                    buf.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            &Op::Mean(a) => {
                if want(a) {
                    let len = val(a).len();
                    let c = g[0] / T::from_usize(len).expect("len fits");
                    let buf = slot(local, a, len);
                    buf.iter_mut().for_each(|d| *d += c);
                }
            }
            &Op::AbsPow { x, gamma } => {
                if want(x) {
                    let xs = val(x).data();
                    let eps = T::from_f64_lossy(ABS_POW_EPS);
                    let buf = slot(local, x, xs.len());
                    for ((d, &gg), &xv) in buf.iter_mut().zip(g).zip(xs) {
                        if xv == T::zero() {
                            continue;
                        }
                        let mag = xv.abs().max(eps);
                        *d += gg * gamma * mag.powf(gamma - T::one()) * xv.signum();
                    }
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        q: Var,
        k: Var,
        v: Var,
        spec: &AttentionSpec,
        probs: &[T],
        g: &[T],
        local: &mut [Option<Vec<T>>],
    ) {
        let nodes = &self.nodes;
        let (qd, kd, vd) = (
            nodes[q.0].value.data(),
            nodes[k.0].value.data(),
            nodes[v.0].value.data(),
        );
        let d = nodes[q.0].value.shape()[1];
        let dh = d / spec.heads;
        let scale = T::one() / T::from_usize(dh).expect("dh fits").sqrt();
        let (tq, tk, h_n) = (spec.q_len, spec.k_len, spec.heads);
        let mut dq = vec![T::zero(); qd.len()];
        let mut dk = vec![T::zero(); kd.len()];
        let mut dv = vec![T::zero(); vd.len()];
        let mut dp = vec![T::zero(); tk];
        for b in 0..spec.batch {
            for h in 0..h_n {
                let off = h * dh;
                for i in 0..tq {
                    let prow = &probs[((b * h_n + h) * tq + i) * tk..][..tk];
                    let grow = &g[(b * tq + i) * d + off..][..dh];
                    let mut weighted = T::zero();
                    for j in 0..tk {
                        let p = prow[j];
                        if p == T::zero() {
                            dp[j] = T::zero();
                            continue;
                        }
                        let vrow = &vd[(b * tk + j) * d + off..][..dh];
                        let dvrow = &mut dv[(b * tk + j) * d + off..][..dh];
                        for (dvv, &gg) in dvrow.iter_mut().zip(grow) {
                            *dvv += p * gg;
                        }
                        dp[j] = dot(grow, vrow);
                        weighted += p * dp[j];
                    }
                    let qrow = &qd[(b * tq + i) * d + off..][..dh];
                    for j in 0..tk {
                        let p = prow[j];
                        if p == T::zero() {
                            continue;
                        }
                        let ds = p * (dp[j] - weighted) * scale;
                        let krow = &kd[(b * tk + j) * d + off..][..dh];
                        let dqrow = &mut dq[(b * tq + i) * d + off..][..dh];
                        for (dqq, &kk) in dqrow.iter_mut().zip(krow) {
                            *dqq += ds * kk;
                        }
                        let dkrow = &mut dk[(b * tk + j) * d + off..][..dh];
                        for (dkk, &qq) in dkrow.iter_mut().zip(qrow) {
                            *dkk += ds * qq;
                        }
                    }
                }
            }
        }
        for (var, grad) in [(q, dq), (k, dk), (v, dv)] {
            if nodes[var.0].requires_grad {
                axpy(slot(local, var, grad.len()), T::one(), &grad);
            }
        }
    }
}

fn slot<T: Float>(local: &mut [Option<Vec<T>>], v: Var, len: usize) -> &mut Vec<T> {
    local[v.0].get_or_insert_with(|| vec![T::zero(); len])
}

fn axpy<T: Float>(dst: &mut [T], c: T, src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += c * s;
    }
}

fn dot<T: Float>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}
