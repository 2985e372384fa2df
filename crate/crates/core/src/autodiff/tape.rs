//! Reverse-mode differentiation over a fixed op set.
//!
//! A [`Tape`] records every op in creation order, so a single backward sweep in reverse
//! order visits each node after all of its consumers.

use crate::autodiff::tensor::{softmax_rows, Tensor};
use crate::error::{Error, Result};
use crate::graph::Csr;

/// Handle to a value recorded on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<'g> {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Relu(Var),
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        normalized: Tensor,
        inv_std: Vec<f64>,
    },
    Softmax(Var),
    /// `soft` is the relaxed sample; backward always uses it.
    GumbelSoftmax {
        logits: Var,
        soft: Tensor,
        tau: f64,
    },
    SumAggregate {
        x: Var,
        csr: &'g Csr,
    },
    Concat(Vec<Var>),
    CrossEntropy {
        logits: Var,
        probs: Tensor,
        targets: Vec<Option<usize>>,
        count: usize,
    },
    WeightedSum {
        x: Var,
        weights: Tensor,
    },
}

struct Node<'g> {
    value: Tensor,
    op: Op<'g>,
}

/// Batch statistics from a training-mode batch-norm op.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Biased (population) variance of the batch.
    pub var: Vec<f64>,
    pub count: usize,
}

#[derive(Default)]
pub struct Tape<'g> {
    nodes: Vec<Node<'g>>,
}

/// Gradients of one scalar with respect to every tape value. Values the scalar does not
/// depend on have no entry.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Gradient of `v`, or zeros shaped like `like` when the scalar does not depend on it.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(like.rows(), like.cols()))
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads[v.0].take()
    }
}

impl<'g> Tape<'g> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    fn push(&mut self, value: Tensor, op: Op<'g>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    /// Adds the `1 x m` row `bias` to every row of `a`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (x, b) = (self.value(a), self.value(bias));
        if b.rows() != 1 || b.cols() != x.cols() {
            return Err(Error::Shape(format!("bias {:?} for {:?}", b.shape(), x.shape())));
        }
        let mut out = x.clone();
        for r in 0..out.rows() {
            for (o, &bv) in out.row_mut(r).iter_mut().zip(b.data()) {
                *o += bv;
            }
        }
        Ok(self.push(out, Op::AddBias(a, bias)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.value(a).check_same_shape(self.value(b), "add")?;
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0));
        self.push(out, Op::Relu(a))
    }

    /// Training-mode batch normalization over rows. `gamma` and `beta` are `1 x m` rows.
    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<(Var, BatchStats)> {
        let xv = self.value(x);
        let (n, m) = xv.shape();
        let (g, b) = (self.value(gamma), self.value(beta));
        if g.shape() != (1, m) || b.shape() != (1, m) {
            return Err(Error::Shape(format!("batch norm parameters for width {m}")));
        }
        if n == 0 {
            return Err(Error::Shape("batch norm over an empty batch".into()));
        }
        let mut mean = vec![0.0; m];
        for r in 0..n {
            for (acc, &v) in mean.iter_mut().zip(xv.row(r)) {
                *acc += v;
            }
        }
        for v in &mut mean {
            *v /= n as f64;
        }
        let mut var = vec![0.0; m];
        for r in 0..n {
            for ((acc, &v), &mu) in var.iter_mut().zip(xv.row(r)).zip(&mean) {
                *acc += (v - mu) * (v - mu);
            }
        }
        for v in &mut var {
            *v /= n as f64;
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut normalized = Tensor::zeros(n, m);
        let mut out = Tensor::zeros(n, m);
        for r in 0..n {
            for c in 0..m {
                let h = (xv.get(r, c) - mean[c]) * inv_std[c];
                normalized.set(r, c, h);
                out.set(r, c, g.data()[c] * h + b.data()[c]);
            }
        }
        let stats = BatchStats { mean, var, count: n };
        let v = self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
            },
        );
        Ok((v, stats))
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let out = softmax_rows(self.value(a));
        self.push(out, Op::Softmax(a))
    }

    /// Gumbel-Softmax with fixed `noise` (same shape as `logits`). With `hard`, the forward
    /// value is the one-hot argmax of the relaxed sample and the backward pass is the
    /// relaxed sample's (straight-through).
    pub fn gumbel_softmax(&mut self, logits: Var, noise: &Tensor, tau: f64, hard: bool) -> Result<Var> {
        let soft = relaxed_sample(self.value(logits), noise, tau)?;
        let value = if hard { soft.one_hot_argmax() } else { soft.clone() };
        Ok(self.push(value, Op::GumbelSoftmax { logits, soft, tau }))
    }

    /// Row `i` of the output is the sum of the rows of `x` listed in `csr.row(i)`.
    pub fn sum_aggregate(&mut self, x: Var, csr: &'g Csr) -> Result<Var> {
        let xv = self.value(x);
        if csr.cols() != xv.rows() {
            return Err(Error::Shape(format!(
                "aggregation over {} rows applied to {} rows",
                csr.cols(),
                xv.rows()
            )));
        }
        let mut out = Tensor::zeros(csr.rows(), xv.cols());
        for i in 0..csr.rows() {
            let o = out.row_mut(i);
            for &j in csr.row(i) {
                for (ov, &v) in o.iter_mut().zip(xv.row(j)) {
                    *ov += v;
                }
            }
        }
        Ok(self.push(out, Op::SumAggregate { x, csr }))
    }

    /// Column-wise concatenation.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts
            .first()
            .map(|&p| self.value(p).rows())
            .ok_or_else(|| Error::Shape("concat of nothing".into()))?;
        if parts.iter().any(|&p| self.value(p).rows() != rows) {
            return Err(Error::Shape("concat of tensors with different row counts".into()));
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let mut offset = 0;
            for &p in parts {
                let src = self.value(p).row(r);
                out.row_mut(r)[offset..offset + src.len()].copy_from_slice(src);
                offset += src.len();
            }
        }
        Ok(self.push(out, Op::Concat(parts.to_vec())))
    }

    /// Mean softmax cross-entropy over the rows with a target; other rows are ignored.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Result<Var> {
        let lv = self.value(logits);
        if targets.len() != lv.rows() {
            return Err(Error::Shape(format!(
                "{} targets for {} rows",
                targets.len(),
                lv.rows()
            )));
        }
        if targets.iter().flatten().any(|&t| t >= lv.cols()) {
            return Err(Error::Shape("target class out of range".into()));
        }
        let probs = softmax_rows(lv);
        let count = targets.iter().flatten().count();
        let mut loss = 0.0;
        for (r, t) in targets.iter().enumerate() {
            if let Some(t) = *t {
                let row = lv.row(r);
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                loss += lse - row[t];
            }
        }
        if count > 0 {
            loss /= count as f64;
        }
        let op = Op::CrossEntropy {
            logits,
            probs,
            targets: targets.to_vec(),
            count,
        };
        Ok(self.push(Tensor::filled(1, 1, loss), op))
    }

    /// `sum(x * weights)`, a scalar probe used by gradient checks.
    pub fn weighted_sum(&mut self, x: Var, weights: Tensor) -> Result<Var> {
        self.value(x).check_same_shape(&weights, "weighted sum")?;
        let s = self
            .value(x)
            .data()
            .iter()
            .zip(weights.data())
            .map(|(a, b)| a * b)
            .sum();
        Ok(self.push(Tensor::filled(1, 1, s), Op::WeightedSum { x, weights }))
    }

    /// Gradients of the `1 x 1` value `loss` with respect to every recorded value.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).shape() != (1, 1) {
            return Err(Error::Shape("backward from a non-scalar".into()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(1, 1, 1.0));

        fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
            match &mut grads[v.0] {
                Some(acc) => acc.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    accumulate(&mut grads, *a, g.matmul_transposed(bv));
                    accumulate(&mut grads, *b, av.transposed_matmul(&g));
                }
                Op::AddBias(a, bias) => {
                    let mut gb = Tensor::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (acc, &v) in gb.data_mut().iter_mut().zip(g.row(r)) {
                            *acc += v;
                        }
                    }
                    accumulate(&mut grads, *bias, gb);
                    accumulate(&mut grads, *a, g.clone());
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *b, g.clone());
                    accumulate(&mut grads, *a, g.clone());
                }
                Op::Relu(a) => {
                    let x = self.value(*a);
                    let mut ga = g.clone();
                    for (gv, &xv) in ga.data_mut().iter_mut().zip(x.data()) {
                        if xv <= 0.0 {
                            *gv = 0.0;
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    normalized,
                    inv_std,
                } => {
                    let (n, m) = g.shape();
                    let gam = self.value(*gamma).data();
                    let mut g_gamma = Tensor::zeros(1, m);
                    let mut g_beta = Tensor::zeros(1, m);
                    for r in 0..n {
                        for c in 0..m {
                            g_gamma.data_mut()[c] += g.get(r, c) * normalized.get(r, c);
                            g_beta.data_mut()[c] += g.get(r, c);
                        }
                    }
                    let mut gx = Tensor::zeros(n, m);
                    let nf = n as f64;
                    for c in 0..m {
                        // d xhat = dy * gamma; sums over the batch
                        let sum_dh = g_beta.data()[c] * gam[c];
                        let sum_dh_h = g_gamma.data()[c] * gam[c];
                        for r in 0..n {
                            let dh = g.get(r, c) * gam[c];
                            let v = inv_std[c] / nf * (nf * dh - sum_dh - normalized.get(r, c) * sum_dh_h);
                            gx.set(r, c, v);
                        }
                    }
                    accumulate(&mut grads, *gamma, g_gamma);
                    accumulate(&mut grads, *beta, g_beta);
                    accumulate(&mut grads, *x, gx);
                }
                Op::Softmax(a) => {
                    accumulate(&mut grads, *a, softmax_backward(&node.value, &g, 1.0));
                }
                Op::GumbelSoftmax { logits, soft, tau } => {
                    accumulate(&mut grads, *logits, softmax_backward(soft, &g, 1.0 / tau));
                }
                Op::SumAggregate { x, csr } => {
                    let xv = self.value(*x);
                    let mut gx = Tensor::zeros(xv.rows(), xv.cols());
                    for i in 0..csr.rows() {
                        let gi = g.row(i);
                        for &j in csr.row(i) {
                            for (acc, &v) in gx.row_mut(j).iter_mut().zip(gi) {
                                *acc += v;
                            }
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.value(p).cols();
                        let mut gp = Tensor::zeros(g.rows(), w);
                        for r in 0..g.rows() {
                            gp.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + w]);
                        }
                        offset += w;
                        accumulate(&mut grads, p, gp);
                    }
                }
                Op::CrossEntropy {
                    logits,
                    probs,
                    targets,
                    count,
                } => {
                    let upstream = g.data()[0];
                    let mut gl = Tensor::zeros(probs.rows(), probs.cols());
                    if *count > 0 {
                        let scale = upstream / *count as f64;
                        for (r, t) in targets.iter().enumerate() {
                            if let Some(t) = *t {
                                for (c, o) in gl.row_mut(r).iter_mut().enumerate() {
                                    let indicator = if c == t { 1.0 } else { 0.0 };
                                    *o = (probs.get(r, c) - indicator) * scale;
                                }
                            }
                        }
                    }
                    accumulate(&mut grads, *logits, gl);
                }
                Op::WeightedSum { x, weights } => {
                    let mut gx = weights.clone();
                    gx.scale(g.data()[0]);
                    accumulate(&mut grads, *x, gx);
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

/// Vector-Jacobian product of a row softmax with output `y`, scaled by `scale`.
fn softmax_backward(y: &Tensor, g: &Tensor, scale: f64) -> Tensor {
    let mut out = Tensor::zeros(y.rows(), y.cols());
    for r in 0..y.rows() {
        let (yr, gr) = (y.row(r), g.row(r));
        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
        for ((o, &yv), &gv) in out.row_mut(r).iter_mut().zip(yr).zip(gr) {
            *o = scale * yv * (gv - dot);
        }
    }
    out
}

/// `softmax((logits + noise) / tau)`.
pub fn relaxed_sample(logits: &Tensor, noise: &Tensor, tau: f64) -> Result<Tensor> {
    logits.check_same_shape(noise, "gumbel noise")?;
    if !tau.is_finite() || tau <= 0.0 {
        return Err(Error::Argument(format!("temperature {tau} must be positive")));
    }
    if !logits.all_finite() {
        return Err(Error::Numeric("non-finite logits".into()));
    }
    let mut z = logits.clone();
    for (zv, &n) in z.data_mut().iter_mut().zip(noise.data()) {
        *zv = (*zv + n) / tau;
    }
    Ok(softmax_rows(&z))
}
