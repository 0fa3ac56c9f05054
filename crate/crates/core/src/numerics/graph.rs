//! Reverse-mode differentiation over a per-step tensor tape.
//!
//! A [`Graph`] records every operation eagerly: values are computed as nodes
//! are pushed, and [`Graph::backward`] walks the tape in reverse to produce
//! the gradient of a scalar node with respect to every parameter leaf. The
//! tape is thrown away after each step.

use super::params::{ParamId, ParamStore};
use super::special::{sigmoid, softplus, LN_2PI};
use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Square(Var),
    Tanh(Var),
    Exp(Var),
    Softplus(Var),
    Clamp(Var, f64, f64),
    SliceCols(Var, usize),
    SumAll(Var),
    MeanAll(Var),
    SumLastAxis(Var),
    PairwiseGaussian { z: Var, mean: Var, log_var: Var },
    LogSumExpPairs { x: Var, log_weights: Option<Tensor> },
    BernoulliLogLik { logits: Var, target: Var },
}

impl Op {
    fn parents(&self) -> Vec<Var> {
        match self {
            Op::Input | Op::Param(_) => vec![],
            Op::MatMul(a, b)
            | Op::AddBias(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Square(a)
            | Op::Tanh(a)
            | Op::Exp(a)
            | Op::Softplus(a)
            | Op::Clamp(a, ..)
            | Op::SliceCols(a, _)
            | Op::SumAll(a)
            | Op::MeanAll(a)
            | Op::SumLastAxis(a) => vec![*a],
            Op::PairwiseGaussian { z, mean, log_var } => vec![*z, *mean, *log_var],
            Op::LogSumExpPairs { x, .. } => vec![*x],
            Op::BernoulliLogLik { logits, target } => vec![*logits, *target],
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Param(_) => "param",
            Op::MatMul(..) => "matmul",
            Op::AddBias(..) => "add_bias",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Square(..) => "square",
            Op::Tanh(..) => "tanh",
            Op::Exp(..) => "exp",
            Op::Softplus(..) => "softplus",
            Op::Clamp(..) => "clamp",
            Op::SliceCols(..) => "slice_cols",
            Op::SumAll(..) => "sum",
            Op::MeanAll(..) => "mean",
            Op::SumLastAxis(..) => "sum_last_axis",
            Op::PairwiseGaussian { .. } => "pairwise_gaussian_log_density",
            Op::LogSumExpPairs { .. } => "logsumexp_pairs",
            Op::BernoulliLogLik { .. } => "bernoulli_log_lik",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Gradients of a scalar with respect to parameters, indexed by [`ParamId`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads.get(id.index()).and_then(Option::as_ref)
    }

    /// Replaces the gradient for `id`.
    pub fn set(&mut self, id: ParamId, grad: Tensor) {
        let i = id.index();
        if self.grads.len() <= i {
            self.grads.resize(i + 1, None);
        }
        self.grads[i] = Some(grad);
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.grads
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_ref().map(|g| (ParamId::new(i), g)))
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Constant leaf; receives no gradient.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Input, false)
    }

    /// Parameter leaf whose gradient is reported by [`Graph::backward`].
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id), true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rank() != 2 || bv.rank() != 2 || av.shape()[1] != bv.shape()[0] {
            return Err(Error::Shape(format!(
                "matmul {:?} x {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
        let mut out = vec![0.0; m * n];
        gemm(av.data(), false, bv.data(), false, m, k, n, &mut out, false);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b), ng))
    }

    /// Adds a length-`n` bias to every row of an `m x n` matrix.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(bias));
        let n = av.cols();
        if av.rank() != 2 || bv.len() != n {
            return Err(Error::Shape(format!(
                "add_bias {:?} + {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let mut out = av.clone();
        for row in out.data_mut().chunks_mut(n) {
            for (o, b) in row.iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        let ng = self.ng(a) || self.ng(bias);
        Ok(self.push(out, Op::AddBias(a, bias), ng))
    }

    fn binary(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), f)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, op, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let out = self.value(a).map(f);
        let ng = self.ng(a);
        self.push(out, op, ng)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::Scale(a, c), |x| c * x)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::AddScalar(a), |x| x + c)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, Op::Softplus(a), softplus)
    }

    /// Elementwise clamp; gradient is zero outside `[lo, hi]`.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, Op::Clamp(a, lo, hi), |x| x.clamp(lo, hi))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let av = self.value(a);
        if av.rank() != 2 || start >= end || end > av.cols() {
            return Err(Error::Shape(format!(
                "slice_cols {start}..{end} of {:?}",
                av.shape()
            )));
        }
        let (m, n) = (av.rows(), av.cols());
        let w = end - start;
        let mut out = Vec::with_capacity(m * w);
        for i in 0..m {
            out.extend_from_slice(&av.data()[i * n + start..i * n + end]);
        }
        let ng = self.ng(a);
        Ok(self.push(
            Tensor::from_parts(vec![m, w], out),
            Op::SliceCols(a, start),
            ng,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::SumAll(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s = v.sum() / v.len() as f64;
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::MeanAll(a), ng)
    }

    /// Sums the last axis, keeping it with size 1.
    pub fn sum_last_axis(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let d = v.cols();
        let data: Vec<f64> = v.data().chunks(d).map(|c| c.iter().sum()).collect();
        let mut shape = v.shape().to_vec();
        if let Some(last) = shape.last_mut() {
            *last = 1;
        } else {
            shape.push(1);
        }
        let ng = self.ng(a);
        self.push(Tensor::from_parts(shape, data), Op::SumLastAxis(a), ng)
    }

    /// `out[i, m, d] = log N(z[i, d]; mean[m, d], exp(log_var[m, d]))`.
    ///
    /// `z` is `A x D`, `mean` and `log_var` are `C x D`; the result is
    /// `A x C x D`.
    pub fn pairwise_gaussian_log_density(&mut self, z: Var, mean: Var, log_var: Var) -> Result<Var> {
        let (zv, mv, lv) = (self.value(z), self.value(mean), self.value(log_var));
        mv.expect_same_shape(lv)?;
        if zv.rank() != 2 || mv.rank() != 2 || zv.cols() != mv.cols() {
            return Err(Error::Shape(format!(
                "pairwise density z {:?} vs mean {:?}",
                zv.shape(),
                mv.shape()
            )));
        }
        let (a, c, d) = (zv.rows(), mv.rows(), zv.cols());
        let inv_var: Vec<f64> = lv.data().iter().map(|l| (-l).exp()).collect();
        let mut out = vec![0.0; a * c * d];
        for i in 0..a {
            let zi = zv.row(i);
            for m in 0..c {
                let base = (i * c + m) * d;
                let mm = mv.row(m);
                let lm = lv.row(m);
                let im = &inv_var[m * d..(m + 1) * d];
                for k in 0..d {
                    let diff = zi[k] - mm[k];
                    out[base + k] = -0.5 * (LN_2PI + lm[k] + diff * diff * im[k]);
                }
            }
        }
        let ng = self.ng(z) || self.ng(mean) || self.ng(log_var);
        Ok(self.push(
            Tensor::from_parts(vec![a, c, d], out),
            Op::PairwiseGaussian { z, mean, log_var },
            ng,
        ))
    }

    /// `out[a, d] = log Σ_c exp(x[a, c, d] + w[a, c])` for `x` of shape
    /// `A x C x D` and optional constant log-weights `w` of shape `A x C`.
    pub fn logsumexp_pairs(&mut self, x: Var, log_weights: Option<Tensor>) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() != 3 {
            return Err(Error::Shape(format!("logsumexp_pairs on {:?}", xv.shape())));
        }
        let (a, c, d) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
        if let Some(w) = &log_weights {
            if w.shape() != [a, c] {
                return Err(Error::Shape(format!(
                    "log weights {:?} for input {:?}",
                    w.shape(),
                    xv.shape()
                )));
            }
        }
        let mut out = vec![0.0; a * d];
        let mut shifted = vec![0.0; c];
        for i in 0..a {
            for k in 0..d {
                let mut max = f64::NEG_INFINITY;
                for m in 0..c {
                    let w = log_weights.as_ref().map_or(0.0, |w| w.data()[i * c + m]);
                    let s = xv.data()[(i * c + m) * d + k] + w;
                    shifted[m] = s;
                    max = max.max(s);
                }
                out[i * d + k] = if max == f64::NEG_INFINITY {
                    f64::NEG_INFINITY
                } else {
                    max + shifted.iter().map(|s| (s - max).exp()).sum::<f64>().ln()
                };
            }
        }
        let ng = self.ng(x);
        Ok(self.push(
            Tensor::from_parts(vec![a, d], out),
            Op::LogSumExpPairs { x, log_weights },
            ng,
        ))
    }

    /// Per-row Bernoulli log-likelihood `Σ_p [t·l − softplus(l)]`, shape `B x 1`.
    pub fn bernoulli_log_likelihood(&mut self, logits: Var, target: Var) -> Result<Var> {
        let (lv, tv) = (self.value(logits), self.value(target));
        lv.expect_same_shape(tv)?;
        if lv.rank() != 2 {
            return Err(Error::Shape(format!("bernoulli on {:?}", lv.shape())));
        }
        let p = lv.cols();
        let data: Vec<f64> = lv
            .data()
            .chunks(p)
            .zip(tv.data().chunks(p))
            .map(|(l, t)| l.iter().zip(t).map(|(&l, &t)| t * l - softplus(l)).sum())
            .collect();
        let ng = self.ng(logits) || self.ng(target);
        Ok(self.push(
            Tensor::from_parts(vec![lv.rows(), 1], data),
            Op::BernoulliLogLik { logits, target },
            ng,
        ))
    }

    /// Gradients of the scalar node `loss` with respect to every parameter
    /// leaf on the tape.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::from_parts(lv.shape().to_vec(), vec![1.0]));
        let mut params: Vec<Option<Tensor>> = Vec::new();

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            self.propagate(idx, &g, &mut grads, &mut params)?;
            let produced_nan = node
                .op
                .parents()
                .iter()
                .any(|p| grads[p.0].as_ref().is_some_and(|t| !t.all_finite()));
            if produced_nan || (idx == loss.0 && !g.all_finite()) {
                return Err(Error::NonFiniteGradient {
                    node: idx,
                    op: node.op.name(),
                });
            }
        }
        Ok(Gradients { grads: params })
    }

    fn propagate(
        &self,
        idx: usize,
        g: &Tensor,
        grads: &mut [Option<Tensor>],
        params: &mut Vec<Option<Tensor>>,
    ) -> Result<()> {
        let node = &self.nodes[idx];
        let val = &node.value;
        let send = |grads: &mut [Option<Tensor>], to: Var, t: Tensor| {
            if !self.nodes[to.0].needs_grad {
                return;
            }
            match &mut grads[to.0] {
                Some(existing) => {
                    for (e, v) in existing.data_mut().iter_mut().zip(t.data()) {
                        *e += v;
                    }
                }
                slot @ None => *slot = Some(t),
            }
        };
        match &node.op {
            Op::Input => {}
            Op::Param(id) => {
                let i = id.index();
                if params.len() <= i {
                    params.resize(i + 1, None);
                }
                match &mut params[i] {
                    Some(existing) => {
                        for (e, v) in existing.data_mut().iter_mut().zip(g.data()) {
                            *e += v;
                        }
                    }
                    slot @ None => *slot = Some(g.clone()),
                }
            }
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                if self.ng(*a) {
                    let mut ga = vec![0.0; m * k];
                    gemm(g.data(), false, bv.data(), true, m, n, k, &mut ga, false);
                    send(grads, *a, Tensor::from_parts(vec![m, k], ga));
                }
                if self.ng(*b) {
                    let mut gb = vec![0.0; k * n];
                    gemm(av.data(), true, g.data(), false, k, m, n, &mut gb, false);
                    send(grads, *b, Tensor::from_parts(vec![k, n], gb));
                }
            }
            Op::AddBias(a, b) => {
                send(grads, *a, g.clone());
                if self.ng(*b) {
                    let n = g.cols();
                    let mut gb = vec![0.0; n];
                    for row in g.data().chunks(n) {
                        for (o, v) in gb.iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                    let shape = self.value(*b).shape().to_vec();
                    send(grads, *b, Tensor::from_parts(shape, gb));
                }
            }
            Op::Add(a, b) => {
                send(grads, *a, g.clone());
                send(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                send(grads, *a, g.clone());
                send(grads, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.ng(*a) {
                    send(grads, *a, g.zip_map(bv, |g, b| g * b)?);
                }
                if self.ng(*b) {
                    send(grads, *b, g.zip_map(av, |g, a| g * a)?);
                }
            }
            Op::Scale(a, c) => send(grads, *a, g.map(|v| c * v)),
            Op::AddScalar(a) => send(grads, *a, g.clone()),
            Op::Square(a) => send(grads, *a, g.zip_map(self.value(*a), |g, x| 2.0 * g * x)?),
            Op::Tanh(a) => send(grads, *a, g.zip_map(val, |g, y| g * (1.0 - y * y))?),
            Op::Exp(a) => send(grads, *a, g.zip_map(val, |g, y| g * y)?),
            Op::Softplus(a) => {
                send(grads, *a, g.zip_map(self.value(*a), |g, x| g * sigmoid(x))?)
            }
            Op::Clamp(a, lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                send(
                    grads,
                    *a,
                    g.zip_map(self.value(*a), |g, x| if x >= lo && x <= hi { g } else { 0.0 })?,
                )
            }
            Op::SliceCols(a, start) => {
                let av = self.value(*a);
                let (m, n) = (av.rows(), av.cols());
                let w = g.cols();
                let mut ga = vec![0.0; m * n];
                for i in 0..m {
                    ga[i * n + start..i * n + start + w].copy_from_slice(g.row(i));
                }
                send(grads, *a, Tensor::from_parts(vec![m, n], ga));
            }
            Op::SumAll(a) => {
                let gv = g.data()[0];
                send(grads, *a, Tensor::full(self.value(*a).shape(), gv));
            }
            Op::MeanAll(a) => {
                let av = self.value(*a);
                let gv = g.data()[0] / av.len() as f64;
                send(grads, *a, Tensor::full(av.shape(), gv));
            }
            Op::SumLastAxis(a) => {
                let av = self.value(*a);
                let d = av.cols();
                let mut ga = Vec::with_capacity(av.len());
                for &gv in g.data() {
                    ga.extend(std::iter::repeat_n(gv, d));
                }
                send(grads, *a, Tensor::from_parts(av.shape().to_vec(), ga));
            }
            Op::PairwiseGaussian { z, mean, log_var } => {
                let (zv, mv, lv) = (self.value(*z), self.value(*mean), self.value(*log_var));
                let (a, c, d) = (zv.rows(), mv.rows(), zv.cols());
                let inv_var: Vec<f64> = lv.data().iter().map(|l| (-l).exp()).collect();
                let mut gz = vec![0.0; a * d];
                let mut gm = vec![0.0; c * d];
                let mut gl = vec![0.0; c * d];
                for i in 0..a {
                    for m in 0..c {
                        let base = (i * c + m) * d;
                        for k in 0..d {
                            let gv = g.data()[base + k];
                            let diff = zv.data()[i * d + k] - mv.data()[m * d + k];
                            let iv = inv_var[m * d + k];
                            let r = diff * iv;
                            gz[i * d + k] -= gv * r;
                            gm[m * d + k] += gv * r;
                            gl[m * d + k] += gv * 0.5 * (diff * r - 1.0);
                        }
                    }
                }
                send(grads, *z, Tensor::from_parts(vec![a, d], gz));
                send(grads, *mean, Tensor::from_parts(vec![c, d], gm));
                send(grads, *log_var, Tensor::from_parts(vec![c, d], gl));
            }
            Op::LogSumExpPairs { x, log_weights } => {
                let xv = self.value(*x);
                let (a, c, d) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
                let mut gx = vec![0.0; a * c * d];
                for i in 0..a {
                    for m in 0..c {
                        let w = log_weights.as_ref().map_or(0.0, |w| w.data()[i * c + m]);
                        for k in 0..d {
                            let o = val.data()[i * d + k];
                            if o == f64::NEG_INFINITY {
                                continue;
                            }
                            let p = (xv.data()[(i * c + m) * d + k] + w - o).exp();
                            gx[(i * c + m) * d + k] = g.data()[i * d + k] * p;
                        }
                    }
                }
                send(grads, *x, Tensor::from_parts(vec![a, c, d], gx));
            }
            Op::BernoulliLogLik { logits, target } => {
                let (lv, tv) = (self.value(*logits), self.value(*target));
                let p = lv.cols();
                if self.ng(*logits) {
                    let mut gl = Vec::with_capacity(lv.len());
                    for (r, gv) in g.data().iter().enumerate() {
                        for k in 0..p {
                            let i = r * p + k;
                            gl.push(gv * (tv.data()[i] - sigmoid(lv.data()[i])));
                        }
                    }
                    send(grads, *logits, Tensor::from_parts(lv.shape().to_vec(), gl));
                }
                if self.ng(*target) {
                    let mut gt = Vec::with_capacity(lv.len());
                    for (r, gv) in g.data().iter().enumerate() {
                        gt.extend(lv.row(r).iter().map(|l| gv * l));
                    }
                    send(grads, *target, Tensor::from_parts(tv.shape().to_vec(), gt));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(t: Tensor) -> (ParamStore, ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("w", t);
        (s, id)
    }

    #[test]
    fn grad_of_sum_is_ones() {
        let (store, id) = store_with(Tensor::new(vec![2, 3], vec![1., -2., 3., 0.5, 0., 9.]).unwrap());
        let mut g = Graph::new();
        let w = g.param(&store, id);
        let s = g.sum(w);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(id).unwrap().data(), &[1.0; 6]);
    }

    #[test]
    fn grad_of_half_square_norm_is_identity() {
        let data = vec![0.3, -1.2, 2.0, 4.5];
        let (store, id) = store_with(Tensor::new(vec![4], data.clone()).unwrap());
        let mut g = Graph::new();
        let w = g.param(&store, id);
        let sq = g.square(w);
        let s = g.sum(sq);
        let half = g.scale(s, 0.5);
        let grads = g.backward(half).unwrap();
        assert_eq!(grads.get(id).unwrap().data(), data.as_slice());
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let (store, id) = store_with(Tensor::zeros(&[3]));
        let mut g = Graph::new();
        let w = g.param(&store, id);
        assert!(matches!(g.backward(w), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn nan_in_backward_names_node() {
        let (store, id) = store_with(Tensor::new(vec![1], vec![f64::NAN]).unwrap());
        let mut g = Graph::new();
        let w = g.param(&store, id);
        let sq = g.square(w);
        let s = g.sum(sq);
        match g.backward(s) {
            Err(Error::NonFiniteGradient { op, node }) => {
                assert_eq!(op, "square");
                assert_eq!(node, sq.index());
            }
            other => panic!("expected NaN error, got {other:?}"),
        }
    }

    #[test]
    fn constants_receive_no_gradient() {
        let (store, id) = store_with(Tensor::ones(&[2, 2]));
        let mut g = Graph::new();
        let x = g.input(Tensor::ones(&[2, 2]));
        let w = g.param(&store, id);
        let y = g.matmul(x, w).unwrap();
        let s = g.sum(y);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.iter().count(), 1);
    }
}
