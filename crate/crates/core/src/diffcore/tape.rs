//! Reverse-mode tape over batched matrix primitives.
//!
//! Every value on the tape is a [`Matrix`] whose rows are batch items. Nodes
//! are appended in evaluation order, so the node list is already a
//! topological order and [`Tape::backward`] is a single reverse sweep.

use super::matrix::Matrix;
use super::params::{ParamId, ParamStore};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Power nodes evaluate at `max(x, POWER_FLOOR)` so that `x^b` with `b < 1`
/// keeps a bounded slope at zero concentration.
pub const POWER_FLOOR: f64 = 1e-12;

/// Batch statistics produced by a training-mode batchnorm node.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Unbiased (n − 1) variance, as used for running estimates.
    pub var: Vec<f64>,
}

#[derive(Debug)]
enum Op {
    Constant,
    Input,
    Param(ParamId),
    Affine {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Relu(Var),
    Sigmoid(Var),
    ScaledSigmoid {
        x: Var,
        scale: f64,
    },
    Softmax(Var),
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Matrix,
        inv_std: Vec<f64>,
    },
    FrozenBatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Matrix,
        inv_std: Vec<f64>,
    },
    Power {
        x: Var,
        exponents: Vec<f64>,
    },
    Add(Var, Var),
    AddConst(Var),
    MulConst {
        x: Var,
        factor: Matrix,
    },
    Scale {
        x: Var,
        factor: f64,
    },
    Concat(Vec<Var>),
    Slice {
        x: Var,
        start: usize,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Matrix,
    },
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Matrix,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    adjoints: Vec<Option<Matrix>>,
}

fn stable_sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn softmax_rows(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

fn shape_err(op: &str, detail: String) -> Error {
    Error::Shape(format!("{op}: {detail}"))
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

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Adjoint of an [`Tape::input`] leaf after [`Tape::backward`].
    pub fn adjoint(&self, v: Var) -> Option<&Matrix> {
        self.adjoints.get(v.0).and_then(Option::as_ref)
    }

    fn push(&mut self, op: Op, value: Matrix, needs_grad: bool) -> Var {
        self.nodes.push(Node { op, value, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Leaf that receives no gradient (data, noise draws, fixed gains).
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(Op::Constant, value, false)
    }

    /// Leaf whose adjoint is kept after backward, for input sensitivities.
    pub fn input(&mut self, value: Matrix) -> Var {
        self.push(Op::Input, value, true)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(Op::Param(id), store.value(id).clone(), true)
    }

    /// `x · w + b` with `b` broadcast over rows.
    pub fn affine(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        if xv.cols() != wv.rows() {
            return Err(shape_err(
                "affine",
                format!("input {:?} vs weight {:?}", xv.shape(), wv.shape()),
            ));
        }
        let mut out = xv.matmul(wv);
        if let Some(b) = b {
            let bv = self.value(b);
            if bv.shape() != (1, out.cols()) {
                return Err(shape_err(
                    "affine",
                    format!("bias {:?} vs output width {}", bv.shape(), out.cols()),
                ));
            }
            for r in 0..out.rows() {
                for (o, bias) in out.row_mut(r).iter_mut().zip(bv.as_slice()) {
                    *o += bias;
                }
            }
        }
        let g = self.grad(x) || self.grad(w) || b.is_some_and(|b| self.grad(b));
        Ok(self.push(Op::Affine { x, w, b }, out, g))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(0.0));
        let g = self.grad(x);
        self.push(Op::Relu(x), out, g)
    }

    /// Elementwise `max(0, x)`; the same node as [`Tape::relu`].
    pub fn clip_at_zero(&mut self, x: Var) -> Var {
        self.relu(x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(stable_sigmoid);
        let g = self.grad(x);
        self.push(Op::Sigmoid(x), out, g)
    }

    /// `scale · sigmoid(x)`.
    pub fn scaled_sigmoid(&mut self, x: Var, scale: f64) -> Var {
        let out = self.value(x).map(|v| scale * stable_sigmoid(v));
        let g = self.grad(x);
        self.push(Op::ScaledSigmoid { x, scale }, out, g)
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, x: Var) -> Var {
        let out = softmax_rows(self.value(x));
        let g = self.grad(x);
        self.push(Op::Softmax(x), out, g)
    }

    /// Batchnorm with batch statistics (biased variance in the normalizer).
    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<(Var, BatchStats)> {
        let xv = self.value(x);
        let (n, d) = xv.shape();
        if n == 0 {
            return Err(shape_err("batch_norm", "empty batch".into()));
        }
        self.check_affine_params("batch_norm", gamma, beta, d)?;
        let mut mean = vec![0.0; d];
        for r in 0..n {
            for (m, v) in mean.iter_mut().zip(xv.row(r)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut ss = vec![0.0; d];
        for r in 0..n {
            for ((s, v), m) in ss.iter_mut().zip(xv.row(r)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let inv_std: Vec<f64> = ss.iter().map(|s| 1.0 / (s / n as f64 + eps).sqrt()).collect();
        let unbiased = ss
            .iter()
            .map(|s| if n > 1 { s / (n - 1) as f64 } else { 0.0 })
            .collect();
        let mut xhat = xv.clone();
        for r in 0..n {
            for ((v, m), is) in xhat.row_mut(r).iter_mut().zip(&mean).zip(&inv_std) {
                *v = (*v - m) * is;
            }
        }
        let out = self.scale_shift(&xhat, gamma, beta);
        let g = self.grad(x) || self.grad(gamma) || self.grad(beta);
        let stats = BatchStats { mean, var: unbiased };
        let v = self.push(
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            out,
            g,
        );
        Ok((v, stats))
    }

    /// Batchnorm with frozen running statistics.
    pub fn frozen_batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[f64],
        running_var: &[f64],
        eps: f64,
    ) -> Result<Var> {
        let xv = self.value(x);
        let d = xv.cols();
        self.check_affine_params("frozen_batch_norm", gamma, beta, d)?;
        if running_mean.len() != d || running_var.len() != d {
            return Err(shape_err(
                "frozen_batch_norm",
                format!("running stats of length {} vs width {d}", running_mean.len()),
            ));
        }
        let inv_std: Vec<f64> = running_var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = xv.clone();
        for r in 0..xhat.rows() {
            for ((v, m), is) in xhat.row_mut(r).iter_mut().zip(running_mean).zip(&inv_std) {
                *v = (*v - m) * is;
            }
        }
        let out = self.scale_shift(&xhat, gamma, beta);
        let g = self.grad(x) || self.grad(gamma) || self.grad(beta);
        Ok(self.push(
            Op::FrozenBatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            out,
            g,
        ))
    }

    fn check_affine_params(&self, op: &str, gamma: Var, beta: Var, d: usize) -> Result<()> {
        for p in [gamma, beta] {
            if self.value(p).shape() != (1, d) {
                return Err(shape_err(
                    op,
                    format!("scale/shift {:?} vs width {d}", self.value(p).shape()),
                ));
            }
        }
        Ok(())
    }

    fn scale_shift(&self, xhat: &Matrix, gamma: Var, beta: Var) -> Matrix {
        let (gv, bv) = (self.value(gamma).as_slice(), self.value(beta).as_slice());
        let mut out = xhat.clone();
        for r in 0..out.rows() {
            for ((o, g), b) in out.row_mut(r).iter_mut().zip(gv).zip(bv) {
                *o = *o * g + b;
            }
        }
        out
    }

    /// Elementwise `max(x, POWER_FLOOR)^b` with one exponent per column.
    pub fn power(&mut self, x: Var, exponents: Vec<f64>) -> Result<Var> {
        let xv = self.value(x);
        if exponents.len() != xv.cols() {
            return Err(shape_err(
                "power",
                format!("{} exponents for width {}", exponents.len(), xv.cols()),
            ));
        }
        let mut out = xv.clone();
        for r in 0..out.rows() {
            for (v, b) in out.row_mut(r).iter_mut().zip(&exponents) {
                *v = v.max(POWER_FLOOR).powf(*b);
            }
        }
        let g = self.grad(x);
        Ok(self.push(Op::Power { x, exponents }, out, g))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err("add", format!("{:?} vs {:?}", av.shape(), bv.shape())));
        }
        let mut out = av.clone();
        out.add_assign(bv);
        let g = self.grad(a) || self.grad(b);
        Ok(self.push(Op::Add(a, b), out, g))
    }

    /// `x + c` for a constant `c` of the same shape.
    pub fn add_const(&mut self, x: Var, c: &Matrix) -> Result<Var> {
        let xv = self.value(x);
        if xv.shape() != c.shape() {
            return Err(shape_err("add_const", format!("{:?} vs {:?}", xv.shape(), c.shape())));
        }
        let mut out = xv.clone();
        out.add_assign(c);
        let g = self.grad(x);
        Ok(self.push(Op::AddConst(x), out, g))
    }

    /// Elementwise product with a constant of the same shape.
    pub fn mul_const(&mut self, x: Var, factor: Matrix) -> Result<Var> {
        let xv = self.value(x);
        if xv.shape() != factor.shape() {
            return Err(shape_err(
                "mul_const",
                format!("{:?} vs {:?}", xv.shape(), factor.shape()),
            ));
        }
        let mut out = xv.clone();
        for (o, f) in out.as_mut_slice().iter_mut().zip(factor.as_slice()) {
            *o *= f;
        }
        let g = self.grad(x);
        Ok(self.push(Op::MulConst { x, factor }, out, g))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let out = self.value(x).map(|v| v * factor);
        let g = self.grad(x);
        self.push(Op::Scale { x, factor }, out, g)
    }

    /// Column-wise concatenation.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(shape_err("concat", "no inputs".into()));
        };
        let rows = self.value(first).rows();
        let mut width = 0;
        for &p in parts {
            if self.value(p).rows() != rows {
                return Err(shape_err(
                    "concat",
                    format!("row count {} vs {rows}", self.value(p).rows()),
                ));
            }
            width += self.value(p).cols();
        }
        let mut out = Matrix::zeros(rows, width);
        for r in 0..rows {
            let mut off = 0;
            for &p in parts {
                let src = self.value(p).row(r);
                out.row_mut(r)[off..off + src.len()].copy_from_slice(src);
                off += src.len();
            }
        }
        let g = parts.iter().any(|&p| self.grad(p));
        Ok(self.push(Op::Concat(parts.to_vec()), out, g))
    }

    /// Columns `start..start + len`.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        if start + len > xv.cols() {
            return Err(shape_err(
                "slice",
                format!("{start}..{} exceeds width {}", start + len, xv.cols()),
            ));
        }
        let mut out = Matrix::zeros(xv.rows(), len);
        for r in 0..xv.rows() {
            out.row_mut(r).copy_from_slice(&xv.row(r)[start..start + len]);
        }
        let g = self.grad(x);
        Ok(self.push(Op::Slice { x, start }, out, g))
    }

    /// Mean over rows of `−ln softmax(logits)[target]`, a 1×1 node.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        if lv.rows() != targets.len() || lv.rows() == 0 {
            return Err(shape_err(
                "softmax_cross_entropy",
                format!("{} rows vs {} targets", lv.rows(), targets.len()),
            ));
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= lv.cols()) {
            return Err(Error::Usage(format!(
                "target {t} out of range for {} classes",
                lv.cols()
            )));
        }
        let mut total = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            let row = lv.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += lse - row[t];
        }
        let probs = softmax_rows(lv);
        let out = Matrix::row_vector(vec![total / targets.len() as f64]);
        let g = self.grad(logits);
        Ok(self.push(
            Op::SoftmaxCrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            out,
            g,
        ))
    }

    /// Reverse sweep from a scalar node; parameter gradients are accumulated
    /// into `store`, input-leaf adjoints are kept on the tape.
    pub fn backward(&mut self, loss: Var, store: &mut ParamStore) -> Result<()> {
        if self.value(loss).shape() != (1, 1) {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got {:?}",
                self.value(loss).shape()
            )));
        }
        let mut adj: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[loss.0] = Some(Matrix::filled(1, 1, 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(upstream) = adj[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Constant => {}
                Op::Input => {
                    adj[idx] = Some(upstream);
                }
                Op::Param(id) => store.accumulate_grad(*id, &upstream)?,
                Op::Affine { x, w, b } => {
                    if self.grad(*x) {
                        let dx = upstream.matmul_t(self.value(*w));
                        accumulate(&mut adj, *x, dx);
                    }
                    if self.grad(*w) {
                        let dw = self.value(*x).t_matmul(&upstream);
                        accumulate(&mut adj, *w, dw);
                    }
                    if let Some(b) = b {
                        if self.grad(*b) {
                            accumulate(&mut adj, *b, upstream.column_sums());
                        }
                    }
                }
                Op::Relu(x) => {
                    let xv = self.value(*x);
                    let mut dx = upstream;
                    for (d, v) in dx.as_mut_slice().iter_mut().zip(xv.as_slice()) {
                        if *v <= 0.0 {
                            *d = 0.0;
                        }
                    }
                    accumulate(&mut adj, *x, dx);
                }
                Op::Sigmoid(x) => {
                    let mut dx = upstream;
                    for (d, s) in dx.as_mut_slice().iter_mut().zip(node.value.as_slice()) {
                        *d *= s * (1.0 - s);
                    }
                    accumulate(&mut adj, *x, dx);
                }
                Op::ScaledSigmoid { x, scale } => {
                    let mut dx = upstream;
                    for (d, y) in dx.as_mut_slice().iter_mut().zip(node.value.as_slice()) {
                        let s = y / scale;
                        *d *= scale * s * (1.0 - s);
                    }
                    accumulate(&mut adj, *x, dx);
                }
                Op::Softmax(x) => {
                    let p = &node.value;
                    let mut dx = upstream;
                    for r in 0..dx.rows() {
                        let pr = p.row(r);
                        let dot: f64 = dx.row(r).iter().zip(pr).map(|(a, b)| a * b).sum();
                        for (d, pv) in dx.row_mut(r).iter_mut().zip(pr) {
                            *d = pv * (*d - dot);
                        }
                    }
                    accumulate(&mut adj, *x, dx);
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let (n, d) = xhat.shape();
                    let gv = self.value(*gamma).as_slice();
                    let mut dgamma = Matrix::zeros(1, d);
                    let mut sum_dxhat = vec![0.0; d];
                    let mut sum_dxhat_xhat = vec![0.0; d];
                    for r in 0..n {
                        for c in 0..d {
                            let dy = upstream.get(r, c);
                            let xh = xhat.get(r, c);
                            dgamma.as_mut_slice()[c] += dy * xh;
                            let dxh = dy * gv[c];
                            sum_dxhat[c] += dxh;
                            sum_dxhat_xhat[c] += dxh * xh;
                        }
                    }
                    if self.grad(*x) {
                        let nf = n as f64;
                        let mut dx = Matrix::zeros(n, d);
                        for r in 0..n {
                            for c in 0..d {
                                let dxh = upstream.get(r, c) * gv[c];
                                let v =
                                    inv_std[c] / nf * (nf * dxh - sum_dxhat[c] - xhat.get(r, c) * sum_dxhat_xhat[c]);
                                dx.set(r, c, v);
                            }
                        }
                        accumulate(&mut adj, *x, dx);
                    }
                    if self.grad(*gamma) {
                        accumulate(&mut adj, *gamma, dgamma);
                    }
                    if self.grad(*beta) {
                        accumulate(&mut adj, *beta, upstream.column_sums());
                    }
                }
                Op::FrozenBatchNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let gv = self.value(*gamma).as_slice();
                    if self.grad(*x) {
                        let mut dx = upstream.clone();
                        for r in 0..dx.rows() {
                            for ((d, g), is) in dx.row_mut(r).iter_mut().zip(gv).zip(inv_std) {
                                *d *= g * is;
                            }
                        }
                        accumulate(&mut adj, *x, dx);
                    }
                    if self.grad(*gamma) {
                        let mut prod = upstream.clone();
                        for (p, xh) in prod.as_mut_slice().iter_mut().zip(xhat.as_slice()) {
                            *p *= xh;
                        }
                        accumulate(&mut adj, *gamma, prod.column_sums());
                    }
                    if self.grad(*beta) {
                        accumulate(&mut adj, *beta, upstream.column_sums());
                    }
                }
                Op::Power { x, exponents } => {
                    let xv = self.value(*x);
                    let mut dx = upstream;
                    for r in 0..dx.rows() {
                        for ((d, v), b) in dx.row_mut(r).iter_mut().zip(xv.row(r)).zip(exponents) {
                            *d *= if *v >= POWER_FLOOR { b * v.powf(b - 1.0) } else { 0.0 };
                        }
                    }
                    accumulate(&mut adj, *x, dx);
                }
                Op::Add(a, b) => {
                    if self.grad(*a) {
                        accumulate(&mut adj, *a, upstream.clone());
                    }
                    if self.grad(*b) {
                        accumulate(&mut adj, *b, upstream);
                    }
                }
                Op::AddConst(x) => accumulate(&mut adj, *x, upstream),
                Op::MulConst { x, factor } => {
                    let mut dx = upstream;
                    for (d, f) in dx.as_mut_slice().iter_mut().zip(factor.as_slice()) {
                        *d *= f;
                    }
                    accumulate(&mut adj, *x, dx);
                }
                Op::Scale { x, factor } => {
                    let dx = upstream.map(|v| v * factor);
                    accumulate(&mut adj, *x, dx);
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let w = self.value(p).cols();
                        if self.grad(p) {
                            let mut dp = Matrix::zeros(upstream.rows(), w);
                            for r in 0..upstream.rows() {
                                dp.row_mut(r).copy_from_slice(&upstream.row(r)[off..off + w]);
                            }
                            accumulate(&mut adj, p, dp);
                        }
                        off += w;
                    }
                }
                Op::Slice { x, start } => {
                    let (rows, cols) = self.value(*x).shape();
                    let mut dx = Matrix::zeros(rows, cols);
                    let w = upstream.cols();
                    for r in 0..rows {
                        dx.row_mut(r)[*start..*start + w].copy_from_slice(upstream.row(r));
                    }
                    accumulate(&mut adj, *x, dx);
                }
                Op::SoftmaxCrossEntropy { logits, targets, probs } => {
                    let scale = upstream.get(0, 0) / targets.len() as f64;
                    let mut dx = probs.clone();
                    for (r, &t) in targets.iter().enumerate() {
                        let row = dx.row_mut(r);
                        row[t] -= 1.0;
                        row.iter_mut().for_each(|v| *v *= scale);
                    }
                    accumulate(&mut adj, *logits, dx);
                }
            }
        }
        self.adjoints = adj;
        Ok(())
    }
}

fn accumulate(adj: &mut [Option<Matrix>], v: Var, delta: Matrix) {
    match &mut adj[v.0] {
        Some(existing) => existing.add_assign(&delta),
        slot @ None => *slot = Some(delta),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn relu_clips_negative_entries() {
        let mut t = Tape::new();
        let x = t.constant(m(&[&[-1.0, 0.0, 2.0]]));
        let y = t.relu(x);
        assert_eq!(t.value(y).as_slice(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let mut t = Tape::new();
        let x = t.constant(Matrix::zeros(1, 4));
        let y = t.softmax(x);
        assert_eq!(t.value(y).as_slice(), &[0.25; 4]);
    }

    #[test]
    fn scaled_sigmoid_at_zero_is_half_scale() {
        let mut t = Tape::new();
        let x = t.constant(Matrix::zeros(1, 1));
        let y = t.scaled_sigmoid(x, 2e4);
        assert_eq!(t.value(y).get(0, 0), 1e4);
    }

    #[test]
    fn linear_loss_gradient() {
        let mut store = ParamStore::new();
        let w = store.add("w", Matrix::filled(1, 1, 3.0));
        let mut t = Tape::new();
        let x = t.constant(Matrix::filled(1, 1, 2.0));
        let wv = t.param(&store, w);
        let loss = t.affine(x, wv, None).unwrap();
        assert_eq!(t.value(loss).get(0, 0), 6.0);
        t.backward(loss, &mut store).unwrap();
        assert_eq!(store.grad(w).get(0, 0), 2.0);
    }

    #[test]
    fn clipped_region_passes_no_gradient() {
        let mut store = ParamStore::new();
        let mut t = Tape::new();
        let x = t.input(Matrix::filled(1, 1, -5.0));
        let y = t.clip_at_zero(x);
        let y = t.scale(y, 7.0);
        t.backward(y, &mut store).unwrap();
        assert_eq!(t.adjoint(x).unwrap().get(0, 0), 0.0);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut store = ParamStore::new();
        let mut t = Tape::new();
        let x = t.input(Matrix::zeros(2, 1));
        assert!(matches!(t.backward(x, &mut store), Err(Error::Usage(_))));
    }

    #[test]
    fn shape_mismatches_are_reported() {
        let mut t = Tape::new();
        let a = t.constant(Matrix::zeros(2, 3));
        let b = t.constant(Matrix::zeros(2, 2));
        assert!(matches!(t.add(a, b), Err(Error::Shape(_))));
        assert!(matches!(t.affine(a, b, None), Err(Error::Shape(_))));
        assert!(matches!(t.slice(a, 2, 2), Err(Error::Shape(_))));
        assert!(t.power(a, vec![1.0]).is_err());
    }
}
