//! Reverse-mode differentiation over a linear tape of matrix operations.
//!
//! Every operation is evaluated eagerly when it is pushed, so the value of any
//! [`Var`] is available immediately. [`Tape::backward`] replays the tape in
//! reverse and returns a [`Gradients`] table indexed by `Var`.
//!
//! Layers with fused kernels (graph attention, causal convolution, the
//! selective scan, the Cox partial likelihood) register themselves through
//! [`Tape::custom`] with a [`CustomOp`] that owns whatever forward state the
//! backward pass needs.

use super::matrix::{Matrix, Real};
use super::ops::sigmoid;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug)]
pub enum Unary<T> {
    Relu,
    Elu,
    Sigmoid,
    Silu,
    Softplus,
    Exp,
    LeakyRelu(T),
}

impl<T: Real> Unary<T> {
    #[inline]
    fn apply(self, x: T) -> T {
        match self {
            Unary::Relu => x.max(T::zero()),
            Unary::Elu => {
                if x > T::zero() {
                    x
                } else {
                    x.exp_m1()
                }
            }
            Unary::Sigmoid => sigmoid(x),
            Unary::Silu => x * sigmoid(x),
            Unary::Softplus => super::ops::softplus(x),
            Unary::Exp => x.exp(),
            Unary::LeakyRelu(slope) => {
                if x > T::zero() {
                    x
                } else {
                    slope * x
                }
            }
        }
    }

    /// Derivative given input `x` and output `y`.
    #[inline]
    fn derivative(self, x: T, y: T) -> T {
        match self {
            Unary::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Unary::Elu => {
                if x > T::zero() {
                    T::one()
                } else {
                    y + T::one()
                }
            }
            Unary::Sigmoid => y * (T::one() - y),
            Unary::Silu => {
                let s = sigmoid(x);
                s * (T::one() + x * (T::one() - s))
            }
            Unary::Softplus => sigmoid(x),
            Unary::Exp => y,
            Unary::LeakyRelu(slope) => {
                if x > T::zero() {
                    T::one()
                } else {
                    slope
                }
            }
        }
    }
}

/// Backward rule for a fused operation recorded with [`Tape::custom`].
pub trait CustomOp<T: Real>: Send + Sync {
    /// Returns one gradient per input (same order as recorded), `None` when an
    /// input receives no gradient.
    fn backward(
        &self,
        inputs: &[&Matrix<T>],
        output: &Matrix<T>,
        grad_output: &Matrix<T>,
    ) -> Vec<Option<Matrix<T>>>;
}

enum Op<T: Real> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, T),
    MulConst(Var, Matrix<T>),
    Unary(Var, Unary<T>),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    MeanRows(Var),
    SumAll(Var),
    MaxAll(Var, usize),
    BceLogits(Var, T),
    LayerNormRows { x: Var, gamma: Var, beta: Var, xhat: Matrix<T>, inv_std: Vec<T> },
    LogSoftmaxRows(Var),
    Custom(Vec<Var>, Box<dyn CustomOp<T>>),
}

struct Node<T: Real> {
    value: Matrix<T>,
    op: Op<T>,
    needs_grad: bool,
}

pub struct Tape<T: Real> {
    nodes: Vec<Node<T>>,
    recording: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), recording: true }
    }

    /// A tape for inference. Custom ops may skip saving backward state.
    pub fn inference() -> Self {
        Self { nodes: Vec::new(), recording: false }
    }

    pub fn recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix<T> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> T {
        let m = self.value(v);
        debug_assert_eq!(m.len(), 1);
        m.data()[0]
    }

    fn push(&mut self, value: Matrix<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad: needs_grad && self.recording });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Trainable leaf.
    pub fn leaf(&mut self, value: Matrix<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Matrix<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::MatMul(a, b), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Mul(a, b), ng)
    }

    /// `x (n×c) + row (1×c)` broadcast over rows.
    pub fn add_row(&mut self, x: Var, row: Var) -> Var {
        let (xm, rm) = (self.value(x), self.value(row));
        assert_eq!((1, xm.cols()), rm.shape(), "add_row expects a 1×cols row");
        let mut v = xm.clone();
        for r in 0..v.rows() {
            for (o, &b) in v.row_mut(r).iter_mut().zip(rm.data()) {
                *o += b;
            }
        }
        let ng = self.ng(x) || self.ng(row);
        self.push(v, Op::AddRow(x, row), ng)
    }

    /// `x (n×c) ⊙ row (1×c)` broadcast over rows.
    pub fn mul_row(&mut self, x: Var, row: Var) -> Var {
        let (xm, rm) = (self.value(x), self.value(row));
        assert_eq!((1, xm.cols()), rm.shape(), "mul_row expects a 1×cols row");
        let mut v = xm.clone();
        for r in 0..v.rows() {
            for (o, &b) in v.row_mut(r).iter_mut().zip(rm.data()) {
                *o *= b;
            }
        }
        let ng = self.ng(x) || self.ng(row);
        self.push(v, Op::MulRow(x, row), ng)
    }

    /// `x (n×c) ⊙ col (n×1)` broadcast over columns.
    pub fn mul_col(&mut self, x: Var, col: Var) -> Var {
        let (xm, cm) = (self.value(x), self.value(col));
        assert_eq!((xm.rows(), 1), cm.shape(), "mul_col expects an n×1 column");
        let mut v = xm.clone();
        for r in 0..v.rows() {
            let s = cm.data()[r];
            v.row_mut(r).iter_mut().for_each(|o| *o *= s);
        }
        let ng = self.ng(x) || self.ng(col);
        self.push(v, Op::MulCol(x, col), ng)
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let v = self.value(x).map(|a| a * s);
        let ng = self.ng(x);
        self.push(v, Op::Scale(x, s), ng)
    }

    /// Elementwise product with a fixed matrix (dropout masks, one-hot selectors).
    pub fn mul_const(&mut self, x: Var, mask: Matrix<T>) -> Var {
        let v = self.value(x).zip_map(&mask, |a, b| a * b);
        let ng = self.ng(x);
        self.push(v, Op::MulConst(x, mask), ng)
    }

    pub fn unary(&mut self, x: Var, f: Unary<T>) -> Var {
        let v = self.value(x).map(|a| f.apply(a));
        let ng = self.ng(x);
        self.push(v, Op::Unary(x, f), ng)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Relu)
    }

    pub fn elu(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Elu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Sigmoid)
    }

    pub fn silu(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Silu)
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Softplus)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Exp)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let mats: Vec<&Matrix<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let v = Matrix::hconcat(&mats);
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(v, Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let xm = self.value(x);
        assert!(start + len <= xm.cols(), "slice_cols out of range");
        let v = Matrix::from_fn(xm.rows(), len, |r, c| xm.get(r, start + c));
        let ng = self.ng(x);
        self.push(v, Op::SliceCols(x, start), ng)
    }

    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Var {
        let v = self.value(x).gather_rows(idx);
        let ng = self.ng(x);
        self.push(v, Op::GatherRows(x, idx.to_vec()), ng)
    }

    /// Column mean, `n×c → 1×c`.
    pub fn mean_rows(&mut self, x: Var) -> Var {
        let v = self.value(x).mean_rows();
        let ng = self.ng(x);
        self.push(v, Op::MeanRows(x), ng)
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let v = Matrix::scalar(self.value(x).sum());
        let ng = self.ng(x);
        self.push(v, Op::SumAll(x), ng)
    }

    /// Largest entry as a `1×1`; the gradient flows to the first maximizer.
    pub fn max_all(&mut self, x: Var) -> Var {
        let xm = self.value(x);
        let mut best = 0;
        for (i, &a) in xm.data().iter().enumerate() {
            if a > xm.data()[best] {
                best = i;
            }
        }
        let v = Matrix::scalar(xm.data()[best]);
        let ng = self.ng(x);
        self.push(v, Op::MaxAll(x, best), ng)
    }

    /// `Σ BCEWithLogits(x_i, y)` over all entries of `x`.
    pub fn bce_logits(&mut self, x: Var, y: T) -> Var {
        let s = self.value(x).data().iter().map(|&l| super::ops::bce_with_logits(l, y)).sum();
        let ng = self.ng(x);
        self.push(Matrix::scalar(s), Op::BceLogits(x, y), ng)
    }

    /// Row-wise layer normalization with affine `gamma`/`beta` rows (`1×c`).
    pub fn layer_norm_rows(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Var {
        let xm = self.value(x);
        let (n, c) = xm.shape();
        let (g, b) = (self.value(gamma), self.value(beta));
        assert_eq!(g.shape(), (1, c), "layer_norm gamma shape");
        assert_eq!(b.shape(), (1, c), "layer_norm beta shape");
        let mut xhat = Matrix::zeros(n, c);
        let mut inv_std = Vec::with_capacity(n);
        let mut out = Matrix::zeros(n, c);
        for r in 0..n {
            let (mean, is) = super::ops::moments(xm.row(r), eps);
            inv_std.push(is);
            for j in 0..c {
                let h = (xm.get(r, j) - mean) * is;
                xhat.set(r, j, h);
                out.set(r, j, g.data()[j] * h + b.data()[j]);
            }
        }
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        self.push(out, Op::LayerNormRows { x, gamma, beta, xhat, inv_std }, ng)
    }

    pub fn log_softmax_rows(&mut self, x: Var) -> Var {
        let xm = self.value(x);
        let mut out = xm.clone();
        for r in 0..out.rows() {
            let lse = super::ops::log_sum_exp(xm.row(r));
            out.row_mut(r).iter_mut().for_each(|v| *v -= lse);
        }
        let ng = self.ng(x);
        self.push(out, Op::LogSoftmaxRows(x), ng)
    }

    /// Records a fused operation whose forward `value` was computed by the caller.
    pub fn custom(&mut self, inputs: &[Var], value: Matrix<T>, op: Box<dyn CustomOp<T>>) -> Var {
        let ng = inputs.iter().any(|&i| self.ng(i));
        self.push(value, Op::Custom(inputs.to_vec(), op), ng)
    }

    /// Gradient of a scalar `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Gradients<T> {
        assert_eq!(self.value(loss).len(), 1, "backward expects a scalar loss");
        self.backward_seeded(&[(loss, Matrix::scalar(T::one()))])
    }

    /// Vector-Jacobian product seeded at arbitrary nodes.
    pub fn backward_seeded(&self, seeds: &[(Var, Matrix<T>)]) -> Gradients<T> {
        let mut grads: Vec<Option<Matrix<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut top = 0;
        for (v, g) in seeds {
            assert_eq!(self.value(*v).shape(), g.shape(), "seed shape mismatch");
            accumulate(&mut grads[v.0], g.clone());
            top = top.max(v.0 + 1);
        }
        for i in (0..top).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn propagate(&self, node: &Node<T>, g: &Matrix<T>, grads: &mut [Option<Matrix<T>>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let want = |v: Var| self.nodes[v.0].needs_grad;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if want(*a) {
                    accumulate(&mut grads[a.0], g.matmul_t(val(*b)));
                }
                if want(*b) {
                    accumulate(&mut grads[b.0], val(*a).t_matmul(g));
                }
            }
            Op::Add(a, b) => {
                if want(*a) {
                    accumulate(&mut grads[a.0], g.clone());
                }
                if want(*b) {
                    accumulate(&mut grads[b.0], g.clone());
                }
            }
            Op::Sub(a, b) => {
                if want(*a) {
                    accumulate(&mut grads[a.0], g.clone());
                }
                if want(*b) {
                    accumulate(&mut grads[b.0], g.map(|x| -x));
                }
            }
            Op::Mul(a, b) => {
                if want(*a) {
                    accumulate(&mut grads[a.0], g.zip_map(val(*b), |x, y| x * y));
                }
                if want(*b) {
                    accumulate(&mut grads[b.0], g.zip_map(val(*a), |x, y| x * y));
                }
            }
            Op::AddRow(x, row) => {
                if want(*x) {
                    accumulate(&mut grads[x.0], g.clone());
                }
                if want(*row) {
                    let mut s = g.mean_rows();
                    s.scale_assign(T::from_usize(g.rows()).unwrap());
                    accumulate(&mut grads[row.0], s);
                }
            }
            Op::MulRow(x, row) => {
                let (xm, rm) = (val(*x), val(*row));
                if want(*x) {
                    let mut dx = g.clone();
                    for r in 0..dx.rows() {
                        for (o, &b) in dx.row_mut(r).iter_mut().zip(rm.data()) {
                            *o *= b;
                        }
                    }
                    accumulate(&mut grads[x.0], dx);
                }
                if want(*row) {
                    let mut dr = Matrix::zeros(1, xm.cols());
                    for r in 0..xm.rows() {
                        for (j, o) in dr.data_mut().iter_mut().enumerate() {
                            *o += g.get(r, j) * xm.get(r, j);
                        }
                    }
                    accumulate(&mut grads[row.0], dr);
                }
            }
            Op::MulCol(x, col) => {
                let (xm, cm) = (val(*x), val(*col));
                if want(*x) {
                    let mut dx = g.clone();
                    for r in 0..dx.rows() {
                        let s = cm.data()[r];
                        dx.row_mut(r).iter_mut().for_each(|o| *o *= s);
                    }
                    accumulate(&mut grads[x.0], dx);
                }
                if want(*col) {
                    let dc: Vec<T> = (0..xm.rows())
                        .map(|r| super::matrix::dot(g.row(r), xm.row(r)))
                        .collect();
                    accumulate(&mut grads[col.0], Matrix::col_vector(dc));
                }
            }
            Op::Scale(x, s) => {
                let s = *s;
                accumulate(&mut grads[x.0], g.map(|v| v * s));
            }
            Op::MulConst(x, mask) => {
                accumulate(&mut grads[x.0], g.zip_map(mask, |a, b| a * b));
            }
            Op::Unary(x, f) => {
                let xm = val(*x);
                let f = *f;
                let mut dx = g.clone();
                for ((d, &xi), &yi) in dx.data_mut().iter_mut().zip(xm.data()).zip(node.value.data()) {
                    *d *= f.derivative(xi, yi);
                }
                accumulate(&mut grads[x.0], dx);
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for p in parts {
                    let w = val(*p).cols();
                    if want(*p) {
                        let part = Matrix::from_fn(g.rows(), w, |r, c| g.get(r, start + c));
                        accumulate(&mut grads[p.0], part);
                    }
                    start += w;
                }
            }
            Op::SliceCols(x, start) => {
                let xm = val(*x);
                let mut dx = Matrix::zeros(xm.rows(), xm.cols());
                for r in 0..g.rows() {
                    dx.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                }
                accumulate(&mut grads[x.0], dx);
            }
            Op::GatherRows(x, idx) => {
                let xm = val(*x);
                let mut dx = Matrix::zeros(xm.rows(), xm.cols());
                for (k, &i) in idx.iter().enumerate() {
                    for (o, &v) in dx.row_mut(i).iter_mut().zip(g.row(k)) {
                        *o += v;
                    }
                }
                accumulate(&mut grads[x.0], dx);
            }
            Op::MeanRows(x) => {
                let xm = val(*x);
                let inv = T::one() / T::from_usize(xm.rows()).unwrap();
                let dx = Matrix::from_fn(xm.rows(), xm.cols(), |_, c| g.data()[c] * inv);
                accumulate(&mut grads[x.0], dx);
            }
            Op::SumAll(x) => {
                let xm = val(*x);
                accumulate(&mut grads[x.0], Matrix::filled(xm.rows(), xm.cols(), g.data()[0]));
            }
            Op::MaxAll(x, at) => {
                let xm = val(*x);
                let mut dx = Matrix::zeros(xm.rows(), xm.cols());
                dx.data_mut()[*at] = g.data()[0];
                accumulate(&mut grads[x.0], dx);
            }
            Op::BceLogits(x, y) => {
                let y = *y;
                let g0 = g.data()[0];
                accumulate(&mut grads[x.0], val(*x).map(|l| (sigmoid(l) - y) * g0));
            }
            Op::LayerNormRows { x, gamma, beta, xhat, inv_std } => {
                let gm = val(*gamma);
                let (n, c) = xhat.shape();
                if want(*gamma) {
                    let mut dg = Matrix::zeros(1, c);
                    for r in 0..n {
                        for j in 0..c {
                            dg.data_mut()[j] += g.get(r, j) * xhat.get(r, j);
                        }
                    }
                    accumulate(&mut grads[gamma.0], dg);
                }
                if want(*beta) {
                    let mut db = g.mean_rows();
                    db.scale_assign(T::from_usize(n).unwrap());
                    accumulate(&mut grads[beta.0], db);
                }
                if want(*x) {
                    let cn = T::from_usize(c).unwrap();
                    let mut dx = Matrix::zeros(n, c);
                    for r in 0..n {
                        let mut s1 = T::zero();
                        let mut s2 = T::zero();
                        for j in 0..c {
                            let dh = g.get(r, j) * gm.data()[j];
                            s1 += dh;
                            s2 += dh * xhat.get(r, j);
                        }
                        let k = inv_std[r] / cn;
                        for j in 0..c {
                            let dh = g.get(r, j) * gm.data()[j];
                            dx.set(r, j, k * (cn * dh - s1 - xhat.get(r, j) * s2));
                        }
                    }
                    accumulate(&mut grads[x.0], dx);
                }
            }
            Op::LogSoftmaxRows(x) => {
                let mut dx = g.clone();
                for r in 0..dx.rows() {
                    let gs: T = g.row(r).iter().copied().sum();
                    for (d, &lp) in dx.row_mut(r).iter_mut().zip(node.value.row(r)) {
                        *d -= lp.exp() * gs;
                    }
                }
                accumulate(&mut grads[x.0], dx);
            }
            Op::Custom(inputs, op) => {
                let ins: Vec<&Matrix<T>> = inputs.iter().map(|&i| val(i)).collect();
                let dins = op.backward(&ins, &node.value, g);
                debug_assert_eq!(dins.len(), inputs.len());
                for (inp, d) in inputs.iter().zip(dins) {
                    if let (true, Some(d)) = (want(*inp), d) {
                        accumulate(&mut grads[inp.0], d);
                    }
                }
            }
        }
    }
}

fn accumulate<T: Real>(slot: &mut Option<Matrix<T>>, g: Matrix<T>) {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => *slot = Some(g),
    }
}

pub struct Gradients<T: Real> {
    grads: Vec<Option<Matrix<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Matrix<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd<F: Fn(&Matrix<f64>) -> f64>(f: F, x: &Matrix<f64>) -> Matrix<f64> {
        let h = 1e-6;
        let mut out = Matrix::zeros(x.rows(), x.cols());
        for i in 0..x.len() {
            let mut p = x.clone();
            p.data_mut()[i] += h;
            let mut m = x.clone();
            m.data_mut()[i] -= h;
            out.data_mut()[i] = (f(&p) - f(&m)) / (2.0 * h);
        }
        out
    }

    fn close(a: &Matrix<f64>, b: &Matrix<f64>, tol: f64) {
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() <= tol * (1.0 + x.abs().max(y.abs())), "{x} vs {y}");
        }
    }

    #[test]
    fn composite_expression_gradient() {
        let x0 = Matrix::from_fn(3, 4, |r, c| 0.3 * r as f64 - 0.2 * c as f64 + 0.1);
        let w = Matrix::from_fn(4, 2, |r, c| 0.5 - 0.25 * (r + c) as f64);
        let f = |x: &Matrix<f64>| {
            let mut t = Tape::new();
            let xv = t.leaf(x.clone());
            let wv = t.constant(w.clone());
            let h = t.matmul(xv, wv);
            let h = t.unary(h, Unary::Elu);
            let g = t.constant(Matrix::row_vector(vec![1.5, -0.5]));
            let b = t.constant(Matrix::row_vector(vec![0.1, 0.2]));
            let n = t.layer_norm_rows(h, g, b, 1e-5);
            let s = t.silu(n);
            let m = t.mean_rows(s);
            let l = t.sum_all(m);
            (t.scalar(l), t, xv, l)
        };
        let (_, t, xv, l) = f(&x0);
        let g = t.backward(l);
        let num = fd(|x| f(x).0, &x0);
        close(g.get(xv).unwrap(), &num, 1e-7);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut t = Tape::<f64>::new();
        let a = t.constant(Matrix::scalar(2.0));
        let b = t.leaf(Matrix::scalar(3.0));
        let c = t.mul(a, b);
        let g = t.backward(c);
        assert!(g.get(a).is_none());
        assert_eq!(g.get(b).unwrap().data(), &[2.0]);
    }

    #[test]
    fn shared_leaf_accumulates() {
        let mut t = Tape::<f64>::new();
        let a = t.leaf(Matrix::scalar(3.0));
        let b = t.mul(a, a);
        let c = t.add(b, a);
        let g = t.backward(c);
        assert_eq!(g.get(a).unwrap().data(), &[7.0]);
    }
}
