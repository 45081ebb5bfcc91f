//! Reverse-mode automatic differentiation over a linear tape.
//!
//! A [`Tape`] records every operation as a node holding its forward
//! value and enough information to push a cotangent back to its
//! parents. [`Tape::backward`] seeds the (scalar) loss node with 1 and
//! walks the tape in reverse, accumulating gradients only through
//! nodes that can reach a gradient leaf. Constants enter as leaves
//! without gradient and are pruned from the backward pass.
//!
//! The op set is exactly what the models and losses in this crate
//! need; each op's reverse rule is the standard vector-Jacobian
//! product written out by hand and covered by finite-difference tests
//! below.

use super::tensor::{
    self, add_bias, concat_cols, matmul, matmul_nt, matmul_tn, sigmoid_scalar, Tensor,
};
use super::Real;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op<F: Real> {
    /// Input tensor; `grad` marks it as a differentiation target.
    Leaf,
    /// `a @ b`.
    MatMul { a: Var, b: Var },
    /// `a + b` with `b` a `1 x m` row broadcast over rows of `a`.
    AddBias { a: Var, b: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    /// Elementwise product.
    Mul { a: Var, b: Var },
    Silu { a: Var },
    Sigmoid { a: Var },
    Exp { a: Var },
    Ln { a: Var },
    Abs { a: Var },
    /// `k * a + c` with scalar constants.
    Affine { a: Var, k: F },
    /// Row `i` of `a` scaled by the constant `w[i]`.
    ScaleRows { a: Var, w: Vec<F> },
    ConcatCols { a: Var, b: Var },
    /// Columns `lo..hi` of `a`.
    SliceCols { a: Var, lo: usize },
    /// `out[i][j] = a[i][0] - b[j][0]` for column vectors `a`, `b`.
    OuterSub { a: Var, b: Var },
    /// `out[i][j] = a[i][j] * s[j][0]`, broadcasting the column
    /// vector `s` across rows.
    MulColsVec { a: Var, s: Var },
    /// `out[i][j] = a[i][j] + s[j][0]`.
    AddColsVec { a: Var, s: Var },
    /// Row sums: `n x m -> n x 1`.
    SumCols { a: Var },
    /// `1 x 1` sum of all entries.
    SumAll { a: Var },
    /// `1 x 1` mean of all entries.
    MeanAll { a: Var },
    /// Per-row log-sum-exp over columns: `n x m -> n x 1`, stabilized
    /// by the (detached) row maximum.
    LogSumExpCols { a: Var },
}

struct Node<F: Real> {
    value: Tensor<F>,
    op: Op<F>,
    needs_grad: bool,
}

/// Gradients returned by [`Tape::backward`], indexed by [`Var`].
/// `None` for nodes the loss does not depend on differentiably.
pub struct Grads<F: Real> {
    g: Vec<Option<Tensor<F>>>,
}

impl<F: Real> Grads<F> {
    pub fn get(&self, v: Var) -> Option<&Tensor<F>> {
        self.g[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<F>> {
        self.g[v.0].take()
    }
}

/// Linear record of a differentiable computation.
pub struct Tape<F: Real> {
    nodes: Vec<Node<F>>,
}

impl<F: Real> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    /// Scalar value of a `1 x 1` node.
    pub fn scalar_value(&self, v: Var) -> F {
        let t = self.value(v);
        assert!(t.rows == 1 && t.cols == 1, "scalar_value on non-scalar");
        t.data[0]
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, needs_grad: bool) -> Var {
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

    /// Differentiation target.
    pub fn leaf(&mut self, t: Tensor<F>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Input held fixed during differentiation.
    pub fn constant(&mut self, t: Tensor<F>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = matmul(self.value(a), self.value(b));
        let g = self.ng(a) || self.ng(b);
        self.push(v, Op::MatMul { a, b }, g)
    }

    pub fn add_bias(&mut self, a: Var, b: Var) -> Var {
        let v = add_bias(self.value(a), self.value(b));
        let g = self.ng(a) || self.ng(b);
        self.push(v, Op::AddBias { a, b }, g)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = tensor::add(self.value(a), self.value(b));
        let g = self.ng(a) || self.ng(b);
        self.push(v, Op::Add { a, b }, g)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = tensor::sub(self.value(a), self.value(b));
        let g = self.ng(a) || self.ng(b);
        self.push(v, Op::Sub { a, b }, g)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = tensor::mul(self.value(a), self.value(b));
        let g = self.ng(a) || self.ng(b);
        self.push(v, Op::Mul { a, b }, g)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.mul(a, a)
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let v = tensor::silu(self.value(a));
        let g = self.ng(a);
        self.push(v, Op::Silu { a }, g)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = tensor::sigmoid(self.value(a));
        let g = self.ng(a);
        self.push(v, Op::Sigmoid { a }, g)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.exp());
        let g = self.ng(a);
        self.push(v, Op::Exp { a }, g)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.ln());
        let g = self.ng(a);
        self.push(v, Op::Ln { a }, g)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.abs());
        let g = self.ng(a);
        self.push(v, Op::Abs { a }, g)
    }

    /// `k * a + c` with f64 constants cast once into `F`.
    pub fn affine(&mut self, a: Var, k: f64, c: f64) -> Var {
        let (kf, cf) = (F::from_f64(k), F::from_f64(c));
        let v = self.value(a).map(|x| kf * x + cf);
        let g = self.ng(a);
        self.push(v, Op::Affine { a, k: kf }, g)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        self.affine(a, k, 0.0)
    }

    /// Scales row `i` by the constant weight `w[i]`.
    pub fn scale_rows(&mut self, a: Var, w: &[f64]) -> Var {
        let t = self.value(a);
        assert_eq!(t.rows, w.len(), "scale_rows: {} rows, {} weights", t.rows, w.len());
        let wf: Vec<F> = w.iter().map(|&x| F::from_f64(x)).collect();
        let mut v = t.clone();
        for i in 0..v.rows {
            let row = &mut v.data[i * v.cols..(i + 1) * v.cols];
            for x in row.iter_mut() {
                *x *= wf[i];
            }
        }
        let g = self.ng(a);
        self.push(v, Op::ScaleRows { a, w: wf }, g)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let v = concat_cols(self.value(a), self.value(b));
        let g = self.ng(a) || self.ng(b);
        self.push(v, Op::ConcatCols { a, b }, g)
    }

    pub fn slice_cols(&mut self, a: Var, lo: usize, hi: usize) -> Var {
        let t = self.value(a);
        assert!(lo < hi && hi <= t.cols, "slice_cols: {lo}..{hi} of {}", t.cols);
        let mut v = Tensor::zeros(t.rows, hi - lo);
        for i in 0..t.rows {
            v.data[i * (hi - lo)..(i + 1) * (hi - lo)].copy_from_slice(&t.row(i)[lo..hi]);
        }
        let g = self.ng(a);
        self.push(v, Op::SliceCols { a, lo }, g)
    }

    /// Pairwise differences of two column vectors:
    /// `out[i][j] = a[i] - b[j]`.
    pub fn outer_sub(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert!(ta.cols == 1 && tb.cols == 1, "outer_sub needs column vectors");
        let (n, m) = (ta.rows, tb.rows);
        let mut v = Tensor::zeros(n, m);
        for i in 0..n {
            for j in 0..m {
                v.data[i * m + j] = ta.data[i] - tb.data[j];
            }
        }
        let g = self.ng(a) || self.ng(b);
        self.push(v, Op::OuterSub { a, b }, g)
    }

    /// Multiplies column `j` of `a` by `s[j]` (column vector `s`).
    pub fn mul_cols_vec(&mut self, a: Var, s: Var) -> Var {
        let (ta, ts) = (self.value(a), self.value(s));
        assert!(ts.cols == 1, "mul_cols_vec: s must be a column vector");
        assert_eq!(ta.cols, ts.rows, "mul_cols_vec: {} cols vs {} scales", ta.cols, ts.rows);
        let mut v = ta.clone();
        for i in 0..v.rows {
            for j in 0..v.cols {
                v.data[i * v.cols + j] *= ts.data[j];
            }
        }
        let g = self.ng(a) || self.ng(s);
        self.push(v, Op::MulColsVec { a, s }, g)
    }

    /// Adds `s[j]` to column `j` of `a`.
    pub fn add_cols_vec(&mut self, a: Var, s: Var) -> Var {
        let (ta, ts) = (self.value(a), self.value(s));
        assert!(ts.cols == 1, "add_cols_vec: s must be a column vector");
        assert_eq!(ta.cols, ts.rows, "add_cols_vec: {} cols vs {} offsets", ta.cols, ts.rows);
        let mut v = ta.clone();
        for i in 0..v.rows {
            for j in 0..v.cols {
                v.data[i * v.cols + j] += ts.data[j];
            }
        }
        let g = self.ng(a) || self.ng(s);
        self.push(v, Op::AddColsVec { a, s }, g)
    }

    /// Row sums as a column vector.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let mut v = Tensor::zeros(t.rows, 1);
        for i in 0..t.rows {
            let mut acc = F::ZERO;
            for &x in t.row(i) {
                acc += x;
            }
            v.data[i] = acc;
        }
        let g = self.ng(a);
        self.push(v, Op::SumCols { a }, g)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let mut acc = F::ZERO;
        for &x in &t.data {
            acc += x;
        }
        let g = self.ng(a);
        self.push(Tensor::scalar(acc), Op::SumAll { a }, g)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let mut acc = F::ZERO;
        for &x in &t.data {
            acc += x;
        }
        let n = F::from_f64((t.rows * t.cols) as f64);
        let g = self.ng(a);
        self.push(Tensor::scalar(acc / n), Op::MeanAll { a }, g)
    }

    /// Per-row `log sum_j exp(a[i][j])`, stabilized by subtracting the
    /// detached row maximum (exact, since log-sum-exp is
    /// shift-invariant and the max takes no gradient).
    pub fn logsumexp_cols(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let mut v = Tensor::zeros(t.rows, 1);
        for i in 0..t.rows {
            let row = t.row(i);
            let mut mx = row[0];
            for &x in row {
                mx = mx.maximum(x);
            }
            let mut acc = F::ZERO;
            for &x in row {
                acc += (x - mx).exp();
            }
            v.data[i] = mx + acc.ln();
        }
        let g = self.ng(a);
        self.push(v, Op::LogSumExpCols { a }, g)
    }

    /// Mean over all entries of the squared difference.
    pub fn mse(&mut self, a: Var, b: Var) -> Var {
        let d = self.sub(a, b);
        let sq = self.square(d);
        self.mean_all(sq)
    }

    /// Reverse pass from a `1 x 1` loss node.
    pub fn backward(&self, loss: Var) -> Grads<F> {
        let lt = self.value(loss);
        assert!(
            lt.rows == 1 && lt.cols == 1,
            "backward: loss must be 1x1, got {}x{}",
            lt.rows,
            lt.cols
        );
        let mut g: Vec<Option<Tensor<F>>> = vec![None; self.nodes.len()];
        if !self.nodes[loss.0].needs_grad {
            return Grads { g };
        }
        g[loss.0] = Some(Tensor::scalar(F::ONE));
        for idx in (0..=loss.0).rev() {
            if g[idx].is_none() || !self.nodes[idx].needs_grad {
                continue;
            }
            let gout = g[idx].take().unwrap();
            self.pull_back(idx, &gout, &mut g);
            g[idx] = Some(gout);
        }
        // Drop gradients of non-leaf nodes the caller cannot use?
        // Keep them: intermediate gradients are cheap at this scale
        // and useful in tests.
        Grads { g }
    }

    fn accumulate(&self, slot: &mut Option<Tensor<F>>, contrib: Tensor<F>) {
        match slot {
            None => *slot = Some(contrib),
            Some(acc) => {
                debug_assert!(acc.same_shape(&contrib));
                for (a, b) in acc.data.iter_mut().zip(&contrib.data) {
                    *a += *b;
                }
            }
        }
    }

    fn pull_back(&self, idx: usize, gout: &Tensor<F>, g: &mut [Option<Tensor<F>>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                if self.ng(*a) {
                    let ga = matmul_nt(gout, self.value(*b));
                    self.accumulate(&mut g[a.0], ga);
                }
                if self.ng(*b) {
                    let gb = matmul_tn(self.value(*a), gout);
                    self.accumulate(&mut g[b.0], gb);
                }
            }
            Op::AddBias { a, b } => {
                if self.ng(*a) {
                    self.accumulate(&mut g[a.0], gout.clone());
                }
                if self.ng(*b) {
                    let mut gb = Tensor::zeros(1, gout.cols);
                    for i in 0..gout.rows {
                        for j in 0..gout.cols {
                            gb.data[j] += gout.data[i * gout.cols + j];
                        }
                    }
                    self.accumulate(&mut g[b.0], gb);
                }
            }
            Op::Add { a, b } => {
                if self.ng(*a) {
                    self.accumulate(&mut g[a.0], gout.clone());
                }
                if self.ng(*b) {
                    self.accumulate(&mut g[b.0], gout.clone());
                }
            }
            Op::Sub { a, b } => {
                if self.ng(*a) {
                    self.accumulate(&mut g[a.0], gout.clone());
                }
                if self.ng(*b) {
                    self.accumulate(&mut g[b.0], gout.map(|x| -x));
                }
            }
            Op::Mul { a, b } => {
                if self.ng(*a) {
                    self.accumulate(&mut g[a.0], tensor::mul(gout, self.value(*b)));
                }
                if self.ng(*b) {
                    self.accumulate(&mut g[b.0], tensor::mul(gout, self.value(*a)));
                }
            }
            Op::Silu { a } => {
                if self.ng(*a) {
                    let x = self.value(*a);
                    let mut ga = gout.clone();
                    for (gi, &xi) in ga.data.iter_mut().zip(&x.data) {
                        let s = sigmoid_scalar(xi);
                        *gi *= s * (F::ONE + xi * (F::ONE - s));
                    }
                    self.accumulate(&mut g[a.0], ga);
                }
            }
            Op::Sigmoid { a } => {
                if self.ng(*a) {
                    let y = &node.value;
                    let mut ga = gout.clone();
                    for (gi, &yi) in ga.data.iter_mut().zip(&y.data) {
                        *gi *= yi * (F::ONE - yi);
                    }
                    self.accumulate(&mut g[a.0], ga);
                }
            }
            Op::Exp { a } => {
                if self.ng(*a) {
                    self.accumulate(&mut g[a.0], tensor::mul(gout, &node.value));
                }
            }
            Op::Ln { a } => {
                if self.ng(*a) {
                    let x = self.value(*a);
                    let mut ga = gout.clone();
                    for (gi, &xi) in ga.data.iter_mut().zip(&x.data) {
                        *gi = *gi / xi;
                    }
                    self.accumulate(&mut g[a.0], ga);
                }
            }
            Op::Abs { a } => {
                if self.ng(*a) {
                    let x = self.value(*a);
                    let mut ga = gout.clone();
                    for (gi, &xi) in ga.data.iter_mut().zip(&x.data) {
                        let s = if xi > F::ZERO {
                            F::ONE
                        } else if xi < F::ZERO {
                            -F::ONE
                        } else {
                            F::ZERO
                        };
                        *gi *= s;
                    }
                    self.accumulate(&mut g[a.0], ga);
                }
            }
            Op::Affine { a, k } => {
                if self.ng(*a) {
                    let k = *k;
                    self.accumulate(&mut g[a.0], gout.map(|x| k * x));
                }
            }
            Op::ScaleRows { a, w } => {
                if self.ng(*a) {
                    let mut ga = gout.clone();
                    for i in 0..ga.rows {
                        let row = &mut ga.data[i * ga.cols..(i + 1) * ga.cols];
                        for x in row.iter_mut() {
                            *x *= w[i];
                        }
                    }
                    self.accumulate(&mut g[a.0], ga);
                }
            }
            Op::ConcatCols { a, b } => {
                let ca = self.value(*a).cols;
                let cb = self.value(*b).cols;
                if self.ng(*a) {
                    let mut ga = Tensor::zeros(gout.rows, ca);
                    for i in 0..gout.rows {
                        ga.data[i * ca..(i + 1) * ca]
                            .copy_from_slice(&gout.row(i)[..ca]);
                    }
                    self.accumulate(&mut g[a.0], ga);
                }
                if self.ng(*b) {
                    let mut gb = Tensor::zeros(gout.rows, cb);
                    for i in 0..gout.rows {
                        gb.data[i * cb..(i + 1) * cb]
                            .copy_from_slice(&gout.row(i)[ca..]);
                    }
                    self.accumulate(&mut g[b.0], gb);
                }
            }
            Op::SliceCols { a, lo } => {
                if self.ng(*a) {
                    let src = self.value(*a);
                    let mut ga = Tensor::zeros(src.rows, src.cols);
                    for i in 0..gout.rows {
                        for j in 0..gout.cols {
                            ga.data[i * src.cols + lo + j] = gout.data[i * gout.cols + j];
                        }
                    }
                    self.accumulate(&mut g[a.0], ga);
                }
            }
            Op::OuterSub { a, b } => {
                let (n, m) = (gout.rows, gout.cols);
                if self.ng(*a) {
                    let mut ga = Tensor::zeros(n, 1);
                    for i in 0..n {
                        let mut acc = F::ZERO;
                        for j in 0..m {
                            acc += gout.data[i * m + j];
                        }
                        ga.data[i] = acc;
                    }
                    self.accumulate(&mut g[a.0], ga);
                }
                if self.ng(*b) {
                    let mut gb = Tensor::zeros(m, 1);
                    for j in 0..m {
                        let mut acc = F::ZERO;
                        for i in 0..n {
                            acc += gout.data[i * m + j];
                        }
                        gb.data[j] = -acc;
                    }
                    self.accumulate(&mut g[b.0], gb);
                }
            }
            Op::MulColsVec { a, s } => {
                let ts = self.value(*s);
                if self.ng(*a) {
                    let mut ga = gout.clone();
                    for i in 0..ga.rows {
                        for j in 0..ga.cols {
                            ga.data[i * ga.cols + j] *= ts.data[j];
                        }
                    }
                    self.accumulate(&mut g[a.0], ga);
                }
                if self.ng(*s) {
                    let ta = self.value(*a);
                    let mut gs = Tensor::zeros(ts.rows, 1);
                    for i in 0..gout.rows {
                        for j in 0..gout.cols {
                            gs.data[j] += gout.data[i * gout.cols + j] * ta.data[i * ta.cols + j];
                        }
                    }
                    self.accumulate(&mut g[s.0], gs);
                }
            }
            Op::AddColsVec { a, s } => {
                if self.ng(*a) {
                    self.accumulate(&mut g[a.0], gout.clone());
                }
                if self.ng(*s) {
                    let ts = self.value(*s);
                    let mut gs = Tensor::zeros(ts.rows, 1);
                    for i in 0..gout.rows {
                        for j in 0..gout.cols {
                            gs.data[j] += gout.data[i * gout.cols + j];
                        }
                    }
                    self.accumulate(&mut g[s.0], gs);
                }
            }
            Op::SumCols { a } => {
                if self.ng(*a) {
                    let src = self.value(*a);
                    let mut ga = Tensor::zeros(src.rows, src.cols);
                    for i in 0..src.rows {
                        for j in 0..src.cols {
                            ga.data[i * src.cols + j] = gout.data[i];
                        }
                    }
                    self.accumulate(&mut g[a.0], ga);
                }
            }
            Op::SumAll { a } => {
                if self.ng(*a) {
                    let src = self.value(*a);
                    let ga = Tensor::filled(src.rows, src.cols, gout.data[0]);
                    self.accumulate(&mut g[a.0], ga);
                }
            }
            Op::MeanAll { a } => {
                if self.ng(*a) {
                    let src = self.value(*a);
                    let scale = gout.data[0] / F::from_f64((src.rows * src.cols) as f64);
                    let ga = Tensor::filled(src.rows, src.cols, scale);
                    self.accumulate(&mut g[a.0], ga);
                }
            }
            Op::LogSumExpCols { a } => {
                if self.ng(*a) {
                    let src = self.value(*a);
                    let lse = &node.value;
                    let mut ga = Tensor::zeros(src.rows, src.cols);
                    for i in 0..src.rows {
                        for j in 0..src.cols {
                            // softmax weight exp(a_ij - lse_i)
                            let w = (src.data[i * src.cols + j] - lse.data[i]).exp();
                            ga.data[i * src.cols + j] = gout.data[i] * w;
                        }
                    }
                    self.accumulate(&mut g[a.0], ga);
                }
            }
        }
    }
}
