//! Dense row-major 2-D tensors and the handful of kernels the tape
//! and the no-tape forward paths share.
//!
//! Shape violations in these kernels are programmer errors, not
//! recoverable conditions, so they panic with an explicit message
//! rather than returning `Result`. All public model entry points
//! validate shapes before reaching this layer.

use super::Real;
use rand::Rng;

/// Row-major matrix of `rows x cols` scalars. A row vector is
/// `1 x n`, a column vector `n x 1`, a scalar `1 x 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<F> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<F>,
}

impl<F: Real> Tensor<F> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![F::ZERO; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, v: F) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![v; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<F>) -> Self {
        assert_eq!(
            data.len(),
            rows * cols,
            "tensor data length {} does not match {rows}x{cols}",
            data.len()
        );
        Tensor { rows, cols, data }
    }

    pub fn scalar(v: F) -> Self {
        Tensor {
            rows: 1,
            cols: 1,
            data: vec![v],
        }
    }

    /// Independent draws `N(0, std^2)`. Sampling happens in `f64` and
    /// is cast once, so the same seed yields the same underlying
    /// values in both precisions.
    pub fn randn<R: Rng + ?Sized>(rows: usize, cols: usize, std: f64, rng: &mut R) -> Self {
        let data = (0..rows * cols)
            .map(|_| {
                let z: f64 = rng.sample(rand_distr::StandardNormal);
                F::from_f64(std * z)
            })
            .collect();
        Tensor { rows, cols, data }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> F {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: F) {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[F] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Self {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Cast every entry through `f64` into another precision.
    pub fn cast<G: Real>(&self) -> Tensor<G> {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| G::from_f64(x.to_f64())).collect(),
        }
    }

    /// Sum of squared entries, accumulated in `f64`.
    pub fn sq_sum(&self) -> f64 {
        self.data.iter().map(|&x| x.to_f64() * x.to_f64()).sum()
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }
}

fn assert_same_shape<F: Real>(a: &Tensor<F>, b: &Tensor<F>, op: &str) {
    assert!(
        a.same_shape(b),
        "{op}: shape {}x{} vs {}x{}",
        a.rows,
        a.cols,
        b.rows,
        b.cols
    );
}

/// `a @ b` for `a: n x k`, `b: k x m`.
pub fn matmul<F: Real>(a: &Tensor<F>, b: &Tensor<F>) -> Tensor<F> {
    assert_eq!(
        a.cols, b.rows,
        "matmul: inner dims {} vs {}",
        a.cols, b.rows
    );
    let (n, k, m) = (a.rows, a.cols, b.cols);
    let mut out = Tensor::zeros(n, m);
    for i in 0..n {
        for p in 0..k {
            let aip = a.data[i * k + p];
            let brow = &b.data[p * m..(p + 1) * m];
            let orow = &mut out.data[i * m..(i + 1) * m];
            for j in 0..m {
                orow[j] += aip * brow[j];
            }
        }
    }
    out
}

/// `a^T @ b` for `a: k x n`, `b: k x m`, result `n x m`.
pub fn matmul_tn<F: Real>(a: &Tensor<F>, b: &Tensor<F>) -> Tensor<F> {
    assert_eq!(
        a.rows, b.rows,
        "matmul_tn: leading dims {} vs {}",
        a.rows, b.rows
    );
    let (k, n, m) = (a.rows, a.cols, b.cols);
    let mut out = Tensor::zeros(n, m);
    for p in 0..k {
        let arow = &a.data[p * n..(p + 1) * n];
        let brow = &b.data[p * m..(p + 1) * m];
        for i in 0..n {
            let aip = arow[i];
            let orow = &mut out.data[i * m..(i + 1) * m];
            for j in 0..m {
                orow[j] += aip * brow[j];
            }
        }
    }
    out
}

/// `a @ b^T` for `a: n x k`, `b: m x k`, result `n x m`.
pub fn matmul_nt<F: Real>(a: &Tensor<F>, b: &Tensor<F>) -> Tensor<F> {
    assert_eq!(
        a.cols, b.cols,
        "matmul_nt: trailing dims {} vs {}",
        a.cols, b.cols
    );
    let (n, k, m) = (a.rows, a.cols, b.rows);
    let mut out = Tensor::zeros(n, m);
    for i in 0..n {
        let arow = &a.data[i * k..(i + 1) * k];
        for j in 0..m {
            let brow = &b.data[j * k..(j + 1) * k];
            let mut acc = F::ZERO;
            for p in 0..k {
                acc += arow[p] * brow[p];
            }
            out.data[i * m + j] = acc;
        }
    }
    out
}

/// Adds a `1 x m` bias row to every row of an `n x m` input.
pub fn add_bias<F: Real>(x: &Tensor<F>, b: &Tensor<F>) -> Tensor<F> {
    assert_eq!(b.rows, 1, "add_bias: bias must be a row vector");
    assert_eq!(
        x.cols, b.cols,
        "add_bias: widths {} vs {}",
        x.cols, b.cols
    );
    let mut out = x.clone();
    for i in 0..x.rows {
        let orow = &mut out.data[i * x.cols..(i + 1) * x.cols];
        for j in 0..x.cols {
            orow[j] += b.data[j];
        }
    }
    out
}

#[inline]
pub fn sigmoid_scalar<F: Real>(x: F) -> F {
    F::ONE / (F::ONE + (-x).exp())
}

#[inline]
pub fn silu_scalar<F: Real>(x: F) -> F {
    x * sigmoid_scalar(x)
}

pub fn silu<F: Real>(x: &Tensor<F>) -> Tensor<F> {
    x.map(silu_scalar)
}

pub fn sigmoid<F: Real>(x: &Tensor<F>) -> Tensor<F> {
    x.map(sigmoid_scalar)
}

/// Elementwise sum.
pub fn add<F: Real>(a: &Tensor<F>, b: &Tensor<F>) -> Tensor<F> {
    assert_same_shape(a, b, "add");
    let mut out = a.clone();
    for (o, &x) in out.data.iter_mut().zip(&b.data) {
        *o += x;
    }
    out
}

/// Elementwise difference.
pub fn sub<F: Real>(a: &Tensor<F>, b: &Tensor<F>) -> Tensor<F> {
    assert_same_shape(a, b, "sub");
    let mut out = a.clone();
    for (o, &x) in out.data.iter_mut().zip(&b.data) {
        *o -= x;
    }
    out
}

/// Elementwise product.
pub fn mul<F: Real>(a: &Tensor<F>, b: &Tensor<F>) -> Tensor<F> {
    assert_same_shape(a, b, "mul");
    let mut out = a.clone();
    for (o, &x) in out.data.iter_mut().zip(&b.data) {
        *o *= x;
    }
    out
}

/// Glues two blocks with equal row counts side by side.
pub fn concat_cols<F: Real>(a: &Tensor<F>, b: &Tensor<F>) -> Tensor<F> {
    assert_eq!(
        a.rows, b.rows,
        "concat_cols: row counts {} vs {}",
        a.rows, b.rows
    );
    let mut out = Tensor::zeros(a.rows, a.cols + b.cols);
    for i in 0..a.rows {
        let orow = &mut out.data[i * (a.cols + b.cols)..(i + 1) * (a.cols + b.cols)];
        orow[..a.cols].copy_from_slice(a.row(i));
        orow[a.cols..].copy_from_slice(b.row(i));
    }
    out
}
