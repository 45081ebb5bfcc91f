//! Small dense double-precision linear algebra for the evaluation
//! metrics: Cholesky factorization, SPD solves, log-determinants, and
//! sample moments. Sizes here are latent-dimension scale (tens at
//! most), so simple cubic algorithms are exact enough and fast
//! enough.

use crate::nn::Tensor;
use crate::{Error, Result};

/// Lower-triangular `L` with `A = L L^T` for symmetric positive
/// definite `A`.
pub fn cholesky(a: &Tensor<f64>) -> Result<Tensor<f64>> {
    if a.rows != a.cols {
        return Err(Error::Shape(format!(
            "cholesky needs a square matrix, got {}x{}",
            a.rows, a.cols
        )));
    }
    let n = a.rows;
    let mut l = Tensor::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return Err(Error::Singularity(format!(
                        "matrix not positive definite at pivot {i} (residual {s})"
                    )));
                }
                l.set(i, j, s.sqrt());
            } else {
                l.set(i, j, s / l.get(j, j));
            }
        }
    }
    Ok(l)
}

/// Solves `A x = b` for SPD `A` via Cholesky forward/back
/// substitution.
pub fn solve_spd(a: &Tensor<f64>, b: &[f64]) -> Result<Vec<f64>> {
    if b.len() != a.rows {
        return Err(Error::Shape(format!(
            "rhs length {} does not match matrix size {}",
            b.len(),
            a.rows
        )));
    }
    let l = cholesky(a)?;
    let n = a.rows;
    // L y = b
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l.get(i, k) * y[k];
        }
        y[i] = s / l.get(i, i);
    }
    // L^T x = y
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l.get(k, i) * x[k];
        }
        x[i] = s / l.get(i, i);
    }
    Ok(x)
}

/// `log det A` for SPD `A`, via the Cholesky diagonal.
pub fn logdet_spd(a: &Tensor<f64>) -> Result<f64> {
    let l = cholesky(a)?;
    Ok(2.0 * (0..a.rows).map(|i| l.get(i, i).ln()).sum::<f64>())
}

/// Column means of an `n x d` sample matrix.
pub fn mean_rows(x: &Tensor<f64>) -> Vec<f64> {
    let mut m = vec![0.0; x.cols];
    for i in 0..x.rows {
        for (j, mj) in m.iter_mut().enumerate() {
            *mj += x.get(i, j);
        }
    }
    for mj in m.iter_mut() {
        *mj /= x.rows as f64;
    }
    m
}

/// Unbiased sample covariance (`n - 1` denominator) of an `n x d`
/// sample matrix with `n >= 2`.
pub fn covariance(x: &Tensor<f64>) -> Result<Tensor<f64>> {
    if x.rows < 2 {
        return Err(Error::Domain(format!(
            "covariance needs at least 2 samples, got {}",
            x.rows
        )));
    }
    let m = mean_rows(x);
    let d = x.cols;
    let mut c = Tensor::zeros(d, d);
    for i in 0..x.rows {
        for a in 0..d {
            let da = x.get(i, a) - m[a];
            for b in a..d {
                let db = x.get(i, b) - m[b];
                c.data[a * d + b] += da * db;
            }
        }
    }
    let denom = (x.rows - 1) as f64;
    for a in 0..d {
        for b in a..d {
            let v = c.data[a * d + b] / denom;
            c.data[a * d + b] = v;
            c.data[b * d + a] = v;
        }
    }
    Ok(c)
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations,
/// returned in ascending order. Used as the fallback path when a
/// covariance matrix is singular and Cholesky refuses it.
pub fn sym_eigvals(a: &Tensor<f64>) -> Result<Vec<f64>> {
    if a.rows != a.cols {
        return Err(Error::Shape(format!(
            "eigenvalues need a square matrix, got {}x{}",
            a.rows, a.cols
        )));
    }
    let n = a.rows;
    let mut m = a.clone();
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += m.get(p, q) * m.get(p, q);
            }
        }
        if off <= 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m.get(p, q);
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let theta = (m.get(q, q) - m.get(p, p)) / (2.0 * apq);
                // smaller-root tangent keeps rotations stable
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m.get(k, p);
                    let mkq = m.get(k, q);
                    m.set(k, p, c * mkp - s * mkq);
                    m.set(k, q, s * mkp + c * mkq);
                }
                for k in 0..n {
                    let mpk = m.get(p, k);
                    let mqk = m.get(q, k);
                    m.set(p, k, c * mpk - s * mqk);
                    m.set(q, k, s * mpk + c * mqk);
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| m.get(i, i)).collect();
    ev.sort_by(|x, y| x.partial_cmp(y).unwrap());
    Ok(ev)
}
