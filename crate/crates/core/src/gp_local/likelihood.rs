//! Gaussian log-likelihoods for a centered Brownian-plus-noise sequence.
//!
//! Two independent routes compute the same value. The dense route builds the
//! Gram matrix and takes a Cholesky factorization (cubic cost). The increment
//! route differences the sequence, which has unit Jacobian and turns the
//! covariance into a tridiagonal matrix (diagonal `σ²+a²` then `σ²+2a²`,
//! off-diagonal `−a²`), factorized in linear time.

use nalgebra::{DMatrix, DVector};

use super::GpParams;
use crate::error::{Error, Result};

/// Diagonal jitter added on a failed factorization before the single retry.
pub const JITTER: f64 = 1e-10;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// `K[i][j] = min(i,j)·σ² + a²·[i=j]` with 1-based indices.
pub fn gram_matrix(n: usize, p: GpParams) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| {
        let m = (i.min(j) + 1) as f64;
        m * p.sigma2 + if i == j { p.a2 } else { 0.0 }
    })
}

pub fn loglik_dense(y: &[f64], p: GpParams) -> Result<f64> {
    if y.is_empty() {
        return Ok(0.0);
    }
    let n = y.len();
    let mut k = gram_matrix(n, p);
    let chol = match k.clone().cholesky() {
        Some(c) => c,
        None => {
            for i in 0..n {
                k[(i, i)] += JITTER;
            }
            k.cholesky().ok_or_else(|| {
                Error::Factorization(format!("Gram matrix not positive definite at {p:?}"))
            })?
        }
    };
    let l = chol.l_dirty();
    let logdet: f64 = (0..n).map(|i| 2.0 * l[(i, i)].ln()).sum();
    let z = chol
        .l()
        .solve_lower_triangular(&DVector::from_column_slice(y))
        .expect("non-singular factor");
    Ok(-0.5 * (n as f64 * LN_2PI + logdet + z.norm_squared()))
}

/// Value and gradient `(∂/∂σ², ∂/∂a²)` of the log-likelihood via the
/// tridiagonal increment factorization. The gradient is propagated through
/// the factorization recursion in forward mode, so it is exact.
pub fn loglik_increment_grad(y: &[f64], p: GpParams) -> Result<(f64, [f64; 2])> {
    match tridiag_recursion(y, p, 0.0) {
        Some(v) => Ok(v),
        None => tridiag_recursion(y, p, JITTER).ok_or_else(|| {
            Error::Factorization(format!(
                "increment covariance not positive definite at {p:?}"
            ))
        }),
    }
}

pub fn loglik_increment(y: &[f64], p: GpParams) -> Result<f64> {
    loglik_increment_grad(y, p).map(|(v, _)| v)
}

fn tridiag_recursion(y: &[f64], p: GpParams, jitter: f64) -> Option<(f64, [f64; 2])> {
    if y.is_empty() {
        return Some((0.0, [0.0; 2]));
    }
    let (s, a) = (p.sigma2, p.a2);
    let off = -a;
    let d_off = [0.0, -1.0];

    let mut acc = 0.0;
    let mut grad = [0.0; 2];

    // pivot d, its gradient, transformed residual z and its gradient
    let mut d = s + a + jitter;
    let mut dd = [1.0, 1.0];
    let mut z = y[0];
    let mut dz = [0.0, 0.0];

    let mut push = |d: f64, dd: &[f64; 2], z: f64, dz: &[f64; 2]| -> bool {
        if !(d > 0.0) || !d.is_finite() {
            return false;
        }
        let q = z * z / d;
        acc += d.ln() + q;
        for k in 0..2 {
            grad[k] += dd[k] / d + (2.0 * z * dz[k] * d - z * z * dd[k]) / (d * d);
        }
        true
    };
    if !push(d, &dd, z, &dz) {
        return None;
    }

    let diag = s + 2.0 * a + jitter;
    let d_diag = [1.0, 2.0];
    for t in 1..y.len() {
        let e = y[t] - y[t - 1];
        let l = off / d;
        let mut dl = [0.0; 2];
        for k in 0..2 {
            dl[k] = (d_off[k] * d - off * dd[k]) / (d * d);
        }
        let d_new = diag - l * off;
        let z_new = e - l * z;
        let mut dd_new = [0.0; 2];
        let mut dz_new = [0.0; 2];
        for k in 0..2 {
            dd_new[k] = d_diag[k] - (dl[k] * off + l * d_off[k]);
            dz_new[k] = -(dl[k] * z + l * dz[k]);
        }
        d = d_new;
        dd = dd_new;
        z = z_new;
        dz = dz_new;
        if !push(d, &dd, z, &dz) {
            return None;
        }
    }
    let n = y.len() as f64;
    Some((-0.5 * (n * LN_2PI + acc), grad.map(|g| -0.5 * g)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn p(s: f64, a: f64) -> GpParams {
        GpParams { sigma2: s, a2: a }
    }

    #[test]
    fn gram_small_cases() {
        let k = gram_matrix(2, p(1.0, 0.0));
        assert_eq!(k, DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 2.0]));
        assert_eq!(gram_matrix(3, p(0.0, 2.0)), DMatrix::identity(3, 3) * 2.0);
    }

    #[test]
    fn standard_normal_values() {
        for f in [loglik_dense, loglik_increment] {
            assert_abs_diff_eq!(
                f(&[0.0], p(1.0, 0.0)).unwrap(),
                -0.918_938_533_204_672_7,
                epsilon = 1e-12
            );
            assert_abs_diff_eq!(
                f(&[1.0], p(1.0, 0.0)).unwrap(),
                -1.418_938_533_204_672_7,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn zero_variance_uses_jitter() {
        let v = loglik_dense(&[0.0, 0.0], p(0.0, 0.0)).unwrap();
        let w = loglik_increment(&[0.0, 0.0], p(0.0, 0.0)).unwrap();
        assert!(v.is_finite());
        assert_abs_diff_eq!(v, w, epsilon = 1e-8);
        assert!(loglik_increment(&[1.0, 0.0], p(-1.0, 0.0)).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let y: Vec<f64> = (0..40)
            .map(|i| ((i * 37 % 11) as f64 - 5.0) * 0.13 + 0.02 * i as f64)
            .collect();
        let at = p(0.31, 0.07);
        let (_, g) = loglik_increment_grad(&y, at).unwrap();
        let h = 1e-6;
        let fd_s = (loglik_increment(&y, p(at.sigma2 + h, at.a2)).unwrap()
            - loglik_increment(&y, p(at.sigma2 - h, at.a2)).unwrap())
            / (2.0 * h);
        let fd_a = (loglik_increment(&y, p(at.sigma2, at.a2 + h)).unwrap()
            - loglik_increment(&y, p(at.sigma2, at.a2 - h)).unwrap())
            / (2.0 * h);
        assert_abs_diff_eq!(g[0], fd_s, epsilon = 1e-5 * fd_s.abs().max(1.0));
        assert_abs_diff_eq!(g[1], fd_a, epsilon = 1e-5 * fd_a.abs().max(1.0));
    }
}
