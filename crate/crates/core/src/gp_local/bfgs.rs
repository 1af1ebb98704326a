//! Bound-projected BFGS for small problems.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy)]
pub struct BfgsOptions {
    pub max_iter: usize,
    /// Stop when the projected gradient's max-norm is below `gtol·max(1,|f|)`.
    pub gtol: f64,
    pub lower: f64,
    pub upper: f64,
    /// Longest step allowed along a search direction.
    pub max_step: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            gtol: 1e-10,
            lower: -31.0,
            upper: 15.0,
            max_step: 2.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BfgsResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Minimizes `f` (returning value and gradient) inside the box `[lower, upper]`.
/// Non-finite objective values are treated as `+∞` and rejected by the line
/// search.
pub fn minimize<F>(mut f: F, x0: &[f64], opts: BfgsOptions) -> BfgsResult
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let n = x0.len();
    let clamp = |v: &mut DVector<f64>| {
        for x in v.iter_mut() {
            *x = x.clamp(opts.lower, opts.upper);
        }
    };
    let mut x = DVector::from_column_slice(x0);
    clamp(&mut x);
    let (mut fx, g) = f(x.as_slice());
    let mut g = DVector::from_vec(g);
    let mut hinv = DMatrix::<f64>::identity(n, n);
    let mut first = true;

    let projected = |x: &DVector<f64>, g: &DVector<f64>| -> DVector<f64> {
        DVector::from_fn(n, |i, _| {
            if (x[i] <= opts.lower && g[i] > 0.0) || (x[i] >= opts.upper && g[i] < 0.0) {
                0.0
            } else {
                g[i]
            }
        })
    };

    for iter in 0..opts.max_iter {
        let pg = projected(&x, &g);
        if !fx.is_finite() {
            return BfgsResult {
                x: x.as_slice().to_vec(),
                f: fx,
                iterations: iter,
                converged: false,
            };
        }
        if pg.amax() <= opts.gtol * fx.abs().max(1.0) {
            return BfgsResult {
                x: x.as_slice().to_vec(),
                f: fx,
                iterations: iter,
                converged: true,
            };
        }

        let mut dir = -(&hinv * &pg);
        for i in 0..n {
            if pg[i] == 0.0 {
                dir[i] = 0.0;
            }
        }
        if dir.dot(&pg) >= 0.0 {
            hinv = DMatrix::identity(n, n);
            dir = -pg.clone();
        }
        let norm = dir.norm();
        if norm > opts.max_step {
            dir *= opts.max_step / norm;
        }

        let slope = dir.dot(&pg);
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let mut xn = &x + &dir * step;
            clamp(&mut xn);
            let (fnew, gnew) = f(xn.as_slice());
            if fnew.is_finite() && fnew <= fx + 1e-4 * step * slope {
                accepted = Some((xn, fnew, DVector::from_vec(gnew)));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fnew, gnew)) = accepted else {
            // no decrease possible along the direction; accept if the gradient is
            // already at the noise floor of the objective
            let converged = pg.amax() <= 1e-6 * fx.abs().max(1.0);
            return BfgsResult {
                x: x.as_slice().to_vec(),
                f: fx,
                iterations: iter,
                converged,
            };
        };

        let s = &xn - &x;
        let y = &gnew - &g;
        let sy = s.dot(&y);
        if sy > 1e-300 {
            if first {
                hinv = DMatrix::identity(n, n) * (sy / y.dot(&y));
                first = false;
            }
            let rho = 1.0 / sy;
            let eye = DMatrix::<f64>::identity(n, n);
            let a = &eye - &s * y.transpose() * rho;
            let b = &eye - &y * s.transpose() * rho;
            hinv = &a * &hinv * &b + &s * s.transpose() * rho;
        }
        let small_move = s.amax() < 1e-14 && (fx - fnew).abs() <= 1e-15 * fx.abs().max(1.0);
        x = xn;
        fx = fnew;
        g = gnew;
        if small_move {
            let pg = projected(&x, &g);
            let converged = pg.amax() <= 1e-6 * fx.abs().max(1.0);
            return BfgsResult {
                x: x.as_slice().to_vec(),
                f: fx,
                iterations: iter + 1,
                converged,
            };
        }
    }
    BfgsResult {
        x: x.as_slice().to_vec(),
        f: fx,
        iterations: opts.max_iter,
        converged: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| {
            let (a, b) = (x[0], x[1]);
            let v = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let g = vec![
                -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
                200.0 * (b - a * a),
            ];
            (v, g)
        };
        let r = minimize(f, &[-1.2, 1.0], BfgsOptions::default());
        assert!(r.converged);
        assert!(
            (r.x[0] - 1.0).abs() < 1e-6 && (r.x[1] - 1.0).abs() < 1e-6,
            "{:?}",
            r.x
        );
    }

    #[test]
    fn stops_at_lower_bound() {
        // strictly increasing in x: minimum sits on the bound
        let f = |x: &[f64]| (x[0], vec![1.0]);
        let opts = BfgsOptions {
            lower: -5.0,
            ..Default::default()
        };
        let r = minimize(f, &[0.0], opts);
        assert!(r.converged);
        assert_eq!(r.x[0], -5.0);
    }
}
