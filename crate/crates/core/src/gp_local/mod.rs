//! Local diffusion-coefficient estimation.
//!
//! Each coordinate of a re-based trajectory segment, with its first
//! observation dropped, is modelled as a latent random walk with step
//! variance `σ²` observed through independent Gaussian noise of variance
//! `a²`. All sequences of one species in one box are pooled into a single
//! likelihood; half-normal priors (scale 0.5 by default) regularize both
//! variances. [`map_estimate`] returns the posterior mode and a Laplace
//! variance, converted to the diffusion coefficient `D = σ²/(2·dt)`.

mod bfgs;
mod likelihood;

pub use bfgs::{minimize, BfgsOptions, BfgsResult};
pub use likelihood::{gram_matrix, loglik_dense, loglik_increment, loglik_increment_grad, JITTER};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajio::UnwrappedTrajectory;

/// Log-parameter value below which a variance is pinned to exactly zero.
pub const PIN_THRESHOLD: f64 = -30.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpParams {
    /// Step variance, Å².
    pub sigma2: f64,
    /// Observation-noise variance, Å².
    pub a2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GpDataset {
    pub series: Vec<Vec<f64>>,
    /// Time between observations, ps.
    pub dt: f64,
}

impl GpDataset {
    pub fn new(series: Vec<Vec<f64>>, dt: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::invalid(format!("dt must be positive, got {dt}")));
        }
        if series.iter().any(Vec::is_empty) {
            return Err(Error::invalid("empty observation sequence"));
        }
        Ok(Self { series, dt })
    }

    /// Pools every spatial dimension of every molecule of every segment.
    /// Each sequence is the coordinate relative to the segment's first
    /// frame, with that first (zero) observation dropped.
    pub fn from_segments(segments: &[UnwrappedTrajectory]) -> Result<Self> {
        let Some(first) = segments.first() else {
            return Err(Error::invalid("no segments"));
        };
        let dt = first.dt;
        let mut series = Vec::new();
        for seg in segments {
            if (seg.dt - dt).abs() > 1e-12 * dt {
                return Err(Error::invalid("segments have different frame intervals"));
            }
            for m in 0..seg.n_mols() {
                for k in 0..3 {
                    let origin = seg.frames[0][m][k];
                    series.push(seg.frames[1..].iter().map(|f| f[m][k] - origin).collect());
                }
            }
        }
        Self::new(series, dt)
    }

    pub fn n_obs(&self) -> usize {
        self.series.iter().map(Vec::len).sum()
    }

    /// Dataset with every observation multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            series: self
                .series
                .iter()
                .map(|s| s.iter().map(|v| v * c).collect())
                .collect(),
            dt: self.dt,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalEstimate {
    /// Diffusion coefficient, Å²/ps.
    pub d_md: f64,
    /// Posterior variance of `d_md`, (Å²/ps)².
    pub s_md: f64,
    pub sigma2_hat: f64,
    pub a2_hat: f64,
    pub n_obs: usize,
    pub converged: bool,
    /// The Laplace variance came from a fallback curvature probe.
    pub hessian_fallback: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapOptions {
    /// Half-normal prior scale shared by `σ²` and `a²`.
    pub prior_scale: f64,
    pub max_iter: usize,
    pub gtol: f64,
    /// Overrides the moment-based starting point.
    pub start: Option<GpParams>,
}

impl Default for MapOptions {
    fn default() -> Self {
        Self {
            prior_scale: 0.5,
            max_iter: 500,
            gtol: 1e-10,
            start: None,
        }
    }
}

fn half_normal_logpdf(x: f64, scale: f64) -> (f64, f64) {
    if x < 0.0 {
        return (f64::NEG_INFINITY, 0.0);
    }
    let v = std::f64::consts::LN_2
        - 0.5 * (2.0 * std::f64::consts::PI * scale * scale).ln()
        - x * x / (2.0 * scale * scale);
    (v, -x / (scale * scale))
}

/// Pooled log-likelihood and its gradient. Per-series terms are evaluated in
/// parallel and summed in series order.
pub fn loglik_pooled(data: &GpDataset, p: GpParams) -> Result<(f64, [f64; 2])> {
    let parts: Vec<(f64, [f64; 2])> = data
        .series
        .par_iter()
        .map(|y| loglik_increment_grad(y, p))
        .collect::<Result<_>>()?;
    let mut v = 0.0;
    let mut g = [0.0; 2];
    for (pv, pg) in parts {
        v += pv;
        g[0] += pg[0];
        g[1] += pg[1];
    }
    Ok((v, g))
}

/// Log posterior (normalization constants of the priors included).
pub fn log_posterior(data: &GpDataset, p: GpParams) -> Result<f64> {
    log_posterior_grad(data, p, MapOptions::default().prior_scale).map(|(v, _)| v)
}

/// Log posterior and gradient with respect to `(σ², a²)` for a given prior scale.
pub fn log_posterior_grad(
    data: &GpDataset,
    p: GpParams,
    prior_scale: f64,
) -> Result<(f64, [f64; 2])> {
    let (ps, gs) = half_normal_logpdf(p.sigma2, prior_scale);
    let (pa, ga) = half_normal_logpdf(p.a2, prior_scale);
    if !(ps.is_finite() && pa.is_finite()) {
        return Ok((f64::NEG_INFINITY, [0.0; 2]));
    }
    let (ll, g) = loglik_pooled(data, p)?;
    Ok((ll + ps + pa, [g[0] + gs, g[1] + ga]))
}

/// Moment starting point from the increment variance and lag-1 covariance.
fn moment_start(data: &GpDataset, prior_scale: f64) -> GpParams {
    let (mut v, mut c, mut nv, mut nc) = (0.0, 0.0, 0usize, 0usize);
    for y in &data.series {
        let inc: Vec<f64> = y.windows(2).map(|w| w[1] - w[0]).collect();
        v += inc.iter().map(|e| e * e).sum::<f64>();
        nv += inc.len();
        c += inc.windows(2).map(|w| w[0] * w[1]).sum::<f64>();
        nc += inc.len().saturating_sub(1);
    }
    if nv == 0 || v == 0.0 {
        let s = 1e-2 * prior_scale;
        return GpParams { sigma2: s, a2: s };
    }
    let v = v / nv as f64;
    let c = if nc > 0 { c / nc as f64 } else { 0.0 };
    let a2 = (-c).max(1e-3 * v);
    let sigma2 = (v - 2.0 * a2).max(1e-3 * v);
    GpParams { sigma2, a2 }
}

/// Which of `(σ², a²)` are optimized; pinned ones are held at zero.
#[derive(Clone, Copy)]
struct FreeSet([bool; 2]);

impl FreeSet {
    fn expand(&self, x: &[f64]) -> GpParams {
        let mut it = x.iter();
        let mut v = [0.0; 2];
        for k in 0..2 {
            if self.0[k] {
                v[k] = it.next().expect("one value per free coordinate").exp();
            }
        }
        GpParams {
            sigma2: v[0],
            a2: v[1],
        }
    }
}

fn optimize(
    data: &GpDataset,
    opts: &MapOptions,
    free: FreeSet,
    start: GpParams,
) -> (GpParams, bool) {
    let x0: Vec<f64> = [start.sigma2, start.a2]
        .iter()
        .zip(free.0)
        .filter(|(_, f)| *f)
        .map(|(v, _)| v.max(1e-300).ln())
        .collect();
    if x0.is_empty() {
        return (
            GpParams {
                sigma2: 0.0,
                a2: 0.0,
            },
            true,
        );
    }
    let objective = |x: &[f64]| -> (f64, Vec<f64>) {
        let p = free.expand(x);
        match log_posterior_grad(data, p, opts.prior_scale) {
            Ok((v, g)) if v.is_finite() => {
                let vals = [p.sigma2, p.a2];
                let grad = (0..2)
                    .filter(|&k| free.0[k])
                    .map(|k| -g[k] * vals[k])
                    .collect();
                (-v, grad)
            }
            _ => (f64::INFINITY, vec![0.0; x.len()]),
        }
    };
    let bopts = BfgsOptions {
        max_iter: opts.max_iter,
        gtol: opts.gtol,
        ..Default::default()
    };
    let r = minimize(objective, &x0, bopts);
    (free.expand(&r.x), r.converged)
}

/// Negative-log-posterior Hessian in `(σ², a²)` by central differences of
/// the analytic gradient (relative step 1e-5), restricted to free coordinates.
fn hessian(
    data: &GpDataset,
    p: GpParams,
    prior_scale: f64,
    free: FreeSet,
) -> Option<Vec<Vec<f64>>> {
    let idx: Vec<usize> = (0..2).filter(|&k| free.0[k]).collect();
    let base = [p.sigma2, p.a2];
    let grad_at = |v: [f64; 2]| -> Option<[f64; 2]> {
        let (f, g) = log_posterior_grad(
            data,
            GpParams {
                sigma2: v[0],
                a2: v[1],
            },
            prior_scale,
        )
        .ok()?;
        f.is_finite().then_some(g)
    };
    let mut h = vec![vec![0.0; idx.len()]; idx.len()];
    for (c, &j) in idx.iter().enumerate() {
        let step = 1e-5 * base[j];
        let (mut hi, mut lo) = (base, base);
        hi[j] += step;
        lo[j] -= step;
        let (gh, gl) = (grad_at(hi)?, grad_at(lo)?);
        for (r, &i) in idx.iter().enumerate() {
            h[r][c] = -(gh[i] - gl[i]) / (2.0 * step);
        }
    }
    for r in 0..idx.len() {
        for c in 0..r {
            let m = 0.5 * (h[r][c] + h[c][r]);
            h[r][c] = m;
            h[c][r] = m;
        }
    }
    Some(h)
}

/// Variance of `σ²` from the inverse Hessian, or `None` when it is not
/// positive definite.
fn laplace_var_sigma2(h: &[Vec<f64>]) -> Option<f64> {
    let v = match h.len() {
        1 => 1.0 / h[0][0],
        2 => {
            let det = h[0][0] * h[1][1] - h[0][1] * h[1][0];
            if !(det > 0.0 && h[0][0] > 0.0) {
                return None;
            }
            h[1][1] / det
        }
        _ => return None,
    };
    (v > 0.0 && v.is_finite()).then_some(v)
}

/// Fallback: one-dimensional curvature in `σ²` with a coarse step, then the
/// prior variance.
fn fallback_var_sigma2(data: &GpDataset, p: GpParams, prior_scale: f64) -> f64 {
    let step = 1e-3 * p.sigma2.max(1e-6 * prior_scale);
    let f = |s: f64| {
        log_posterior_grad(data, GpParams { sigma2: s, ..p }, prior_scale)
            .map(|(v, _)| v)
            .unwrap_or(f64::NAN)
    };
    if p.sigma2 > step {
        let curv = -(f(p.sigma2 + step) - 2.0 * f(p.sigma2) + f(p.sigma2 - step)) / (step * step);
        if curv > 0.0 && curv.is_finite() {
            return 1.0 / curv;
        }
    }
    prior_scale * prior_scale * (1.0 - 2.0 / std::f64::consts::PI)
}

/// Posterior mode of `(σ², a²)` with a Laplace variance for the diffusion
/// coefficient.
///
/// The search runs BFGS on `(log σ², log a²)`. A coordinate driven below
/// [`PIN_THRESHOLD`] is pinned to zero and the remaining one re-optimized;
/// the Hessian then covers the free coordinate only.
pub fn map_estimate(data: &GpDataset, opts: &MapOptions) -> Result<LocalEstimate> {
    let n_obs = data.n_obs();
    if n_obs < 10 {
        return Err(Error::invalid(format!(
            "need at least 10 observations, got {n_obs}"
        )));
    }
    let start = opts
        .start
        .unwrap_or_else(|| moment_start(data, opts.prior_scale));
    let all = FreeSet([true, true]);
    let (mut p, mut converged) = optimize(data, opts, all, start);

    let pinned = [p.sigma2.ln() < PIN_THRESHOLD, p.a2.ln() < PIN_THRESHOLD];
    let mut free = all;
    if pinned.iter().any(|&b| b) {
        free = FreeSet([!pinned[0], !pinned[1]]);
        let (q, c) = optimize(data, opts, free, p);
        p = q;
        converged &= c;
    }

    let scale = 1.0 / (2.0 * data.dt);
    let mut hessian_fallback = false;
    let var_sigma2 = if free.0[0] {
        match hessian(data, p, opts.prior_scale, free).and_then(|h| laplace_var_sigma2(&h)) {
            Some(v) => v,
            None => {
                hessian_fallback = true;
                fallback_var_sigma2(data, p, opts.prior_scale)
            }
        }
    } else {
        hessian_fallback = true;
        fallback_var_sigma2(data, p, opts.prior_scale)
    };

    Ok(LocalEstimate {
        d_md: p.sigma2 * scale,
        s_md: var_sigma2 * scale * scale,
        sigma2_hat: p.sigma2,
        a2_hat: p.a2,
        n_obs,
        converged,
        hessian_fallback,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    #[test]
    fn prior_only_dataset() {
        let d = GpDataset::new(vec![], 0.5).unwrap();
        let at0 = log_posterior(
            &d,
            GpParams {
                sigma2: 0.0,
                a2: 0.0,
            },
        )
        .unwrap();
        let hn0 = 2f64.ln() - 0.5 * (2.0 * PI * 0.25).ln();
        assert_abs_diff_eq!(at0, 2.0 * hn0, epsilon = 1e-12);
        for s in [0.01, 0.1, 1.0] {
            assert!(log_posterior(&d, GpParams { sigma2: s, a2: s }).unwrap() < at0);
        }
        assert_eq!(
            log_posterior(
                &d,
                GpParams {
                    sigma2: -1.0,
                    a2: 0.0
                }
            )
            .unwrap(),
            f64::NEG_INFINITY
        );
    }

    #[test]
    fn single_zero_observation_by_hand() {
        let d = GpDataset::new(vec![vec![0.0]], 0.5).unwrap();
        let v = log_posterior(
            &d,
            GpParams {
                sigma2: 1.0,
                a2: 0.0,
            },
        )
        .unwrap();
        // N(0|0,1) + HN(1;0.5) + HN(0;0.5)
        let hand =
            -0.5 * (2.0 * PI).ln() + 2.0 * (2f64.ln() - 0.5 * (2.0 * PI * 0.25).ln()) - 1.0 / 0.5;
        assert_abs_diff_eq!(v, hand, epsilon = 1e-12);
    }

    #[test]
    fn doubling_series_doubles_likelihood() {
        let s = vec![0.1, -0.3, 0.2, 0.5, 0.4];
        let p = GpParams {
            sigma2: 0.2,
            a2: 0.05,
        };
        let one = GpDataset::new(vec![s.clone()], 0.5).unwrap();
        let two = GpDataset::new(vec![s.clone(), s], 0.5).unwrap();
        let (l1, _) = loglik_pooled(&one, p).unwrap();
        let (l2, _) = loglik_pooled(&two, p).unwrap();
        assert_eq!(l2, 2.0 * l1);
    }

    #[test]
    fn all_zero_data_gives_zero() {
        let d = GpDataset::new(vec![vec![0.0; 50]; 3], 0.5).unwrap();
        let e = map_estimate(&d, &MapOptions::default()).unwrap();
        assert_eq!(e.d_md, 0.0);
        assert_eq!(e.a2_hat, 0.0);
        assert!(e.hessian_fallback);
        assert!(e.s_md > 0.0);
    }

    #[test]
    fn too_few_observations() {
        let d = GpDataset::new(vec![vec![0.1; 5]], 0.5).unwrap();
        assert!(map_estimate(&d, &MapOptions::default()).is_err());
    }
}
