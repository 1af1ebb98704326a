//! Unconstrained sampling target for the hierarchical model.
//!
//! Layout of the unconstrained vector (N replicates):
//!
//! | index          | parameter            | transform                      |
//! |----------------|----------------------|--------------------------------|
//! | 0, 1           | `d_r`, `d_w`         | `exp`                          |
//! | 2              | `α`                  | `alpha_max · logistic`         |
//! | 3, 4, 5, 6     | `mu_r, gamma_r, mu_w, gamma_w` | `exp`                |
//! | 7 .. 7+N       | `tau_r`              | non-centered, see below        |
//! | 7+N .. 7+2N    | `tau_w`              | non-centered, see below        |
//!
//! Each `tau` is written `tau = mu + gamma·z` where `z` is the standard
//! normal truncated below at `−mu/gamma`, realized by inverse CDF from a
//! uniform `u = logistic(v)`. The prior on `u` is flat, so the truncated
//! normal density never appears explicitly and `(mu, gamma)` decouple from
//! the per-replicate coordinates.

use super::hmc::LogDensity;
use super::{
    half_cauchy_logpdf, half_normal_logpdf, norm_cdf, norm_quantile, normal_logpdf, ConditionData,
    HierParams, HierPriors,
};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone)]
pub struct HierTarget {
    data: ConditionData,
    priors: HierPriors,
}

#[inline]
fn logistic(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// `tau` and its partial derivatives with respect to `mu`, `gamma` and the
/// unconstrained coordinate `v`.
struct TauMap {
    tau: f64,
    d_mu: f64,
    d_gamma: f64,
    d_v: f64,
}

fn tau_map(mu: f64, gamma: f64, v: f64) -> Option<TauMap> {
    let u = logistic(v);
    let one_minus_u = logistic(-v);
    let c = norm_cdf(mu / gamma);
    let tail = one_minus_u * c;
    if !(tail > 0.0) {
        return None;
    }
    let q = -norm_quantile(tail);
    if !q.is_finite() {
        return None;
    }
    let a = -mu / gamma;
    let ln_phi_q = -0.5 * (LN_2PI + q * q);
    // (1-u)·φ(a)/φ(q), evaluated in logs
    let ratio = (one_minus_u.ln() - 0.5 * (LN_2PI + a * a) - ln_phi_q).exp();
    // ∂τ/∂u · du/dv = γ·Φ(μ/γ)/φ(q) · u(1−u) = γ·u·tail/φ(q)
    let d_v = gamma * u * (tail.ln() - ln_phi_q).exp();
    Some(TauMap {
        tau: (mu + gamma * q).max(0.0),
        d_mu: 1.0 - ratio,
        d_gamma: q + ratio * mu / gamma,
        d_v,
    })
}

impl HierTarget {
    pub fn new(data: ConditionData, priors: HierPriors) -> Self {
        Self { data, priors }
    }

    pub fn data(&self) -> &ConditionData {
        &self.data
    }

    pub fn n(&self) -> usize {
        self.data.n()
    }

    /// Maps an unconstrained point to the flat constrained parameter order of
    /// [`HierParams::names`].
    pub fn constrain(&self, x: &[f64]) -> Vec<f64> {
        let n = self.n();
        let (mu_r, gamma_r, mu_w, gamma_w) = (x[3].exp(), x[4].exp(), x[5].exp(), x[6].exp());
        let mut out = vec![
            x[0].exp(),
            x[1].exp(),
            self.priors.alpha_max * logistic(x[2]),
            mu_r,
            gamma_r,
            mu_w,
            gamma_w,
        ];
        for i in 0..n {
            out.push(tau_map(mu_r, gamma_r, x[7 + i]).map_or(f64::INFINITY, |t| t.tau));
        }
        for i in 0..n {
            out.push(tau_map(mu_w, gamma_w, x[7 + n + i]).map_or(f64::INFINITY, |t| t.tau));
        }
        out
    }

    pub fn params(&self, x: &[f64]) -> HierParams {
        HierParams::from_flat(&self.constrain(x))
    }

    /// Unconstrained coordinates of a constrained parameter point (inverse of
    /// [`constrain`](Self::constrain)).
    pub fn unconstrain(&self, p: &HierParams) -> Vec<f64> {
        let logit = |u: f64| (u / (1.0 - u)).ln();
        let mut x = vec![
            p.d_r.ln(),
            p.d_w.ln(),
            logit(p.alpha / self.priors.alpha_max),
            p.mu_r.ln(),
            p.gamma_r.ln(),
            p.mu_w.ln(),
            p.gamma_w.ln(),
        ];
        let inv = |tau: f64, mu: f64, gamma: f64| {
            // u = 1 − Φ(−(tau−mu)/gamma)/Φ(mu/gamma)
            let one_minus_u = norm_cdf((mu - tau) / gamma) / norm_cdf(mu / gamma);
            ((1.0 - one_minus_u) / one_minus_u).ln()
        };
        x.extend(p.tau_r.iter().map(|&t| inv(t, p.mu_r, p.gamma_r)));
        x.extend(p.tau_w.iter().map(|&t| inv(t, p.mu_w, p.gamma_w)));
        x
    }

    /// Log of the Jacobian determinant of [`constrain`](Self::constrain).
    pub fn log_jacobian(&self, x: &[f64]) -> f64 {
        let n = self.n();
        let s = logistic(x[2]);
        let mut j =
            x[0] + x[1] + (self.priors.alpha_max * s * (1.0 - s)).ln() + x[3] + x[4] + x[5] + x[6];
        let (mu_r, gamma_r, mu_w, gamma_w) = (x[3].exp(), x[4].exp(), x[5].exp(), x[6].exp());
        for i in 0..n {
            j += tau_map(mu_r, gamma_r, x[7 + i]).map_or(f64::NAN, |t| t.d_v.ln());
            j += tau_map(mu_w, gamma_w, x[7 + n + i]).map_or(f64::NAN, |t| t.d_v.ln());
        }
        j
    }

    /// Data-informed starting point: a pooled least-squares line through both
    /// species with a shared slope, excess SDs set from the residual spread,
    /// and every tau at the median of its prior.
    pub fn initial_point(&self) -> Vec<f64> {
        let n = self.n();
        let amax = self.priors.alpha_max;
        if n == 0 {
            return vec![(0.5f64).ln(), (0.5f64).ln(), 0.0, -1.0, -1.0, -1.0, -1.0];
        }
        // normal equations for [d_r, d_w, α] (3×3, well conditioned in 1/L)
        let mut ata = [[0.0; 3]; 3];
        let mut atb = [0.0; 3];
        for r in &self.data.replicates {
            let il = 1.0 / r.box_length;
            for (row, y) in [([1.0, 0.0, il], r.dhat_r), ([0.0, 1.0, il], r.dhat_w)] {
                for a in 0..3 {
                    atb[a] += row[a] * y;
                    for b in 0..3 {
                        ata[a][b] += row[a] * row[b];
                    }
                }
            }
        }
        let sol = solve3(ata, atb).unwrap_or_else(|| {
            let m = |f: fn(&super::Replicate) -> f64| {
                self.data.replicates.iter().map(f).sum::<f64>() / n as f64
            };
            [m(|r| r.dhat_r), m(|r| r.dhat_w), 0.5 * amax]
        });
        let alpha = sol[2].clamp(0.02 * amax, 0.98 * amax);
        let d_r = sol[0].max(1e-4);
        let d_w = sol[1].max(1e-4);
        let sd = |f: &dyn Fn(&super::Replicate) -> (f64, f64), d: f64| {
            let ss: f64 = self
                .data
                .replicates
                .iter()
                .map(|r| {
                    let (y, s) = f(r);
                    ((y - d - alpha / r.box_length).powi(2) - s).max(0.0)
                })
                .sum();
            (ss / n as f64).sqrt().max(1e-4)
        };
        let sd_r = sd(&|r| (r.dhat_r, r.shat_r), d_r);
        let sd_w = sd(&|r| (r.dhat_w, r.shat_w), d_w);
        let mut x = vec![
            d_r.ln(),
            d_w.ln(),
            ((alpha / amax) / (1.0 - alpha / amax)).ln(),
            sd_r.ln(),
            sd_r.ln(),
            sd_w.ln(),
            sd_w.ln(),
        ];
        x.extend(std::iter::repeat_n(0.0, 2 * n));
        x
    }
}

fn solve3(a: [[f64; 3]; 3], b: [f64; 3]) -> Option<[f64; 3]> {
    let m = nalgebra::Matrix3::from_fn(|i, j| a[i][j]);
    let v = nalgebra::Vector3::from_column_slice(&b);
    m.lu().solve(&v).map(|s| [s[0], s[1], s[2]])
}

impl LogDensity for HierTarget {
    fn dim(&self) -> usize {
        7 + 2 * self.n()
    }

    fn logp_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let n = self.n();
        let pr = &self.priors;
        grad.iter_mut().for_each(|g| *g = 0.0);
        if x.iter().any(|v| !v.is_finite()) {
            return f64::NEG_INFINITY;
        }
        let d = [x[0].exp(), x[1].exp()];
        let s = logistic(x[2]);
        let alpha = pr.alpha_max * s;
        let mu = [x[3].exp(), x[5].exp()];
        let gamma = [x[4].exp(), x[6].exp()];

        let mut lp = 0.0;
        let mut g_d = [0.0; 2];
        let mut g_alpha = 0.0;
        let mut g_mu = [0.0; 2];
        let mut g_gamma = [0.0; 2];

        for (i, rep) in self.data.replicates.iter().enumerate() {
            let il = 1.0 / rep.box_length;
            for (k, (dhat, shat)) in [(rep.dhat_r, rep.shat_r), (rep.dhat_w, rep.shat_w)]
                .into_iter()
                .enumerate()
            {
                let xi = 7 + k * n + i;
                let Some(t) = tau_map(mu[k], gamma[k], x[xi]) else {
                    return f64::NEG_INFINITY;
                };
                let var = shat + t.tau * t.tau;
                let resid = dhat - d[k] - alpha * il;
                lp += normal_logpdf(dhat, d[k] + alpha * il, var);
                let dl_dmean = resid / var;
                g_d[k] += dl_dmean;
                g_alpha += dl_dmean * il;
                let dl_dtau = t.tau * (resid * resid / var - 1.0) / var;
                g_mu[k] += dl_dtau * t.d_mu;
                g_gamma[k] += dl_dtau * t.d_gamma;
                let u = logistic(x[xi]);
                // log u(1−u): the flat prior on u pulled back to v
                lp += u.ln() + logistic(-x[xi]).ln();
                grad[xi] = dl_dtau * t.d_v + (1.0 - 2.0 * u);
            }
        }

        for k in 0..2 {
            lp += half_normal_logpdf(d[k], pr.d_scale) + x[k];
            grad[k] = d[k] * (g_d[k] - d[k] / (pr.d_scale * pr.d_scale)) + 1.0;
        }

        lp += -pr.alpha_max.ln() + (pr.alpha_max * s * (1.0 - s)).ln();
        grad[2] = g_alpha * alpha * (1.0 - s) + (1.0 - 2.0 * s);

        let c2 = pr.cauchy_scale * pr.cauchy_scale;
        for k in 0..2 {
            let (im, ig) = (3 + 2 * k, 4 + 2 * k);
            lp += half_cauchy_logpdf(mu[k], pr.cauchy_scale) + x[im];
            lp += half_cauchy_logpdf(gamma[k], pr.cauchy_scale) + x[ig];
            grad[im] = mu[k] * (g_mu[k] - 2.0 * mu[k] / (c2 + mu[k] * mu[k])) + 1.0;
            grad[ig] = gamma[k] * (g_gamma[k] - 2.0 * gamma[k] / (c2 + gamma[k] * gamma[k])) + 1.0;
        }
        if !lp.is_finite() {
            return f64::NEG_INFINITY;
        }
        lp
    }
}
