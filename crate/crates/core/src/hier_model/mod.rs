//! Hierarchical pooling of local estimates across box sizes.
//!
//! For replicate `i` with box length `L_i`, the local estimates of the
//! solute (`r`) and solvent (`w`) diffusion coefficients are modelled as
//!
//! ```text
//! dhat_r,i ~ N(d_r + α/L_i, shat_r,i + tau_r,i²)
//! dhat_w,i ~ N(d_w + α/L_i, shat_w,i + tau_w,i²)
//! tau_*,i  ~ TN₀(mu_*, gamma_*²)
//! ```
//!
//! with standard half-Cauchy priors on `mu_*` and `gamma_*`, `α` uniform on
//! `(0, 0.75)` and half-normal priors (scale 1 Å²/ps) on `d_r`, `d_w`.
//! [`sample_posterior`] draws from the posterior with a Hamiltonian Monte
//! Carlo kernel on an unconstrained reparameterization ([`HierTarget`]).

mod diagnostics;
mod hmc;
mod target;

pub use diagnostics::{quantile, rhat, summarize, ConditionSummary, Interval, ParamSummary};
pub use hmc::{run_chains, ChainOutput, LogDensity, Metric, SamplerConfig};
pub use target::HierTarget;

use serde::{Deserialize, Serialize};
use statrs::function::erf::{erfc, erfc_inv};

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Replicate {
    /// Box length, Å.
    pub box_length: f64,
    /// Solvent local estimate, Å²/ps.
    pub dhat_w: f64,
    /// Solvent local posterior variance.
    pub shat_w: f64,
    /// Solute local estimate, Å²/ps.
    pub dhat_r: f64,
    /// Solute local posterior variance.
    pub shat_r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionData {
    /// K.
    pub temperature: f64,
    /// atm.
    pub pressure: f64,
    pub replicates: Vec<Replicate>,
}

impl ConditionData {
    pub fn n(&self) -> usize {
        self.replicates.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n() < 2 {
            return Err(Error::invalid(format!(
                "need at least 2 replicates, got {}",
                self.n()
            )));
        }
        for (i, r) in self.replicates.iter().enumerate() {
            let ok = r.box_length > 0.0
                && r.shat_r > 0.0
                && r.shat_w > 0.0
                && [r.box_length, r.dhat_r, r.dhat_w, r.shat_r, r.shat_w]
                    .iter()
                    .all(|v| v.is_finite());
            if !ok {
                return Err(Error::invalid(format!(
                    "replicate {i}: need finite values, L > 0 and positive variances ({r:?})"
                )));
            }
        }
        Ok(())
    }
}

/// Prior settings. Defaults follow the fixed model; they are recorded in
/// posterior metadata.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HierPriors {
    /// Half-normal scale for `d_r` and `d_w`, Å²/ps.
    pub d_scale: f64,
    /// Half-Cauchy scale for `mu_*` and `gamma_*`.
    pub cauchy_scale: f64,
    /// Upper end of the uniform prior on `α`, Å³/ps.
    pub alpha_max: f64,
}

impl Default for HierPriors {
    fn default() -> Self {
        Self {
            d_scale: 1.0,
            cauchy_scale: 1.0,
            alpha_max: 0.75,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierParams {
    pub d_r: f64,
    pub d_w: f64,
    pub alpha: f64,
    pub tau_r: Vec<f64>,
    pub tau_w: Vec<f64>,
    pub mu_r: f64,
    pub gamma_r: f64,
    pub mu_w: f64,
    pub gamma_w: f64,
}

impl HierParams {
    /// Names in the flat order used by posterior draws.
    pub fn names(n: usize) -> Vec<String> {
        let mut v: Vec<String> = ["d_r", "d_w", "alpha", "mu_r", "gamma_r", "mu_w", "gamma_w"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        v.extend((0..n).map(|i| format!("tau_r[{i}]")));
        v.extend((0..n).map(|i| format!("tau_w[{i}]")));
        v
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = vec![
            self.d_r,
            self.d_w,
            self.alpha,
            self.mu_r,
            self.gamma_r,
            self.mu_w,
            self.gamma_w,
        ];
        v.extend(&self.tau_r);
        v.extend(&self.tau_w);
        v
    }

    pub fn from_flat(v: &[f64]) -> Self {
        let n = (v.len() - 7) / 2;
        Self {
            d_r: v[0],
            d_w: v[1],
            alpha: v[2],
            mu_r: v[3],
            gamma_r: v[4],
            mu_w: v[5],
            gamma_w: v[6],
            tau_r: v[7..7 + n].to_vec(),
            tau_w: v[7 + n..7 + 2 * n].to_vec(),
        }
    }
}

/// Standard normal CDF.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal quantile.
pub fn norm_quantile(p: f64) -> f64 {
    -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p)
}

/// Quantile `u ∈ [0,1)` of the normal `N(mu, gamma²)` truncated to `[0, ∞)`.
/// Computed from the upper tail so that large quantiles keep precision.
pub fn truncated_normal_quantile(mu: f64, gamma: f64, u: f64) -> f64 {
    let tail = (1.0 - u) * norm_cdf(mu / gamma);
    (mu - gamma * norm_quantile(tail)).max(0.0)
}

pub(crate) fn normal_logpdf(x: f64, mean: f64, var: f64) -> f64 {
    let r = x - mean;
    -0.5 * (LN_2PI + var.ln() + r * r / var)
}

pub(crate) fn half_normal_logpdf(x: f64, scale: f64) -> f64 {
    std::f64::consts::LN_2 - 0.5 * LN_2PI - scale.ln() - 0.5 * (x / scale).powi(2)
}

pub(crate) fn half_cauchy_logpdf(x: f64, scale: f64) -> f64 {
    (2.0 / (std::f64::consts::PI * scale)).ln() - (1.0 + (x / scale).powi(2)).ln()
}

/// `log TN₀(x | mu, gamma²)` for `x ≥ 0`.
pub(crate) fn truncated_normal_logpdf(x: f64, mu: f64, gamma: f64) -> f64 {
    normal_logpdf(x, mu, gamma * gamma) - norm_cdf(mu / gamma).ln()
}

/// Log posterior density of the hierarchical model with default priors.
/// Returns `−∞` outside the support or for non-finite parameters.
pub fn log_posterior_hier(p: &HierParams, d: &ConditionData) -> f64 {
    log_posterior_hier_with(p, d, &HierPriors::default())
}

pub fn log_posterior_hier_with(p: &HierParams, d: &ConditionData, pr: &HierPriors) -> f64 {
    let n = d.n();
    let flat = p.to_flat();
    if p.tau_r.len() != n || p.tau_w.len() != n || flat.iter().any(|v| !v.is_finite()) {
        return f64::NEG_INFINITY;
    }
    let in_support = p.d_r >= 0.0
        && p.d_w >= 0.0
        && p.alpha > 0.0
        && p.alpha < pr.alpha_max
        && p.mu_r >= 0.0
        && p.mu_w >= 0.0
        && p.gamma_r > 0.0
        && p.gamma_w > 0.0
        && p.tau_r.iter().chain(&p.tau_w).all(|&t| t >= 0.0);
    if !in_support {
        return f64::NEG_INFINITY;
    }
    let mut lp = 0.0;
    for (i, r) in d.replicates.iter().enumerate() {
        let shift = p.alpha / r.box_length;
        lp += normal_logpdf(r.dhat_r, p.d_r + shift, r.shat_r + p.tau_r[i].powi(2));
        lp += normal_logpdf(r.dhat_w, p.d_w + shift, r.shat_w + p.tau_w[i].powi(2));
        lp += truncated_normal_logpdf(p.tau_r[i], p.mu_r, p.gamma_r);
        lp += truncated_normal_logpdf(p.tau_w[i], p.mu_w, p.gamma_w);
    }
    lp += half_cauchy_logpdf(p.mu_r, pr.cauchy_scale)
        + half_cauchy_logpdf(p.gamma_r, pr.cauchy_scale)
        + half_cauchy_logpdf(p.mu_w, pr.cauchy_scale)
        + half_cauchy_logpdf(p.gamma_w, pr.cauchy_scale);
    lp += -pr.alpha_max.ln();
    lp += half_normal_logpdf(p.d_r, pr.d_scale) + half_normal_logpdf(p.d_w, pr.d_scale);
    lp
}

/// Retained posterior draws with diagnostics for one condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierPosterior {
    pub temperature: f64,
    pub pressure: f64,
    pub param_names: Vec<String>,
    /// One row per retained draw, chain-major.
    pub draws: Vec<Vec<f64>>,
    pub summaries: Vec<ParamSummary>,
    pub chains: usize,
    pub burnin: usize,
    pub samples: usize,
    pub thin: usize,
    pub retained_per_chain: usize,
    pub rhat_max: f64,
    /// Convergence threshold the run was judged against.
    pub rhat_threshold: f64,
    pub converged: bool,
    pub divergences: usize,
    pub step_sizes: Vec<f64>,
    pub priors: HierPriors,
}

impl HierPosterior {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.param_names.iter().position(|n| n == name)?;
        Some(self.draws.iter().map(|r| r[j]).collect())
    }

    pub fn summary(&self, name: &str) -> Option<&ParamSummary> {
        self.summaries.iter().find(|s| s.name == name)
    }
}

/// Samples the posterior of one condition.
pub fn sample_posterior(d: &ConditionData, cfg: &SamplerConfig) -> Result<HierPosterior> {
    d.validate()?;
    sample_posterior_with(d, cfg, &HierPriors::default())
}

/// As [`sample_posterior`] with explicit priors and without the replicate
/// count check (an empty condition samples the prior).
pub fn sample_posterior_with(
    d: &ConditionData,
    cfg: &SamplerConfig,
    priors: &HierPriors,
) -> Result<HierPosterior> {
    cfg.validate()?;
    let target = HierTarget::new(d.clone(), *priors);
    let init = target.initial_point();
    let outs = run_chains(&target, &init, cfg);

    let names = HierParams::names(d.n());
    let per_chain: Vec<Vec<Vec<f64>>> = outs
        .iter()
        .map(|o| o.draws.iter().map(|x| target.constrain(x)).collect())
        .collect();
    let retained = per_chain.first().map_or(0, Vec::len);

    let mut summaries = Vec::with_capacity(names.len());
    for (j, name) in names.iter().enumerate() {
        let chains: Vec<Vec<f64>> = per_chain
            .iter()
            .map(|c| c.iter().map(|r| r[j]).collect())
            .collect();
        let pooled: Vec<f64> = chains.iter().flatten().copied().collect();
        let r = if chains.len() >= 2 && retained >= 2 {
            rhat(&chains)?
        } else {
            f64::NAN
        };
        summaries.push(ParamSummary::from_draws(name, &pooled, r));
    }
    let rhat_max = summaries
        .iter()
        .map(|s| s.rhat)
        .fold(f64::NEG_INFINITY, f64::max);
    let converged = summaries.iter().all(|s| s.rhat <= cfg.rhat_max);
    Ok(HierPosterior {
        temperature: d.temperature,
        pressure: d.pressure,
        param_names: names,
        draws: per_chain.into_iter().flatten().collect(),
        summaries,
        chains: cfg.chains,
        burnin: cfg.burnin,
        samples: cfg.samples,
        thin: cfg.thin,
        retained_per_chain: retained,
        rhat_max,
        rhat_threshold: cfg.rhat_max,
        converged,
        divergences: outs.iter().map(|o| o.divergences).sum(),
        step_sizes: outs.iter().map(|o| o.step_size).collect(),
        priors: *priors,
    })
}
