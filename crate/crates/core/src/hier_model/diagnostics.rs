//! Convergence diagnostics and posterior summaries.

use serde::{Deserialize, Serialize};

use super::HierPosterior;
use crate::error::{Error, Result};

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = if x.len() > 1 {
        x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (m, v)
}

/// Split-chain potential scale reduction.
///
/// Each chain is cut into two halves (the middle draw of an odd-length chain
/// is dropped; chains shorter than four draws are used whole), and
///
/// ```text
/// W = mean within-half variance, B = n · variance of half means,
/// R̂ = sqrt(((n − 1)/n · W + B/n) / W)
/// ```
///
/// with `n` draws per half. When `W = 0` the result is 1 if every draw is
/// identical and `+∞` otherwise.
pub fn rhat(chains: &[Vec<f64>]) -> Result<f64> {
    if chains.len() < 2 {
        return Err(Error::invalid("rhat needs at least 2 chains"));
    }
    let len = chains.iter().map(Vec::len).min().unwrap_or(0);
    if len < 2 || chains.iter().any(|c| c.len() != len) {
        return Err(Error::invalid(
            "rhat needs chains of equal length with at least 2 draws",
        ));
    }
    let parts: Vec<&[f64]> = if len >= 4 {
        let h = len / 2;
        chains
            .iter()
            .flat_map(|c| [&c[..h], &c[len - h..]])
            .collect()
    } else {
        chains.iter().map(Vec::as_slice).collect()
    };
    let n = parts[0].len() as f64;
    let stats: Vec<(f64, f64)> = parts.iter().map(|p| mean_var(p)).collect();
    let w = stats.iter().map(|s| s.1).sum::<f64>() / stats.len() as f64;
    let means: Vec<f64> = stats.iter().map(|s| s.0).collect();
    let b = n * mean_var(&means).1;
    if w == 0.0 {
        let first = chains[0][0];
        let same = chains.iter().flatten().all(|&v| v == first);
        return Ok(if same { 1.0 } else { f64::INFINITY });
    }
    let var_plus = (n - 1.0) / n * w + b / n;
    Ok((var_plus / w).sqrt())
}

/// Sample quantile by linear interpolation between order statistics
/// (`h = (n − 1)·p`). `sorted` must be ascending and non-empty.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q975: f64,
    pub rhat: f64,
}

impl ParamSummary {
    /// # Panics
    /// If `draws` is empty.
    pub fn from_draws(name: &str, draws: &[f64], rhat: f64) -> Self {
        assert!(!draws.is_empty(), "summary of zero draws");
        let (mean, var) = mean_var(draws);
        let mut s = draws.to_vec();
        s.sort_by(f64::total_cmp);
        Self {
            name: name.to_owned(),
            mean,
            sd: var.sqrt(),
            q025: quantile(&s, 0.025),
            q975: quantile(&s, 0.975),
            rhat,
        }
    }
}

/// Posterior mean with a central 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub mean: f64,
    pub sd: f64,
    pub lo: f64,
    pub hi: f64,
}

impl From<&ParamSummary> for Interval {
    fn from(s: &ParamSummary) -> Self {
        Self {
            mean: s.mean,
            sd: s.sd,
            lo: s.q025,
            hi: s.q975,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSummary {
    pub temperature: f64,
    pub pressure: f64,
    pub d_r: Interval,
    pub d_w: Interval,
    pub alpha: Interval,
    pub rhat_max: f64,
    pub converged: bool,
    /// Parameters whose R̂ exceeds the threshold.
    pub rhat_flags: Vec<String>,
    pub divergences: usize,
}

pub fn summarize(post: &HierPosterior) -> Result<ConditionSummary> {
    if post.draws.is_empty() {
        return Err(Error::invalid("posterior has no draws"));
    }
    let get = |n: &str| {
        post.summary(n)
            .map(Interval::from)
            .ok_or_else(|| Error::invalid(format!("posterior lacks parameter {n}")))
    };
    Ok(ConditionSummary {
        temperature: post.temperature,
        pressure: post.pressure,
        d_r: get("d_r")?,
        d_w: get("d_w")?,
        alpha: get("alpha")?,
        rhat_max: post.rhat_max,
        converged: post.converged,
        rhat_flags: post
            .summaries
            .iter()
            .filter(|s| !(s.rhat <= post.rhat_threshold))
            .map(|s| s.name.clone())
            .collect(),
        divergences: post.divergences,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn quantile_rule() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        let s = ParamSummary::from_draws("x", &v, 1.0);
        assert_abs_diff_eq!(s.mean, 50.5);
        assert_abs_diff_eq!(s.q025, 3.475, epsilon = 1e-12);
        assert_abs_diff_eq!(s.q975, 97.525, epsilon = 1e-12);
        assert_abs_diff_eq!(s.q025 + s.q975, 101.0, epsilon = 1e-12);
    }

    #[test]
    fn single_and_symmetric() {
        let s = ParamSummary::from_draws("x", &[4.2], f64::NAN);
        assert_eq!((s.mean, s.q025, s.q975, s.sd), (4.2, 4.2, 4.2, 0.0));
        let s = ParamSummary::from_draws("x", &[-1.5, 1.5, -0.5, 0.5], 1.0);
        assert_eq!(s.mean, 0.0);
    }

    #[test]
    fn rhat_degenerate_cases() {
        assert_eq!(rhat(&[vec![2.0; 10], vec![2.0; 10]]).unwrap(), 1.0);
        assert_eq!(
            rhat(&[vec![1.0; 10], vec![2.0; 10]]).unwrap(),
            f64::INFINITY
        );
        assert!(rhat(&[vec![1.0; 10]]).is_err());
        assert!(rhat(&[vec![1.0], vec![1.0]]).is_err());
        assert!(rhat(&[vec![1.0, 2.0], vec![1.0, 2.0, 3.0]]).is_err());
    }

    #[test]
    fn rhat_separated_means() {
        let a: Vec<f64> = (0..100)
            .map(|i| ((i * 37 % 101) as f64 / 101.0 - 0.5) * 3.4)
            .collect();
        let b: Vec<f64> = a.iter().map(|v| v + 100.0).collect();
        assert!(rhat(&[a, b]).unwrap() > 10.0);
    }
}
