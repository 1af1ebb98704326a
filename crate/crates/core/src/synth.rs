//! Ground-truth generators used as oracles for the estimators.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hier_model::{truncated_normal_quantile, ConditionData, Replicate};
use crate::rng;
use crate::trajio::{AtomLabel, UnwrappedTrajectory, Vec3, WrappedFrame, WrappedTrajectory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub n_frames: usize,
    pub n_mols: usize,
    /// Number of spatial dimensions that move (1–3); the rest stay at zero.
    #[serde(default = "three")]
    pub dims: usize,
    /// Per-step, per-dimension variance, Å².
    pub sigma2: f64,
    /// Observation-noise variance, Å².
    #[serde(default)]
    pub a2: f64,
    /// Frame interval, ps.
    pub dt: f64,
    /// Net drift velocity, Å/ps.
    #[serde(default)]
    pub drift: Vec3,
    /// Cubic/orthorhombic box used for the wrapped copy, Å.
    #[serde(default, rename = "box")]
    pub box_lengths: Option<Vec3>,
    #[serde(default)]
    pub seed: u64,
}

fn three() -> usize {
    3
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_frames < 2 {
            return Err(Error::invalid("n_frames must be at least 2"));
        }
        if self.n_mols == 0 || !(1..=3).contains(&self.dims) {
            return Err(Error::invalid("need n_mols ≥ 1 and dims in 1..=3"));
        }
        if !(self.sigma2 >= 0.0 && self.a2 >= 0.0 && self.dt > 0.0) {
            return Err(Error::invalid("need sigma2 ≥ 0, a2 ≥ 0, dt > 0"));
        }
        if let Some(b) = self.box_lengths {
            if b.iter().any(|&v| !(v > 0.0)) {
                return Err(Error::NonPositiveBox(b, 0));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthTrajectory {
    /// Noisy continuous positions `Y = X + W` (+ drift).
    pub unwrapped: UnwrappedTrajectory,
    /// `unwrapped` folded into the box, when one was given.
    pub wrapped: Option<WrappedTrajectory>,
}

/// Random-walk paths with Gaussian observation noise. Molecule `m` draws
/// from substream `m` of the seed, so molecules are independent of each
/// other and of the molecule count.
pub fn gen_brownian(s: &SynthSpec) -> Result<SynthTrajectory> {
    s.validate()?;
    let step_sd = s.sigma2.sqrt();
    let noise_sd = s.a2.sqrt();
    let mut frames: Vec<Vec<Vec3>> = vec![Vec::with_capacity(s.n_mols); s.n_frames];
    for m in 0..s.n_mols {
        let mut r = rng::stream(s.seed, m as u64);
        let mut x = [0.0; 3];
        if let Some(b) = s.box_lengths {
            for k in 0..s.dims {
                x[k] = r.random::<f64>() * b[k];
            }
        }
        for (t, frame) in frames.iter_mut().enumerate() {
            if t > 0 {
                for xk in x.iter_mut().take(s.dims) {
                    *xk += step_sd * rng::normal(&mut r);
                }
            }
            let mut y = [0.0; 3];
            for k in 0..s.dims {
                y[k] = x[k] + noise_sd * rng::normal(&mut r) + s.drift[k] * t as f64 * s.dt;
            }
            frame.push(y);
        }
    }
    let mol_ids: Vec<String> = (0..s.n_mols).map(|m| m.to_string()).collect();
    let wrapped = match s.box_lengths {
        Some(b) => {
            let labels = mol_ids
                .iter()
                .map(|id| AtomLabel {
                    mol: id.clone(),
                    atom: "O".into(),
                    role: "O".into(),
                })
                .collect();
            let wf = frames
                .iter()
                .map(|f| WrappedFrame {
                    positions: f.clone(),
                    box_lengths: b,
                })
                .collect();
            Some(WrappedTrajectory::new(wf, s.dt, labels)?)
        }
        None => None,
    };
    Ok(SynthTrajectory {
        unwrapped: UnwrappedTrajectory {
            boxes: s.box_lengths.map(|b| vec![b; s.n_frames]),
            frames,
            dt: s.dt,
            drift_removed: false,
            mol_ids,
        },
        wrapped,
    })
}

/// Truths and design for a synthetic hierarchical condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionSpec {
    pub d_r: f64,
    pub d_w: f64,
    pub alpha: f64,
    pub mu_r: f64,
    pub gamma_r: f64,
    pub mu_w: f64,
    pub gamma_w: f64,
    pub n: usize,
    pub l_min: f64,
    pub l_max: f64,
    /// Local posterior variance attached to each solute estimate.
    pub shat_r: f64,
    /// Local posterior variance attached to each solvent estimate.
    pub shat_w: f64,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_pressure")]
    pub pressure: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_temperature() -> f64 {
    298.0
}

fn default_pressure() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionTruth {
    pub spec: ConditionSpec,
    pub tau_r: Vec<f64>,
    pub tau_w: Vec<f64>,
}

fn draw_tau<R: Rng>(r: &mut R, mu: f64, gamma: f64) -> f64 {
    if gamma == 0.0 {
        return mu.max(0.0);
    }
    let u: f64 = r.random();
    truncated_normal_quantile(mu, gamma, u)
}

/// Draws one condition from the hierarchical generative model with box
/// lengths evenly spaced over `[l_min, l_max]`.
pub fn gen_condition(s: &ConditionSpec) -> Result<(ConditionData, ConditionTruth)> {
    if s.n < 1 || !(s.l_min > 0.0 && s.l_max >= s.l_min) {
        return Err(Error::invalid("need n ≥ 1 and 0 < l_min ≤ l_max"));
    }
    if !(s.d_r >= 0.0 && s.d_w >= 0.0 && s.alpha >= 0.0) {
        return Err(Error::invalid(
            "diffusion coefficients and alpha must be non-negative",
        ));
    }
    if !(s.mu_r >= 0.0 && s.mu_w >= 0.0 && s.gamma_r >= 0.0 && s.gamma_w >= 0.0) {
        return Err(Error::invalid("tau hyperparameters must be non-negative"));
    }
    if !(s.shat_r >= 0.0 && s.shat_w >= 0.0) {
        return Err(Error::invalid("local variances must be non-negative"));
    }
    let mut r = rng::stream(s.seed, 0);
    let mut reps = Vec::with_capacity(s.n);
    let (mut tau_r, mut tau_w) = (Vec::new(), Vec::new());
    for i in 0..s.n {
        let l = if s.n == 1 {
            s.l_min
        } else {
            s.l_min + (s.l_max - s.l_min) * i as f64 / (s.n - 1) as f64
        };
        let tr = draw_tau(&mut r, s.mu_r, s.gamma_r);
        let tw = draw_tau(&mut r, s.mu_w, s.gamma_w);
        let er = (s.shat_r + tr * tr).sqrt() * rng::normal(&mut r);
        let ew = (s.shat_w + tw * tw).sqrt() * rng::normal(&mut r);
        reps.push(Replicate {
            box_length: l,
            dhat_w: s.d_w + s.alpha / l + ew,
            shat_w: s.shat_w,
            dhat_r: s.d_r + s.alpha / l + er,
            shat_r: s.shat_r,
        });
        tau_r.push(tr);
        tau_w.push(tw);
    }
    let data = ConditionData {
        temperature: s.temperature,
        pressure: s.pressure,
        replicates: reps,
    };
    Ok((
        data,
        ConditionTruth {
            spec: s.clone(),
            tau_r,
            tau_w,
        },
    ))
}

/// Mean squared displacement at lags `1..=max_lag`, averaged over time
/// origins and molecules and summed over the three coordinates.
pub fn msd_curve(u: &UnwrappedTrajectory, max_lag: usize) -> Result<Vec<f64>> {
    let n = u.n_frames();
    if max_lag == 0 || max_lag >= n {
        return Err(Error::invalid(format!(
            "max_lag must be in 1..{n}, got {max_lag}"
        )));
    }
    let mols = u.n_mols();
    Ok((1..=max_lag)
        .map(|lag| {
            let mut acc = 0.0;
            for t in 0..n - lag {
                for m in 0..mols {
                    let (a, b) = (u.frames[t][m], u.frames[t + lag][m]);
                    acc += (0..3).map(|k| (b[k] - a[k]).powi(2)).sum::<f64>();
                }
            }
            acc / ((n - lag) * mols) as f64
        })
        .collect())
}

/// Least-squares slope (with intercept) of MSD against lag time, divided by
/// `2·dims·dt`. With a single lag the line is forced through the origin.
pub fn msd_slope_to_d(curve: &[f64], dt: f64, dims: usize) -> f64 {
    let n = curve.len();
    let slope = if n == 1 {
        curve[0]
    } else {
        let xm = (n + 1) as f64 / 2.0;
        let ym = curve.iter().sum::<f64>() / n as f64;
        let (mut sxy, mut sxx) = (0.0, 0.0);
        for (i, y) in curve.iter().enumerate() {
            let dx = (i + 1) as f64 - xm;
            sxy += dx * (y - ym);
            sxx += dx * dx;
        }
        sxy / sxx
    };
    slope / (2.0 * dims as f64 * dt)
}

/// Simple MSD-slope diffusion estimate over three dimensions, Å²/ps.
pub fn msd_estimate(u: &UnwrappedTrajectory, max_lag: usize) -> Result<f64> {
    let curve = msd_curve(u, max_lag)?;
    Ok(msd_slope_to_d(&curve, u.dt, 3))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(sigma2: f64, a2: f64) -> SynthSpec {
        SynthSpec {
            n_frames: 10_001,
            n_mols: 1,
            dims: 3,
            sigma2,
            a2,
            dt: 0.5,
            drift: [0.0; 3],
            box_lengths: None,
            seed: 11,
        }
    }

    #[test]
    fn constant_when_no_variance() {
        let t = gen_brownian(&SynthSpec {
            n_frames: 20,
            ..spec(0.0, 0.0)
        })
        .unwrap()
        .unwrapped;
        assert!(t.frames.iter().all(|f| f[0] == t.frames[0][0]));
    }

    #[test]
    fn deterministic_given_seed() {
        let s = SynthSpec {
            n_frames: 100,
            n_mols: 3,
            ..spec(0.2, 0.05)
        };
        let a = gen_brownian(&s).unwrap().unwrapped;
        let b = gen_brownian(&s).unwrap().unwrapped;
        assert_eq!(a, b);
        let c = gen_brownian(&SynthSpec { seed: 12, ..s })
            .unwrap()
            .unwrapped;
        assert_ne!(a, c);
    }

    #[test]
    fn increment_variance_matches() {
        // Var(Y_{t+1} − Y_t) = σ² + 2a²
        let (s2, a2) = (0.23, 0.05);
        let t = gen_brownian(&spec(s2, a2)).unwrap().unwrapped;
        let mut incs = Vec::new();
        for w in t.frames.windows(2) {
            for k in 0..3 {
                incs.push(w[1][0][k] - w[0][0][k]);
            }
        }
        let n = incs.len() as f64;
        let var = incs.iter().map(|x| x * x).sum::<f64>() / n;
        let target = s2 + 2.0 * a2;
        // increments are MA(1); allow for lag-1 correlation in the SE
        let se = target * (2.0 * (1.0 + 2.0 * (a2 / target).powi(2)) / n).sqrt();
        assert!(
            (var - target).abs() < 3.0 * se,
            "var {var} target {target} se {se}"
        );
    }

    #[test]
    fn msd_slope_per_step() {
        let t = gen_brownian(&spec(0.23, 0.0)).unwrap().unwrapped;
        let d = msd_estimate(&t, 10).unwrap();
        // per dimension per step slope is σ²; D = σ²/(2dt)
        assert!((d - 0.23).abs() / 0.23 < 0.10, "{d}");
        let incs: f64 = t
            .frames
            .windows(2)
            .map(|w| (w[1][0][0] - w[0][0][0]).powi(2))
            .sum::<f64>()
            / 10_000.0;
        assert!((incs - 0.23).abs() / 0.23 < 0.05, "{incs}");
    }

    #[test]
    fn msd_exact_linear_and_noise_only() {
        let curve: Vec<f64> = (1..=8).map(|l| 0.3 + 1.2 * l as f64).collect();
        assert!((msd_slope_to_d(&curve, 0.5, 3) - 1.2 / 3.0).abs() < 1e-12);

        let t = gen_brownian(&spec(0.0, 0.05)).unwrap().unwrapped;
        assert!(msd_estimate(&t, 10).unwrap().abs() < 0.01);

        let still = gen_brownian(&SynthSpec {
            n_frames: 30,
            ..spec(0.0, 0.0)
        })
        .unwrap()
        .unwrapped;
        assert_eq!(msd_estimate(&still, 5).unwrap(), 0.0);
        assert!(msd_estimate(&still, 30).is_err());
    }

    #[test]
    fn condition_limits() {
        let base = ConditionSpec {
            d_r: 0.23,
            d_w: 0.25,
            alpha: 0.0,
            mu_r: 0.0,
            gamma_r: 0.0,
            mu_w: 0.0,
            gamma_w: 0.0,
            n: 5,
            l_min: 20.0,
            l_max: 50.0,
            shat_r: 0.0,
            shat_w: 0.0,
            temperature: 298.0,
            pressure: 1.0,
            seed: 3,
        };
        let (d, _) = gen_condition(&base).unwrap();
        assert!(d
            .replicates
            .iter()
            .all(|r| r.dhat_r == 0.23 && r.dhat_w == 0.25));
        assert_eq!(d.replicates[4].box_length, 50.0);
        assert_eq!(d.replicates[1].box_length, 27.5);

        let (d, _) = gen_condition(&ConditionSpec {
            alpha: 0.3,
            ..base.clone()
        })
        .unwrap();
        for r in &d.replicates {
            assert!((r.dhat_r - (0.23 + 0.3 / r.box_length)).abs() < 1e-15);
        }
    }
}
