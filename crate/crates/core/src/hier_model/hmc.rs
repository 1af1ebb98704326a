//! Hamiltonian Monte Carlo with a fixed integration time.
//!
//! Warmup follows the usual windowed scheme: a fast initial buffer tunes the
//! step size only, a sequence of doubling slow windows estimates the metric
//! (the step size is re-initialized after each), and a terminal buffer
//! settles the step size against the final metric. Step size adaptation is
//! Nesterov dual averaging toward `target_accept`.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, StreamRng};

/// A differentiable log density on `R^dim`.
pub trait LogDensity {
    fn dim(&self) -> usize;
    /// Returns `log p(x)` and writes its gradient into `grad`. Returns `−∞`
    /// outside the support.
    fn logp_grad(&self, x: &[f64], grad: &mut [f64]) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Dense,
    Diagonal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub chains: usize,
    /// Warmup iterations per chain (discarded).
    pub burnin: usize,
    /// Post-warmup iterations per chain, before thinning.
    pub samples: usize,
    pub thin: usize,
    pub seed: u64,
    pub rhat_max: f64,
    pub target_accept: f64,
    /// Integration time per transition, in metric-scaled units.
    pub trajectory_length: f64,
    pub max_leapfrog: usize,
    pub metric: Metric,
    /// SD of the Gaussian perturbation applied to the initial point.
    pub init_jitter: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            chains: 4,
            burnin: 100_000,
            samples: 100_000,
            thin: 100,
            seed: 0,
            rhat_max: 1.05,
            target_accept: 0.8,
            trajectory_length: 2.0,
            max_leapfrog: 256,
            metric: Metric::Dense,
            init_jitter: 0.1,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chains == 0 {
            return Err(Error::invalid("chains must be at least 1"));
        }
        if self.thin == 0 {
            return Err(Error::invalid("thin must be at least 1"));
        }
        if self.samples < self.thin {
            return Err(Error::invalid(format!(
                "samples ({}) must be at least thin ({})",
                self.samples, self.thin
            )));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::invalid("target_accept must lie in (0, 1)"));
        }
        if !(self.trajectory_length > 0.0) || self.max_leapfrog == 0 {
            return Err(Error::invalid(
                "trajectory_length and max_leapfrog must be positive",
            ));
        }
        if !(self.init_jitter >= 0.0) || !(self.rhat_max > 0.0) {
            return Err(Error::invalid(
                "init_jitter must be non-negative and rhat_max positive",
            ));
        }
        Ok(())
    }

    pub fn retained_per_chain(&self) -> usize {
        self.samples / self.thin
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainOutput {
    /// Retained draws in the unconstrained space.
    pub draws: Vec<Vec<f64>>,
    /// Post-warmup transitions with an energy error above the divergence
    /// threshold or a non-finite density.
    pub divergences: usize,
    /// Adapted step size used during sampling (before jitter).
    pub step_size: f64,
    pub accept_rate: f64,
}

const DIVERGENCE: f64 = 1000.0;

/// Inverse metric `M⁻¹` and the factor `L⁻ᵀ` with `M⁻¹ = L·Lᵀ`, both
/// row-major; momentum draws are `p = L⁻ᵀ z`.
struct MassMatrix {
    n: usize,
    inv: Vec<f64>,
    chol_inv_t: Vec<f64>,
    diagonal: bool,
}

impl MassMatrix {
    fn identity(n: usize) -> Self {
        let mut eye = vec![0.0; n * n];
        for i in 0..n {
            eye[i * n + i] = 1.0;
        }
        Self {
            n,
            inv: eye.clone(),
            chol_inv_t: eye,
            diagonal: true,
        }
    }

    fn from_covariance(cov: Vec<f64>, n: usize, diagonal: bool) -> Option<Self> {
        if diagonal {
            let mut inv = vec![0.0; n * n];
            let mut f = vec![0.0; n * n];
            for i in 0..n {
                let v = cov[i * n + i];
                if !(v > 0.0 && v.is_finite()) {
                    return None;
                }
                inv[i * n + i] = v;
                f[i * n + i] = 1.0 / v.sqrt();
            }
            return Some(Self {
                n,
                inv,
                chol_inv_t: f,
                diagonal,
            });
        }
        let m = nalgebra::DMatrix::from_row_slice(n, n, &cov);
        let l = m.clone().cholesky()?.l();
        let l_inv = l.try_inverse()?;
        let f = l_inv.transpose();
        let to_rows = |a: &nalgebra::DMatrix<f64>| {
            (0..n)
                .flat_map(|i| (0..n).map(move |j| (i, j)))
                .map(|(i, j)| a[(i, j)])
                .collect()
        };
        Some(Self {
            n,
            inv: to_rows(&m),
            chol_inv_t: to_rows(&f),
            diagonal,
        })
    }

    fn apply(&self, a: &[f64], v: &[f64], out: &mut [f64]) {
        let n = self.n;
        if self.diagonal {
            for i in 0..n {
                out[i] = a[i * n + i] * v[i];
            }
            return;
        }
        for i in 0..n {
            out[i] = a[i * n..(i + 1) * n]
                .iter()
                .zip(v)
                .map(|(x, y)| x * y)
                .sum();
        }
    }

    fn velocity(&self, p: &[f64], out: &mut [f64]) {
        self.apply(&self.inv, p, out);
    }

    fn kinetic(&self, p: &[f64], scratch: &mut [f64]) -> f64 {
        self.velocity(p, scratch);
        0.5 * p
            .iter()
            .zip(scratch.iter())
            .map(|(a, b)| a * b)
            .sum::<f64>()
    }

    fn draw_momentum(&self, rng: &mut StreamRng, z: &mut [f64], p: &mut [f64]) {
        for v in z.iter_mut() {
            *v = rng::normal(rng);
        }
        self.apply(&self.chol_inv_t, z, p);
    }
}

struct State {
    x: Vec<f64>,
    grad: Vec<f64>,
    logp: f64,
}

struct Chain<'a, T: LogDensity> {
    target: &'a T,
    cfg: &'a SamplerConfig,
    rng: StreamRng,
    metric: MassMatrix,
    state: State,
    // scratch
    p: Vec<f64>,
    z: Vec<f64>,
    vel: Vec<f64>,
    prop: State,
}

struct Transition {
    accept_prob: f64,
    divergent: bool,
}

impl<'a, T: LogDensity> Chain<'a, T> {
    fn leapfrog_path(&mut self, eps: f64, steps: usize) -> bool {
        let n = self.state.x.len();
        self.prop.x.copy_from_slice(&self.state.x);
        self.prop.grad.copy_from_slice(&self.state.grad);
        for _ in 0..steps {
            for i in 0..n {
                self.p[i] += 0.5 * eps * self.prop.grad[i];
            }
            self.metric.velocity(&self.p, &mut self.vel);
            for i in 0..n {
                self.prop.x[i] += eps * self.vel[i];
            }
            self.prop.logp = self.target.logp_grad(&self.prop.x, &mut self.prop.grad);
            if !self.prop.logp.is_finite() {
                return false;
            }
            for i in 0..n {
                self.p[i] += 0.5 * eps * self.prop.grad[i];
            }
        }
        true
    }

    fn transition(&mut self, eps: f64, steps: usize) -> Transition {
        self.metric
            .draw_momentum(&mut self.rng, &mut self.z, &mut self.p);
        let h0 = -self.state.logp + self.metric.kinetic(&self.p, &mut self.vel);
        let ok = self.leapfrog_path(eps, steps);
        let h1 = if ok {
            -self.prop.logp + self.metric.kinetic(&self.p, &mut self.vel)
        } else {
            f64::INFINITY
        };
        let dh = h1 - h0;
        let divergent = !dh.is_finite() || dh > DIVERGENCE;
        let accept_prob = if dh.is_nan() {
            0.0
        } else {
            (-dh).exp().min(1.0)
        };
        let u: f64 = self.rng.random();
        if !divergent && u < accept_prob {
            std::mem::swap(&mut self.state, &mut self.prop);
        }
        Transition {
            accept_prob,
            divergent,
        }
    }

    fn steps_for(&self, eps: f64) -> usize {
        ((self.cfg.trajectory_length / eps).ceil() as usize).clamp(1, self.cfg.max_leapfrog)
    }

    /// Doubles or halves a step size until a single leapfrog step crosses
    /// acceptance probability one half.
    fn reasonable_epsilon(&mut self, start: f64) -> f64 {
        let mut eps = start;
        let log_half = 0.5f64.ln();
        let mut direction = 0.0;
        for _ in 0..60 {
            self.metric
                .draw_momentum(&mut self.rng, &mut self.z, &mut self.p);
            let h0 = -self.state.logp + self.metric.kinetic(&self.p, &mut self.vel);
            let ok = self.leapfrog_path(eps, 1);
            let dh = if ok {
                -self.prop.logp + self.metric.kinetic(&self.p, &mut self.vel) - h0
            } else {
                f64::INFINITY
            };
            let above = -dh > log_half;
            let dir = if above { 1.0 } else { -1.0 };
            if direction == 0.0 {
                direction = dir;
            } else if dir != direction {
                break;
            }
            eps *= 2f64.powf(direction);
            if !(1e-12..=1e6).contains(&eps) {
                break;
            }
        }
        eps.clamp(1e-12, 1e6)
    }
}

struct DualAveraging {
    mu: f64,
    h_bar: f64,
    log_eps: f64,
    log_eps_bar: f64,
    t: f64,
    delta: f64,
}

impl DualAveraging {
    const GAMMA: f64 = 0.05;
    const T0: f64 = 10.0;
    const KAPPA: f64 = 0.75;

    fn new(eps: f64, delta: f64) -> Self {
        Self {
            mu: (10.0 * eps).ln(),
            h_bar: 0.0,
            log_eps: eps.ln(),
            log_eps_bar: 0.0,
            t: 0.0,
            delta,
        }
    }

    fn update(&mut self, accept: f64) {
        self.t += 1.0;
        let w = 1.0 / (self.t + Self::T0);
        self.h_bar = (1.0 - w) * self.h_bar + w * (self.delta - accept);
        self.log_eps = self.mu - self.t.sqrt() / Self::GAMMA * self.h_bar;
        let eta = self.t.powf(-Self::KAPPA);
        self.log_eps_bar = eta * self.log_eps + (1.0 - eta) * self.log_eps_bar;
    }

    fn current(&self) -> f64 {
        self.log_eps.exp()
    }

    fn final_eps(&self) -> f64 {
        if self.t == 0.0 {
            self.current()
        } else {
            self.log_eps_bar.exp()
        }
    }
}

/// Slow-window end points (exclusive) for a warmup of `burnin` iterations.
fn warmup_windows(burnin: usize) -> (usize, Vec<usize>) {
    let (mut init, mut base, mut term) = (75usize, 25usize, 50usize);
    if init + base + term > burnin {
        init = burnin * 15 / 100;
        term = burnin / 10;
        base = burnin - init - term;
    }
    let end = burnin - term;
    let mut ends = Vec::new();
    let mut start = init;
    let mut w = base;
    while start < end {
        let mut stop = start + w;
        if stop + 2 * w > end {
            stop = end;
        }
        ends.push(stop);
        start = stop;
        w *= 2;
    }
    (init, ends)
}

/// Running mean and covariance.
struct Welford {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    fn new(d: usize) -> Self {
        Self {
            n: 0,
            mean: vec![0.0; d],
            m2: vec![0.0; d * d],
        }
    }

    fn push(&mut self, x: &[f64]) {
        let d = x.len();
        self.n += 1;
        let delta: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        for i in 0..d {
            self.mean[i] += delta[i] / self.n as f64;
        }
        for i in 0..d {
            let di = x[i] - self.mean[i];
            for j in 0..d {
                self.m2[i * d + j] += di * delta[j];
            }
        }
    }

    /// Sample covariance shrunk toward a small multiple of the identity.
    fn regularized(&self) -> Vec<f64> {
        let d = self.mean.len();
        let n = self.n as f64;
        let mut c: Vec<f64> = self.m2.iter().map(|v| v / (n - 1.0)).collect();
        for v in c.iter_mut() {
            *v *= n / (n + 5.0);
        }
        for i in 0..d {
            c[i * d + i] += 1e-3 * 5.0 / (n + 5.0);
        }
        c
    }
}

fn run_one<T: LogDensity>(
    target: &T,
    init: &[f64],
    cfg: &SamplerConfig,
    chain: usize,
) -> ChainOutput {
    let d = target.dim();
    let mut rng = rng::stream(cfg.seed, chain as u64);
    let mut grad = vec![0.0; d];
    let mut x = init.to_vec();
    let mut logp = f64::NEG_INFINITY;
    let mut jitter = cfg.init_jitter;
    for _ in 0..100 {
        x = init
            .iter()
            .map(|v| v + jitter * rng::normal(&mut rng))
            .collect();
        logp = target.logp_grad(&x, &mut grad);
        if logp.is_finite() {
            break;
        }
        jitter *= 0.5;
    }
    if !logp.is_finite() {
        x = init.to_vec();
        logp = target.logp_grad(&x, &mut grad);
    }

    let mut ch = Chain {
        target,
        cfg,
        rng,
        metric: MassMatrix::identity(d),
        state: State { x, grad, logp },
        p: vec![0.0; d],
        z: vec![0.0; d],
        vel: vec![0.0; d],
        prop: State {
            x: vec![0.0; d],
            grad: vec![0.0; d],
            logp: 0.0,
        },
    };

    let mut eps = ch.reasonable_epsilon(0.1);
    let mut da = DualAveraging::new(eps, cfg.target_accept);
    let (init_buf, ends) = warmup_windows(cfg.burnin);
    let mut window = Welford::new(d);
    let mut next_end = ends.iter().copied().peekable();
    for it in 0..cfg.burnin {
        let tr = ch.transition(eps, ch.steps_for(eps));
        da.update(tr.accept_prob);
        eps = da.current();
        if it >= init_buf && next_end.peek().is_some() {
            window.push(&ch.state.x);
            if Some(it + 1) == next_end.peek().copied() {
                next_end.next();
                if window.n >= 3 {
                    if let Some(m) = MassMatrix::from_covariance(
                        window.regularized(),
                        d,
                        cfg.metric == Metric::Diagonal,
                    ) {
                        ch.metric = m;
                    }
                }
                window = Welford::new(d);
                eps = ch.reasonable_epsilon(eps);
                da = DualAveraging::new(eps, cfg.target_accept);
            }
        }
    }
    let step_size = if cfg.burnin > 0 { da.final_eps() } else { eps };

    let mut draws = Vec::with_capacity(cfg.retained_per_chain());
    let mut divergences = 0;
    let mut accept_sum = 0.0;
    for it in 0..cfg.samples {
        let e = step_size * ch.rng.random_range(0.9..1.1);
        let tr = ch.transition(e, ch.steps_for(e));
        accept_sum += tr.accept_prob;
        divergences += tr.divergent as usize;
        if (it + 1) % cfg.thin == 0 {
            draws.push(ch.state.x.clone());
        }
    }
    ChainOutput {
        draws,
        divergences,
        step_size,
        accept_rate: if cfg.samples > 0 {
            accept_sum / cfg.samples as f64
        } else {
            f64::NAN
        },
    }
}

/// Runs `cfg.chains` independent chains from `init` in parallel. Chain `k`
/// draws from its own random stream `(cfg.seed, k)`, so the output depends
/// only on the inputs and not on scheduling.
pub fn run_chains<T: LogDensity + Sync>(
    target: &T,
    init: &[f64],
    cfg: &SamplerConfig,
) -> Vec<ChainOutput> {
    (0..cfg.chains)
        .into_par_iter()
        .map(|k| run_one(target, init, cfg, k))
        .collect()
}
