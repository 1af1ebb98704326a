//! Log-log polynomial summary of `D(T, P)`:
//!
//! ```text
//! log D = c0 + cT·T' + cP·P' + cT2·T'² + cP2·P'² + cTP·T'·P' + cP3·P'³
//! ```
//!
//! with `T' = ln(T / K)` and `P' = ln(P / atm)`. Fitting centers and scales
//! `T'` and `P'` before an orthogonal least-squares solve, then maps the
//! coefficients back to the raw basis; the raw `T'` columns are nearly
//! collinear over any realistic temperature range.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const N_TERMS: usize = 7;

/// Simulation temperatures of the reference design, K.
pub const GRID_TEMPERATURES: [f64; 4] = [263.0, 273.0, 283.0, 298.0];
/// Simulation pressures of the reference design, atm.
pub const GRID_PRESSURES: [f64; 5] = [1.0, 10.0, 100.0, 1000.0, 10000.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub n: usize,
    /// Residual degrees of freedom, `n − 7`.
    pub df: usize,
    /// Coefficient of determination on the log scale.
    pub r2: f64,
    /// Residual standard error on the log scale.
    pub resid_se: f64,
    /// Root-mean-square error of `exp(fit)` against `D`, Å²/ps.
    pub rmse: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfaceCoeffs {
    pub c0: f64,
    #[serde(rename = "cT")]
    pub c_t: f64,
    #[serde(rename = "cP")]
    pub c_p: f64,
    #[serde(rename = "cT2")]
    pub c_t2: f64,
    #[serde(rename = "cP2")]
    pub c_p2: f64,
    #[serde(rename = "cTP")]
    pub c_tp: f64,
    #[serde(rename = "cP3")]
    pub c_p3: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitDiagnostics>,
}

impl SurfaceCoeffs {
    /// Reference surface for the hydroxyl radical in water.
    pub const REFERENCE: Self = Self {
        c0: -441.0203,
        c_t: 147.6812,
        c_p: 0.822_537_2,
        c_t2: -12.38130,
        c_p2: 0.028_148_01,
        c_tp: -0.158_232_5,
        c_p3: -0.002_622_113,
        fit: None,
    };

    pub fn from_array(c: [f64; N_TERMS]) -> Self {
        Self {
            c0: c[0],
            c_t: c[1],
            c_p: c[2],
            c_t2: c[3],
            c_p2: c[4],
            c_tp: c[5],
            c_p3: c[6],
            fit: None,
        }
    }

    pub fn to_array(&self) -> [f64; N_TERMS] {
        [
            self.c0, self.c_t, self.c_p, self.c_t2, self.c_p2, self.c_tp, self.c_p3,
        ]
    }

    /// `log D` at log coordinates `(t, p)`.
    pub fn log_d(&self, t: f64, p: f64) -> f64 {
        let b = basis(t, p);
        self.to_array().iter().zip(&b).map(|(c, x)| c * x).sum()
    }
}

fn basis(t: f64, p: f64) -> [f64; N_TERMS] {
    [1.0, t, p, t * t, p * p, t * p, p * p * p]
}

/// Exponents `(i, j)` of `T'^i·P'^j` for each basis term.
const POWERS: [(usize, usize); N_TERMS] = [(0, 0), (1, 0), (0, 1), (2, 0), (0, 2), (1, 1), (0, 3)];

/// Diffusion coefficient at `T` (K), `P` (atm), Å²/ps.
pub fn eval_surface(c: &SurfaceCoeffs, temperature: f64, pressure: f64) -> Result<f64> {
    if !(temperature > 0.0 && pressure > 0.0) {
        return Err(Error::invalid(format!(
            "temperature and pressure must be positive, got {temperature}, {pressure}"
        )));
    }
    Ok(c.log_d(temperature.ln(), pressure.ln()).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfacePoint {
    #[serde(rename = "temperature_K")]
    pub temperature: f64,
    #[serde(rename = "pressure_atm")]
    pub pressure: f64,
    #[serde(rename = "d_mean")]
    pub d: f64,
}

fn binom(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Rewrites coefficients of the basis in `u = (t − t0)/st, v = (p − p0)/sp`
/// as coefficients of the basis in `(t, p)`.
fn unshift(b: &[f64], t0: f64, st: f64, p0: f64, sp: f64) -> [f64; N_TERMS] {
    // poly[i][j] holds the coefficient of t^i p^j
    let mut poly = [[0.0; 4]; 3];
    for (k, &(i, j)) in POWERS.iter().enumerate() {
        // b_k·((t − t0)/st)^i·((p − p0)/sp)^j
        let scale = b[k] / (st.powi(i as i32) * sp.powi(j as i32));
        for a in 0..=i {
            for c in 0..=j {
                let ct = binom(i, a) * (-t0).powi((i - a) as i32);
                let cp = binom(j, c) * (-p0).powi((j - c) as i32);
                poly[a][c] += scale * ct * cp;
            }
        }
    }
    let mut out = [0.0; N_TERMS];
    for (k, &(i, j)) in POWERS.iter().enumerate() {
        out[k] = poly[i][j];
    }
    out
}

/// Ordinary least squares of `ln D` on the seven-term basis.
pub fn fit_surface(points: &[SurfacePoint]) -> Result<SurfaceCoeffs> {
    let n = points.len();
    if n < N_TERMS + 1 {
        return Err(Error::invalid(format!(
            "need at least {} points, got {n}",
            N_TERMS + 1
        )));
    }
    if let Some(p) = points
        .iter()
        .find(|p| !(p.temperature > 0.0 && p.pressure > 0.0 && p.d > 0.0))
    {
        return Err(Error::invalid(format!(
            "temperature, pressure and D must be positive, got ({}, {}, {})",
            p.temperature, p.pressure, p.d
        )));
    }
    let t: Vec<f64> = points.iter().map(|p| p.temperature.ln()).collect();
    let p: Vec<f64> = points.iter().map(|p| p.pressure.ln()).collect();
    let y: Vec<f64> = points.iter().map(|p| p.d.ln()).collect();
    let center = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let s = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt();
        (m, if s > 0.0 { s } else { 1.0 })
    };
    let (t0, st) = center(&t);
    let (p0, sp) = center(&p);

    let x = DMatrix::from_fn(n, N_TERMS, |r, c| {
        basis((t[r] - t0) / st, (p[r] - p0) / sp)[c]
    });
    let norms: Vec<f64> = (0..N_TERMS).map(|c| x.column(c).norm()).collect();
    if norms.contains(&0.0) {
        return Err(Error::RankDeficient);
    }
    let xs = DMatrix::from_fn(n, N_TERMS, |r, c| x[(r, c)] / norms[c]);
    let qr = xs.qr();
    let r = qr.r();
    let diag_max = (0..N_TERMS).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    if (0..N_TERMS).any(|i| r[(i, i)].abs() <= 1e-10 * diag_max) {
        return Err(Error::RankDeficient);
    }
    let yv = DVector::from_column_slice(&y);
    let qty = qr.q().transpose() * &yv;
    let bs = r.solve_upper_triangular(&qty).ok_or(Error::RankDeficient)?;
    let b: Vec<f64> = (0..N_TERMS).map(|c| bs[c] / norms[c]).collect();

    let fitted = &x * DVector::from_column_slice(&b);
    let ss_res: f64 = (0..n).map(|i| (y[i] - fitted[i]).powi(2)).sum();
    let ym = y.iter().sum::<f64>() / n as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - ym).powi(2)).sum();
    // round-off floor for sums of squares of log D values of this magnitude
    let floor = n as f64 * (1e-12 * ym.abs().max(1.0)).powi(2);
    let r2 = if ss_tot > floor {
        1.0 - ss_res / ss_tot
    } else if ss_res <= floor {
        1.0
    } else {
        0.0
    };
    let df = n - N_TERMS;
    let rmse = ((0..n)
        .map(|i| (points[i].d - fitted[i].exp()).powi(2))
        .sum::<f64>()
        / n as f64)
        .sqrt();

    let mut c = SurfaceCoeffs::from_array(unshift(&b, t0, st, p0, sp));
    c.fit = Some(FitDiagnostics {
        n,
        df,
        r2: r2.clamp(0.0, 1.0),
        resid_se: (ss_res / df as f64).sqrt(),
        rmse,
    });
    Ok(c)
}

/// Points on the reference `T × P` design sampled from `c`.
pub fn grid_points(c: &SurfaceCoeffs) -> Vec<SurfacePoint> {
    GRID_TEMPERATURES
        .iter()
        .flat_map(|&temperature| {
            GRID_PRESSURES.iter().map(move |&pressure| SurfacePoint {
                temperature,
                pressure,
                d: c.log_d(temperature.ln(), pressure.ln()).exp(),
            })
        })
        .collect()
}
