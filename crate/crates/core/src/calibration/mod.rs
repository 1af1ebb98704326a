//! Non-bonded parameter search for the radical: quasi-random candidates,
//! rigid pair energetics in four orientations, and selection by orientation
//! preference and absolute relative error in the diffusion coefficient.
//!
//! Diffusion estimates for each candidate come from outside (MD runs or the
//! synthetic harness); this module scores and ranks them.

mod energy;
mod halton;

pub use energy::{
    coulomb_energy, lj_energy, pair_energy, pair_energy_sites, scan, scan_grid, EnergyParts,
    Orientation, PairModel, RadicalModel, ScanPoint, Site, SiteGeometry, WaterModel, COULOMB_K,
};
pub use halton::{halton, halton_candidates, HaltonRanges};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Target diffusion coefficient of the radical at 298 K and 1 atm, Å²/ps.
pub const REFERENCE_D: f64 = 0.23;

/// Default separation band for the orientation comparison, Å.
pub const DEFAULT_BAND: (f64, f64) = (1.5, 3.5);

/// Radical LJ parameters. Depths use the negative convention.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LJParams {
    pub eps_o: f64,
    pub eps_h: f64,
    pub rmin2_o: f64,
    pub rmin2_h: f64,
}

impl LJParams {
    /// Final calibrated values.
    pub const CALIBRATED: Self = Self {
        eps_o: -0.235,
        eps_h: -0.3068,
        rmin2_o: 0.78185,
        rmin2_h: 0.746939,
    };

    pub fn validate(&self) -> Result<()> {
        if !(self.eps_o <= 0.0 && self.eps_h <= 0.0) {
            return Err(Error::invalid("well depths must be non-positive"));
        }
        if !(self.rmin2_o > 0.0 && self.rmin2_h > 0.0) {
            return Err(Error::invalid("half-radii must be positive"));
        }
        Ok(())
    }
}

/// Absolute relative error `|reference − estimate| / |reference|`.
pub fn are(estimate: f64, reference: f64) -> Result<f64> {
    if reference == 0.0 || !reference.is_finite() {
        return Err(Error::invalid("reference must be finite and non-zero"));
    }
    Ok((reference - estimate).abs() / reference.abs())
}

/// Energy curves for the four orientations.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OrientationScans {
    pub oo: Vec<ScanPoint>,
    pub oh: Vec<ScanPoint>,
    pub ho: Vec<ScanPoint>,
    pub hh: Vec<ScanPoint>,
}

impl OrientationScans {
    pub fn compute(p: &LJParams, m: &PairModel, grid: &[f64]) -> Result<Self> {
        Ok(Self {
            oo: scan(Orientation::OO, p, m, grid)?,
            oh: scan(Orientation::OH, p, m, grid)?,
            ho: scan(Orientation::HO, p, m, grid)?,
            hh: scan(Orientation::HH, p, m, grid)?,
        })
    }

    pub fn is_empty(&self) -> bool {
        self.oo.is_empty() || self.oh.is_empty() || self.ho.is_empty() || self.hh.is_empty()
    }

    /// Whether both hydrogen-bonded orientations reach a lower total energy
    /// than their flipped counterparts within `band`: water donor below O–O
    /// and water acceptor below H–H.
    pub fn favors_hydrogen_bonds(&self, band: (f64, f64)) -> bool {
        let min_in = |c: &[ScanPoint]| {
            c.iter()
                .filter(|p| p.r >= band.0 - 1e-9 && p.r <= band.1 + 1e-9)
                .map(|p| p.energy_total)
                .fold(f64::INFINITY, f64::min)
        };
        let (oo, oh, ho, hh) = (
            min_in(&self.oo),
            min_in(&self.oh),
            min_in(&self.ho),
            min_in(&self.hh),
        );
        oh.is_finite() && oo.is_finite() && oh < oo && ho.is_finite() && hh.is_finite() && ho < hh
    }
}

/// A candidate as read from a file: parameters plus its measured diffusion
/// coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub params: LJParams,
    pub d_estimate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateResult {
    pub params: LJParams,
    /// Å²/ps.
    pub d_estimate: f64,
    pub are: f64,
    pub orientation_ok: bool,
    #[serde(default, skip_serializing_if = "OrientationScans::is_empty")]
    pub scans: OrientationScans,
}

impl CandidateResult {
    pub fn evaluate(
        c: &Candidate,
        reference: f64,
        m: &PairModel,
        grid: &[f64],
        band: (f64, f64),
    ) -> Result<Self> {
        c.params.validate()?;
        let scans = OrientationScans::compute(&c.params, m, grid)?;
        Ok(Self {
            params: c.params,
            d_estimate: c.d_estimate,
            are: are(c.d_estimate, reference)?,
            orientation_ok: scans.favors_hydrogen_bonds(band),
            scans,
        })
    }
}

/// Keeps candidates that favor hydrogen-bonded orientations over `band` and
/// orders them by ascending ARE (stable for ties). Candidates carrying scan
/// curves are re-judged over `band`; the rest keep their recorded flag. An
/// empty result is logged, not an error.
pub fn winnow(cands: &[CandidateResult], band: (f64, f64)) -> Result<Vec<CandidateResult>> {
    if cands.is_empty() {
        return Err(Error::invalid("no candidates to winnow"));
    }
    if !(band.0 < band.1) {
        return Err(Error::invalid(format!(
            "empty distance band {}:{}",
            band.0, band.1
        )));
    }
    let mut kept: Vec<CandidateResult> = cands
        .iter()
        .filter_map(|c| {
            let ok = if c.scans.is_empty() {
                c.orientation_ok
            } else {
                c.scans.favors_hydrogen_bonds(band)
            };
            ok.then(|| CandidateResult {
                orientation_ok: true,
                ..c.clone()
            })
        })
        .collect();
    kept.sort_by(|a, b| a.are.total_cmp(&b.are));
    if kept.is_empty() {
        log::warn!(
            "no candidate favors hydrogen-bonded orientations over {}..{} Å",
            band.0,
            band.1
        );
    }
    Ok(kept)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn bare(are: f64, ok: bool) -> CandidateResult {
        CandidateResult {
            params: LJParams::CALIBRATED,
            d_estimate: REFERENCE_D * (1.0 - are),
            are,
            orientation_ok: ok,
            scans: OrientationScans::default(),
        }
    }

    #[test]
    fn are_values() {
        assert_abs_diff_eq!(are(0.222, 0.23).unwrap(), 0.008 / 0.23, epsilon = 1e-15);
        assert_eq!(are(0.23, 0.23).unwrap(), 0.0);
        assert_eq!(are(0.0, 0.23).unwrap(), 1.0);
        assert!(are(0.1, 0.0).is_err());
        assert_abs_diff_eq!(
            are(3.0 * 0.2, 3.0 * 0.25).unwrap(),
            are(0.2, 0.25).unwrap(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn filter_precedes_sort() {
        let out = winnow(&[bare(0.05, false), bare(0.2, true)], DEFAULT_BAND).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].are, 0.2);
        let one = winnow(&[bare(0.1, true)], DEFAULT_BAND).unwrap();
        assert_eq!(one, vec![bare(0.1, true)]);
        assert!(winnow(&[bare(0.1, false)], DEFAULT_BAND)
            .unwrap()
            .is_empty());
        assert!(winnow(&[], DEFAULT_BAND).is_err());
    }

    #[test]
    fn stable_for_ties() {
        let mut a = bare(0.1, true);
        a.d_estimate = 1.0;
        let mut b = bare(0.1, true);
        b.d_estimate = 2.0;
        let out = winnow(&[a.clone(), bare(0.0, true), b.clone()], DEFAULT_BAND).unwrap();
        assert_eq!(out[1].d_estimate, 1.0);
        assert_eq!(out[2].d_estimate, 2.0);
    }

    #[test]
    fn calibrated_parameters_favor_hydrogen_bonds() {
        let m = PairModel {
            radical: RadicalModel {
                q_o: -0.41,
                q_h: 0.41,
                ..Default::default()
            },
            ..Default::default()
        };
        let grid = scan_grid(1.0, 5.0, 0.05).unwrap();
        let c = Candidate {
            params: LJParams::CALIBRATED,
            d_estimate: 0.222,
        };
        let r = CandidateResult::evaluate(&c, REFERENCE_D, &m, &grid, DEFAULT_BAND).unwrap();
        assert!(r.orientation_ok);
        assert_eq!(r.scans.oo.len(), 81);
    }
}
