//! Rigid two-molecule interaction energies between the radical and one water.
//!
//! Each orientation places the two proximate atoms on the x axis with the
//! radical's bond collinear behind its proximate atom. When water presents
//! its oxygen, the molecule's bisector points away along +x; when it
//! presents a hydrogen, that O–H bond is collinear with the axis.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::LJParams;
use crate::error::{Error, Result};
use crate::trajio::Vec3;

/// Coulomb constant, kcal·Å/(mol·e²).
pub const COULOMB_K: f64 = 332.0636;

/// Lennard-Jones well form `√|εA·εB|·[(r_m/R)¹² − 2(r_m/R)⁶]` with
/// `r_m = rmin2A + rmin2B`. Depths are given in the negative convention.
pub fn lj_energy(r: f64, eps_a: f64, eps_b: f64, rmin2_a: f64, rmin2_b: f64) -> f64 {
    let rm = rmin2_a + rmin2_b;
    let s6 = (rm / r).powi(6);
    (eps_a * eps_b).abs().sqrt() * (s6 * s6 - 2.0 * s6)
}

pub fn coulomb_energy(r: f64, q_a: f64, q_b: f64) -> f64 {
    COULOMB_K * q_a * q_b / r
}

/// Four-site rigid water: LJ on oxygen only, charges on the hydrogens and
/// the massless site `M` on the bisector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WaterModel {
    /// Å.
    pub r_oh: f64,
    /// Degrees.
    pub hoh_angle: f64,
    /// O–M distance, Å.
    pub d_om: f64,
    pub q_h: f64,
    pub q_m: f64,
    /// kcal/mol, negative convention.
    pub eps_o: f64,
    /// Å.
    pub rmin2_o: f64,
}

impl WaterModel {
    pub const TIP4P_2005: Self = Self {
        r_oh: 0.9572,
        hoh_angle: 104.52,
        d_om: 0.1546,
        q_h: 0.5564,
        q_m: -1.1128,
        eps_o: -0.1852,
        rmin2_o: 1.772_88,
    };
}

impl Default for WaterModel {
    fn default() -> Self {
        Self::TIP4P_2005
    }
}

/// Fixed properties of the radical other than the calibrated LJ terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadicalModel {
    /// Å.
    pub r_oh: f64,
    pub q_o: f64,
    pub q_h: f64,
}

impl Default for RadicalModel {
    fn default() -> Self {
        Self {
            r_oh: 0.9751,
            q_o: 0.0,
            q_h: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PairModel {
    pub water: WaterModel,
    pub radical: RadicalModel,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Site {
    pub pos: Vec3,
    pub charge: f64,
    /// `(eps, rmin2)` when the site carries LJ terms.
    pub lj: Option<(f64, f64)>,
}

/// Which radical atom faces which water atom.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Orientation {
    /// Radical O facing water O.
    OO,
    /// Radical O accepting from a water H (water donor).
    OH,
    /// Radical H donating to water O (water acceptor).
    HO,
    /// Radical H facing a water H.
    HH,
}

impl Orientation {
    pub const ALL: [Orientation; 4] = [Self::OO, Self::OH, Self::HO, Self::HH];

    fn radical_o_proximate(self) -> bool {
        matches!(self, Self::OO | Self::OH)
    }

    fn water_o_proximate(self) -> bool {
        matches!(self, Self::OO | Self::HO)
    }
}

impl FromStr for Orientation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "OO" => Ok(Self::OO),
            "OH" => Ok(Self::OH),
            "HO" => Ok(Self::HO),
            "HH" => Ok(Self::HH),
            _ => Err(Error::invalid(format!(
                "unknown orientation {s:?} (expected OO, OH, HO or HH)"
            ))),
        }
    }
}

impl std::fmt::Display for Orientation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::OO => "OO",
            Self::OH => "OH",
            Self::HO => "HO",
            Self::HH => "HH",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SiteGeometry {
    pub orientation: Orientation,
    /// Distance between the proximate atoms, Å.
    pub separation: f64,
}

impl SiteGeometry {
    /// Radical sites and water sites for this configuration.
    pub fn sites(&self, p: &LJParams, m: &PairModel) -> Result<(Vec<Site>, Vec<Site>)> {
        let r = self.separation;
        if !(r > 0.0) {
            return Err(Error::invalid(format!(
                "separation must be positive, got {r}"
            )));
        }
        let rad = &m.radical;
        let o = Site {
            pos: [0.0; 3],
            charge: rad.q_o,
            lj: Some((p.eps_o, p.rmin2_o)),
        };
        let h = Site {
            pos: [0.0; 3],
            charge: rad.q_h,
            lj: Some((p.eps_h, p.rmin2_h)),
        };
        let (mut near, mut far) = if self.orientation.radical_o_proximate() {
            (o, h)
        } else {
            (h, o)
        };
        near.pos = [0.0, 0.0, 0.0];
        far.pos = [-rad.r_oh, 0.0, 0.0];

        let w = &m.water;
        let theta = w.hoh_angle.to_radians();
        let add = |a: Vec3, s: f64, d: Vec3| [a[0] + s * d[0], a[1] + s * d[1], a[2] + s * d[2]];
        let (wo, h1, h2, msite) = if self.orientation.water_o_proximate() {
            let wo = [r, 0.0, 0.0];
            let (c, s) = ((theta / 2.0).cos(), (theta / 2.0).sin());
            (
                wo,
                add(wo, w.r_oh, [c, s, 0.0]),
                add(wo, w.r_oh, [c, -s, 0.0]),
                add(wo, w.d_om, [1.0, 0.0, 0.0]),
            )
        } else {
            let h1 = [r, 0.0, 0.0];
            let wo = [r + w.r_oh, 0.0, 0.0];
            let u2 = [-theta.cos(), theta.sin(), 0.0];
            let h2 = add(wo, w.r_oh, u2);
            let bis = [-1.0 + u2[0], u2[1], 0.0];
            let nb = (bis[0] * bis[0] + bis[1] * bis[1]).sqrt();
            (wo, h1, h2, add(wo, w.d_om / nb, bis))
        };
        let water = vec![
            Site {
                pos: wo,
                charge: 0.0,
                lj: Some((w.eps_o, w.rmin2_o)),
            },
            Site {
                pos: h1,
                charge: w.q_h,
                lj: None,
            },
            Site {
                pos: h2,
                charge: w.q_h,
                lj: None,
            },
            Site {
                pos: msite,
                charge: w.q_m,
                lj: None,
            },
        ];
        Ok((vec![near, far], water))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyParts {
    pub lj: f64,
    pub coulomb: f64,
    pub total: f64,
}

/// Sum of LJ (between LJ-bearing sites) and Coulomb terms over all
/// cross-molecule site pairs, kcal/mol.
pub fn pair_energy_sites(a: &[Site], b: &[Site]) -> Result<EnergyParts> {
    let (mut lj, mut coulomb) = (0.0, 0.0);
    for sa in a {
        for sb in b {
            let d: f64 = (0..3)
                .map(|k| (sa.pos[k] - sb.pos[k]).powi(2))
                .sum::<f64>()
                .sqrt();
            if d == 0.0 {
                return Err(Error::invalid("overlapping interaction sites"));
            }
            if let (Some((ea, ra)), Some((eb, rb))) = (sa.lj, sb.lj) {
                lj += lj_energy(d, ea, eb, ra, rb);
            }
            if sa.charge != 0.0 && sb.charge != 0.0 {
                coulomb += coulomb_energy(d, sa.charge, sb.charge);
            }
        }
    }
    Ok(EnergyParts {
        lj,
        coulomb,
        total: lj + coulomb,
    })
}

pub fn pair_energy(g: &SiteGeometry, p: &LJParams, m: &PairModel) -> Result<EnergyParts> {
    let (rad, water) = g.sites(p, m)?;
    pair_energy_sites(&rad, &water)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanPoint {
    #[serde(rename = "R")]
    pub r: f64,
    pub energy_lj: f64,
    pub energy_coulomb: f64,
    pub energy_total: f64,
}

/// Evenly spaced separations from `rmin` to `rmax` inclusive.
pub fn scan_grid(rmin: f64, rmax: f64, step: f64) -> Result<Vec<f64>> {
    if !(rmin > 0.0 && rmax >= rmin && step > 0.0) {
        return Err(Error::invalid(format!(
            "bad scan grid {rmin}:{rmax}:{step}"
        )));
    }
    let n = ((rmax - rmin) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| rmin + i as f64 * step).collect())
}

/// Energy curve over separations for one orientation.
pub fn scan(o: Orientation, p: &LJParams, m: &PairModel, grid: &[f64]) -> Result<Vec<ScanPoint>> {
    grid.iter()
        .map(|&r| {
            let e = pair_energy(
                &SiteGeometry {
                    orientation: o,
                    separation: r,
                },
                p,
                m,
            )?;
            Ok(ScanPoint {
                r,
                energy_lj: e.lj,
                energy_coulomb: e.coulomb,
                energy_total: e.total,
            })
        })
        .collect()
}
