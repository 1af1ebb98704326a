//! Analytical finite-size correction for a diffusion coefficient estimated
//! under periodic boundary conditions:
//!
//! ```text
//! D∞ = D_MD + ζ·k_B·T / (g·π·η·L)
//! ```
//!
//! The denominator multiple `g` defaults to 2; the hydrodynamic form most
//! often quoted in the literature uses 6, and either can be selected.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Numerical constant of the cubic-lattice correction.
pub const ZETA: f64 = 2.8373;
/// Boltzmann constant, J/K.
pub const K_B: f64 = 1.380649e-23;
/// 1 m²/s expressed in Å²/ps.
pub const M2_PER_S_IN_A2_PER_PS: f64 = 1e8;

pub const DEFAULT_GEOMETRY_FACTOR: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrectionInput {
    /// Estimate under periodic boundaries, Å²/ps.
    pub d_md: f64,
    /// K.
    pub temperature: f64,
    /// Shear viscosity, Pa·s.
    pub viscosity: f64,
    /// Å.
    pub box_length: f64,
    #[serde(default = "default_g")]
    pub geometry_factor: f64,
}

fn default_g() -> f64 {
    DEFAULT_GEOMETRY_FACTOR
}

impl CorrectionInput {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("temperature", self.temperature),
            ("viscosity", self.viscosity),
            ("box_length", self.box_length),
            ("geometry_factor", self.geometry_factor),
        ];
        for (name, v) in checks {
            if !(v > 0.0) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !self.d_md.is_finite() {
            return Err(Error::invalid("d_md must be finite"));
        }
        Ok(())
    }

    /// The additive correction `ζ·k_B·T/(g·π·η·L)` in Å²/ps.
    pub fn correction_term(&self) -> f64 {
        let l_m = self.box_length * 1e-10;
        ZETA * K_B * self.temperature
            / (self.geometry_factor * std::f64::consts::PI * self.viscosity * l_m)
            * M2_PER_S_IN_A2_PER_PS
    }
}

/// Size-corrected diffusion coefficient, Å²/ps.
pub fn yeh_hummer(c: &CorrectionInput) -> Result<f64> {
    c.validate()?;
    Ok(c.d_md + c.correction_term())
}

/// Effective box length: the cube root of the mean volume.
pub fn box_length(volumes: &[f64]) -> Result<f64> {
    if volumes.is_empty() {
        return Err(Error::invalid("no box volumes"));
    }
    if let Some(v) = volumes.iter().find(|v| !(**v > 0.0)) {
        return Err(Error::invalid(format!(
            "box volume must be positive, got {v}"
        )));
    }
    Ok((volumes.iter().sum::<f64>() / volumes.len() as f64).cbrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn input(g: f64) -> CorrectionInput {
        CorrectionInput {
            d_md: 0.0,
            temperature: 298.0,
            viscosity: 8.55e-4,
            box_length: 20.0,
            geometry_factor: g,
        }
    }

    #[test]
    fn room_temperature_term() {
        // 2.8373 · 1.380649e-23 · 298 / (2π · 8.55e-4 · 2e-9) m²/s
        let v = yeh_hummer(&input(2.0)).unwrap();
        assert_relative_eq!(v, 0.108_650, max_relative = 1e-5);
        assert_relative_eq!(
            yeh_hummer(&input(6.0)).unwrap() * 3.0,
            v,
            max_relative = 1e-14
        );
    }

    #[test]
    fn large_box_limit() {
        let c = CorrectionInput {
            d_md: 0.2,
            box_length: 1e12,
            ..input(2.0)
        };
        assert_relative_eq!(yeh_hummer(&c).unwrap(), 0.2, max_relative = 1e-9);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(yeh_hummer(&CorrectionInput {
            viscosity: 0.0,
            ..input(2.0)
        })
        .is_err());
        assert!(yeh_hummer(&CorrectionInput {
            box_length: -1.0,
            ..input(2.0)
        })
        .is_err());
    }

    #[test]
    fn box_lengths() {
        assert_relative_eq!(box_length(&[8000.0]).unwrap(), 20.0, max_relative = 1e-15);
        assert_relative_eq!(
            box_length(&[1000.0, 27000.0]).unwrap(),
            24.101_422_641_752_3,
            max_relative = 1e-12
        );
        assert!(box_length(&[]).is_err());
        assert!(box_length(&[1.0, 0.0]).is_err());
    }
}
