use serde::{Deserialize, Serialize};

use super::LJParams;
use crate::error::{Error, Result};

/// Radical inverse of `index` in `base`: the digits of `index` mirrored
/// about the radix point.
///
/// # Panics
/// If `base < 2`.
pub fn halton(index: u64, base: u32) -> f64 {
    assert!(base >= 2, "halton base must be at least 2");
    // Integer digits and a single division: the result is the correctly
    // rounded fraction whenever the denominator fits in 53 bits.
    let b = u128::from(base);
    let (mut i, mut num, mut den) = (u128::from(index), 0u128, 1u128);
    while i > 0 {
        num = num * b + i % b;
        den *= b;
        i /= b;
    }
    num as f64 / den as f64
}

/// Search box for the four non-bonded parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HaltonRanges {
    pub eps_o: [f64; 2],
    pub eps_h: [f64; 2],
    pub rmin2_o: [f64; 2],
    pub rmin2_h: [f64; 2],
}

impl HaltonRanges {
    /// Coarse first-stage box.
    pub const COARSE: Self = Self {
        eps_o: [-0.5, 0.0],
        eps_h: [-0.5, 0.0],
        rmin2_o: [0.0, 3.0],
        rmin2_h: [0.0, 2.0],
    };
    /// Refinement box around the first-stage optimum.
    pub const REFINE: Self = Self {
        eps_o: [-0.26, -0.18],
        eps_h: [-0.31, -0.27],
        rmin2_o: [0.6, 1.1],
        rmin2_h: [0.72, 0.78],
    };

    fn all(&self) -> [[f64; 2]; 4] {
        [self.eps_o, self.eps_h, self.rmin2_o, self.rmin2_h]
    }

    pub fn validate(&self) -> Result<()> {
        for [lo, hi] in self.all() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::invalid(format!("invalid range ({lo}, {hi})")));
            }
        }
        Ok(())
    }
}

/// Candidates `1..=n` of the four-dimensional Halton sequence (bases 2, 3,
/// 5, 7) mapped affinely onto `ranges`.
pub fn halton_candidates(n: usize, ranges: &HaltonRanges) -> Result<Vec<LJParams>> {
    if n == 0 {
        return Err(Error::invalid("candidate count must be at least 1"));
    }
    ranges.validate()?;
    let r = ranges.all();
    Ok((1..=n as u64)
        .map(|i| {
            let v: Vec<f64> = [2, 3, 5, 7]
                .iter()
                .zip(&r)
                .map(|(&b, [lo, hi])| lo + halton(i, b) * (hi - lo))
                .collect();
            LJParams {
                eps_o: v[0],
                eps_h: v[1],
                rmin2_o: v[2],
                rmin2_h: v[3],
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn radical_inverse() {
        let b2: Vec<f64> = (1..=3).map(|i| halton(i, 2)).collect();
        assert_eq!(b2, [0.5, 0.25, 0.75]);
        assert_eq!(halton(1, 3), 1.0 / 3.0);
        assert_eq!(halton(2, 3), 2.0 / 3.0);
        assert_eq!(halton(3, 3), 1.0 / 9.0);
        assert_eq!(halton(0, 5), 0.0);
    }

    #[test]
    fn first_candidate() {
        let c = halton_candidates(1, &HaltonRanges::COARSE).unwrap()[0];
        assert_abs_diff_eq!(c.eps_o, -0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(c.eps_h, -0.5 + 0.5 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(c.rmin2_o, 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(c.rmin2_h, 2.0 / 7.0, epsilon = 1e-15);
    }

    #[test]
    fn candidates_stay_in_range() {
        for ranges in [HaltonRanges::COARSE, HaltonRanges::REFINE] {
            for c in halton_candidates(250, &ranges).unwrap() {
                assert!(c.eps_o >= ranges.eps_o[0] && c.eps_o < ranges.eps_o[1]);
                assert!(c.eps_h >= ranges.eps_h[0] && c.eps_h < ranges.eps_h[1]);
                assert!(c.rmin2_o >= ranges.rmin2_o[0] && c.rmin2_o < ranges.rmin2_o[1]);
                assert!(c.rmin2_h >= ranges.rmin2_h[0] && c.rmin2_h < ranges.rmin2_h[1]);
            }
        }
        assert!(halton_candidates(0, &HaltonRanges::COARSE).is_err());
        let bad = HaltonRanges {
            eps_o: [0.0, -1.0],
            ..HaltonRanges::COARSE
        };
        assert!(halton_candidates(3, &bad).is_err());
    }

    #[test]
    fn low_discrepancy() {
        // star discrepancy of a 1D point set, from its sorted values
        let mut v: Vec<f64> = (1..=1000).map(|i| halton(i, 2)).collect();
        v.sort_by(f64::total_cmp);
        let n = v.len() as f64;
        let d = v
            .iter()
            .enumerate()
            .map(|(i, x)| ((i as f64 + 1.0) / n - x).max(x - i as f64 / n))
            .fold(0.0, f64::max);
        assert!(d < 0.01, "discrepancy {d}");
    }
}
