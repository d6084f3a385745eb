//! Scalar kernels of the all-threshold smooth hinge model.
//!
//! A user's thresholds `θ_1 <= ... <= θ_{R-1}` cut the real score line into
//! `R` intervals. Rating `r` owns `(θ_{r-1}, θ_r]`, with the implied
//! sentinels `θ_0 = -inf` and `θ_R = +inf`.

use crate::error::{Error, Result};

/// Lower bound applied to the average threshold gap.
pub const MIN_THRESHOLD_GAP: f64 = 1e-6;

/// Smooth hinge: zero past the margin, quadratic on `(0, 1)`, linear below.
#[inline]
pub fn smooth_hinge(z: f64) -> f64 {
    if z >= 1.0 {
        0.0
    } else if z > 0.0 {
        0.5 * (1.0 - z) * (1.0 - z)
    } else {
        0.5 - z
    }
}

/// Derivative of [`smooth_hinge`]; always in `[-1, 0]`.
#[inline]
pub fn smooth_hinge_grad(z: f64) -> f64 {
    if z >= 1.0 {
        0.0
    } else if z > 0.0 {
        z - 1.0
    } else {
        -1.0
    }
}

/// Sign of threshold `r` relative to an observed rating `y`: `+1` when the
/// score should sit below `θ_r` (`r >= y`), `-1` when above.
#[inline]
pub fn t_indicator(r: u8, y: u8) -> f64 {
    debug_assert!(r >= 1 && y >= 1, "threshold level and rating start at 1");
    if r >= y {
        1.0
    } else {
        -1.0
    }
}

/// Threshold `r` of a row with the `±inf` sentinels at `r = 0` and `r = R`.
#[inline]
pub fn threshold_at(row: &[f64], r: usize) -> f64 {
    if r == 0 {
        f64::NEG_INFINITY
    } else if r > row.len() {
        f64::INFINITY
    } else {
        row[r - 1]
    }
}

/// Maps a score to the rating whose half-open interval `(θ_{r-1}, θ_r]`
/// contains it. Scans `r = 1..=R` and returns the first match, so unsorted
/// rows still yield a single deterministic rating.
pub fn discretize(row: &[f64], x: f64) -> u8 {
    let levels = row.len() + 1;
    for r in 1..=levels {
        if threshold_at(row, r - 1) < x && x <= threshold_at(row, r) {
            return r as u8;
        }
    }
    // Unreachable for finite x: some interval always contains it.
    levels as u8
}

/// Average gap between consecutive thresholds of one user.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ThresholdGap {
    pub value: f64,
    /// The raw average fell below [`MIN_THRESHOLD_GAP`] and was raised to it.
    pub clamped: bool,
}

/// `(1 / (R-2)) Σ_{r=2}^{R-1} (θ_r - θ_{r-1})`, clamped below at
/// [`MIN_THRESHOLD_GAP`]. Needs `R >= 3`, i.e. at least two thresholds.
pub fn avg_threshold_gap(row: &[f64]) -> Result<ThresholdGap> {
    if row.len() < 2 {
        return Err(Error::UnsupportedScale(row.len() as u8 + 1, 3));
    }
    let sum: f64 = row.windows(2).map(|w| w[1] - w[0]).sum();
    let raw = sum / (row.len() - 1) as f64;
    if raw < MIN_THRESHOLD_GAP || raw.is_nan() {
        Ok(ThresholdGap {
            value: MIN_THRESHOLD_GAP,
            clamped: true,
        })
    } else {
        Ok(ThresholdGap {
            value: raw,
            clamped: false,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hinge_values() {
        assert_eq!(smooth_hinge(1.0), 0.0);
        assert_eq!(smooth_hinge(0.5), 0.125);
        assert_eq!(smooth_hinge(-2.0), 2.5);
        assert_eq!(smooth_hinge(0.0), 0.5);
    }

    #[test]
    fn hinge_grad_values() {
        assert_eq!(smooth_hinge_grad(2.0), 0.0);
        assert_eq!(smooth_hinge_grad(0.25), -0.75);
        assert_eq!(smooth_hinge_grad(-1.0), -1.0);
    }

    #[test]
    fn indicator() {
        assert_eq!(t_indicator(3, 3), 1.0);
        assert_eq!(t_indicator(2, 4), -1.0);
        assert_eq!(t_indicator(4, 1), 1.0);
    }

    #[test]
    fn discretize_examples() {
        let row = [1.5, 2.5, 3.5, 4.5];
        assert_eq!(discretize(&row, 3.0), 3);
        assert_eq!(discretize(&row, -10.0), 1);
        assert_eq!(discretize(&row, 4.5), 4);
        assert_eq!(discretize(&row, 4.500001), 5);
        assert_eq!(discretize(&row, 1.5), 1);
    }

    #[test]
    fn discretize_unsorted_row_takes_first_interval() {
        // (-inf, 2] wins before the empty (2, 1].
        assert_eq!(discretize(&[2.0, 1.0], 1.5), 1);
        assert_eq!(discretize(&[2.0, 1.0], 3.0), 3);
    }

    #[test]
    fn gap_examples() {
        assert_eq!(avg_threshold_gap(&[1.0, 2.0, 3.0, 4.0]).unwrap().value, 1.0);
        let g = avg_threshold_gap(&[0.0, 1.0, 3.0, 4.0]).unwrap();
        assert!((g.value - 4.0 / 3.0).abs() < 1e-15);
        assert_eq!(avg_threshold_gap(&[-1.0, 1.0]).unwrap().value, 2.0);
        assert!(matches!(avg_threshold_gap(&[0.5]), Err(Error::UnsupportedScale(2, 3))));
    }

    #[test]
    fn gap_clamps_inverted_rows() {
        let g = avg_threshold_gap(&[3.0, 2.0, 1.0]).unwrap();
        assert!(g.clamped);
        assert_eq!(g.value, MIN_THRESHOLD_GAP);
    }

    #[test]
    fn indicator_flips_once() {
        let big_r = 5u8;
        for y in 2..big_r {
            let signs: Vec<f64> = (1..big_r).map(|r| t_indicator(r, y)).collect();
            let flips = signs.windows(2).filter(|w| w[0] != w[1]).count();
            assert_eq!(flips, 1, "y = {y}");
        }
    }

    proptest! {
        #[test]
        fn hinge_shape(z in -50.0f64..50.0, w in -50.0f64..50.0) {
            let (hz, hw) = (smooth_hinge(z), smooth_hinge(w));
            prop_assert!(hz >= 0.0);
            prop_assert!((hz - hw).abs() <= (z - w).abs() + 1e-12);
            if z <= w {
                prop_assert!(hz >= hw);
            }
            // Convexity at the midpoint.
            let mid = smooth_hinge(0.5 * (z + w));
            prop_assert!(mid <= 0.5 * (hz + hw) + 1e-12);
        }

        #[test]
        fn hinge_grad_matches_central_difference(z in -5.0f64..5.0) {
            prop_assume!((z - 0.0).abs() > 1e-3 && (z - 1.0).abs() > 1e-3);
            let step = 1e-5;
            let fd = (smooth_hinge(z + step) - smooth_hinge(z - step)) / (2.0 * step);
            let an = smooth_hinge_grad(z);
            let scale = an.abs().max(fd.abs());
            if scale == 0.0 {
                prop_assert_eq!(fd, 0.0);
            } else {
                prop_assert!((fd - an).abs() / scale <= 1e-6, "z={} fd={} an={}", z, fd, an);
            }
        }

        #[test]
        fn discretize_is_a_monotone_partition(
            mut row in proptest::collection::vec(-10.0f64..10.0, 1..6),
            x in -20.0f64..20.0,
            dx in 0.0f64..5.0,
        ) {
            row.sort_by(f64::total_cmp);
            let r = discretize(&row, x) as usize;
            let matches = (1..=row.len() + 1)
                .filter(|&k| threshold_at(&row, k - 1) < x && x <= threshold_at(&row, k))
                .count();
            prop_assert_eq!(matches, 1);
            prop_assert!(threshold_at(&row, r - 1) < x && x <= threshold_at(&row, r));
            prop_assert!(discretize(&row, x + dx) as usize >= r);
        }

        #[test]
        fn uniform_gap_is_exact(start in -5.0f64..5.0, k in 1u32..64, levels in 3usize..8) {
            // Dyadic gaps keep every difference exact in binary floating point.
            let gap = k as f64 / 16.0;
            let row: Vec<f64> = (0..levels - 1).map(|r| start.round() + gap * r as f64).collect();
            prop_assert_eq!(avg_threshold_gap(&row).unwrap().value, gap);
        }
    }
}
