use crate::aggregate::TrimCounts;
use crate::error::{Error, Result};
use crate::tensor::DenseMatrix;

pub const DEFAULT_AFFECTED_THRESHOLD: f64 = 1e-6;

/// Whether `faulty` differs from `clean` by more than `threshold` relative
/// error. Equal values (including two NaNs) never differ.
#[inline]
pub fn differs(clean: f32, faulty: f32, threshold: f64) -> bool {
    if clean == faulty || (clean.is_nan() && faulty.is_nan()) {
        return false;
    }
    if !clean.is_finite() || !faulty.is_finite() {
        return true;
    }
    let (a, b) = (clean as f64, faulty as f64);
    (a - b).abs() > threshold * a.abs()
}

/// Fraction of rows of `faulty` that differ from `clean` in any column.
pub fn affected_fraction(clean: &DenseMatrix, faulty: &DenseMatrix, threshold: f64) -> Result<f64> {
    if clean.shape() != faulty.shape() {
        return Err(Error::Contract(format!(
            "affected fraction of {:?} against {:?}",
            faulty.shape(),
            clean.shape()
        )));
    }
    if clean.rows() == 0 {
        return Ok(0.0);
    }
    let hit = clean
        .row_iter()
        .zip(faulty.row_iter())
        .filter(|(c, f)| c.iter().zip(f.iter()).any(|(&a, &b)| differs(a, b, threshold)))
        .count();
    Ok(hit as f64 / clean.rows() as f64)
}

/// Discarded value slots over aggregated value slots, across all layers.
pub fn trimmed_fraction(trims: &TrimCounts) -> f64 {
    trims.fraction()
}
