//! Divergences between binned probability distributions.
//!
//! All three measures operate on two equal-length probability vectors over
//! the same bin layout. Jensen-Shannon divergence uses base-2 logarithms so
//! its range is `[0, 1]`; the Kolmogorov-Smirnov statistic is the largest
//! absolute difference between the two cumulative distributions, range
//! `[0, 1]`; the Wasserstein distance treats bin indices as the ground
//! space, so moving all mass one bin over costs exactly 1 and the maximum is
//! `bins - 1`. Using bin indices rather than bin centers keeps Wasserstein
//! well defined when the layout has unbounded tail bins and makes scores
//! comparable across features with different value scales.
//!
//! Kolmogorov-Smirnov and Wasserstein order the bins by index, which is only
//! meaningful for numeric layouts; categorical features use Jensen-Shannon.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::layout::FeatureKind;

/// How far two distributions may be from summing to one before they are
/// rejected as unnormalized.
const NORMALIZATION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum DivergenceError {
    #[error("distribution lengths differ: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("distribution sums to {sum}, expected 1")]
    NotNormalized { sum: f64 },
    #[error("distribution entries must be finite and non-negative")]
    InvalidEntry,
    #[error("measure {measure} is not defined for {kind} features")]
    KindMismatch {
        measure: DivergenceMeasure,
        kind: FeatureKind,
    },
}

/// Divergence measure selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DivergenceMeasure {
    Jsd,
    Ks,
    Wasserstein,
}

impl DivergenceMeasure {
    /// Whether this measure is defined for features of the given kind.
    /// Categorical bins have no order, so only Jensen-Shannon applies.
    pub fn allowed_for(self, kind: FeatureKind) -> bool {
        kind == FeatureKind::Numeric || self == DivergenceMeasure::Jsd
    }

    /// Largest value the measure can attain on `bin_count` bins.
    pub fn upper_bound(self, bin_count: usize) -> f64 {
        match self {
            DivergenceMeasure::Jsd | DivergenceMeasure::Ks => 1.0,
            DivergenceMeasure::Wasserstein => (bin_count.max(1) - 1) as f64,
        }
    }
}

impl std::fmt::Display for DivergenceMeasure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DivergenceMeasure::Jsd => f.write_str("jsd"),
            DivergenceMeasure::Ks => f.write_str("ks"),
            DivergenceMeasure::Wasserstein => f.write_str("wasserstein"),
        }
    }
}

impl std::str::FromStr for DivergenceMeasure {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "jsd" => Ok(DivergenceMeasure::Jsd),
            "ks" => Ok(DivergenceMeasure::Ks),
            "wasserstein" => Ok(DivergenceMeasure::Wasserstein),
            other => Err(format!(
                "unknown divergence measure '{other}' (expected jsd, ks, or wasserstein)"
            )),
        }
    }
}

/// Computes the selected divergence between two probability vectors.
pub fn compute(measure: DivergenceMeasure, p: &[f64], q: &[f64]) -> Result<f64, DivergenceError> {
    match measure {
        DivergenceMeasure::Jsd => jsd(p, q),
        DivergenceMeasure::Ks => ks(p, q),
        DivergenceMeasure::Wasserstein => wasserstein(p, q),
    }
}

/// Jensen-Shannon divergence in bits.
pub fn jsd(p: &[f64], q: &[f64]) -> Result<f64, DivergenceError> {
    validate(p, q)?;
    let mut kl_p = 0.0;
    let mut kl_q = 0.0;
    for (&pi, &qi) in p.iter().zip(q.iter()) {
        let m = 0.5 * (pi + qi);
        if pi > 0.0 {
            kl_p += pi * (pi / m).log2();
        }
        if qi > 0.0 {
            kl_q += qi * (qi / m).log2();
        }
    }
    Ok((0.5 * (kl_p + kl_q)).clamp(0.0, 1.0))
}

/// Kolmogorov-Smirnov statistic over bins in index order.
pub fn ks(p: &[f64], q: &[f64]) -> Result<f64, DivergenceError> {
    validate(p, q)?;
    let mut cp = 0.0;
    let mut cq = 0.0;
    let mut max_gap = 0.0f64;
    for (&pi, &qi) in p.iter().zip(q.iter()) {
        cp += pi;
        cq += qi;
        max_gap = max_gap.max((cp - cq).abs());
    }
    Ok(max_gap.min(1.0))
}

/// 1-Wasserstein distance with bin index as the ground distance, computed as
/// the sum of absolute differences between the cumulative distributions over
/// all interior prefixes.
pub fn wasserstein(p: &[f64], q: &[f64]) -> Result<f64, DivergenceError> {
    validate(p, q)?;
    let mut cp = 0.0;
    let mut cq = 0.0;
    let mut acc = 0.0;
    for (&pi, &qi) in p.iter().zip(q.iter()).take(p.len() - 1) {
        cp += pi;
        cq += qi;
        acc += (cp - cq).abs();
    }
    Ok(acc.min((p.len() - 1) as f64))
}

fn validate(p: &[f64], q: &[f64]) -> Result<(), DivergenceError> {
    if p.len() != q.len() {
        return Err(DivergenceError::LengthMismatch {
            left: p.len(),
            right: q.len(),
        });
    }
    for dist in [p, q] {
        if dist.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(DivergenceError::InvalidEntry);
        }
        let sum: f64 = dist.iter().sum();
        if (sum - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(DivergenceError::NotNormalized { sum });
        }
    }
    Ok(())
}
