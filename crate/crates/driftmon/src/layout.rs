//! Per-feature bin layouts fitted on reference data.
//!
//! A layout maps every possible value of a feature to a bin index, with no
//! failure path: numeric layouts carry two half-open tail bins plus a bin for
//! NaN and other unusable inputs, categorical layouts carry a bin for labels
//! never seen in the reference plus a bin for missing values. Totality is
//! what lets the monitor score drifts that manifest as new categories,
//! out-of-range numbers, or missingness spikes instead of silently dropping
//! them.
//!
//! Numeric bin edges are the `b+1` evenly spaced quantiles of the reference
//! values (linear interpolation between order statistics), so the finite bins
//! hold roughly equal reference mass. Duplicate edges produced by heavy ties
//! are collapsed and the layout records the reduced finite bin count.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use thiserror::Error;

use crate::event::Value;

#[derive(Debug, Error, PartialEq)]
pub enum LayoutError {
    #[error("bin count must be at least 1, got {0}")]
    InvalidBinCount(usize),
    #[error("cannot fit a layout on an empty reference")]
    EmptyReference,
}

/// Feature type, fixed per feature by the schema.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Numeric,
    Categorical,
}

impl std::fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FeatureKind::Numeric => f.write_str("numeric"),
            FeatureKind::Categorical => f.write_str("categorical"),
        }
    }
}

/// Bin layout for a numeric feature.
///
/// With `L` edges `e_0 < e_1 < … < e_{L-1}` the bins are, in index order:
/// `(-inf, e_0]`, then `(e_{i-1}, e_i]` for each interior index, then
/// `(e_{L-1}, +inf)`, then a final bin for NaN. Intervals are closed on the
/// right, so a value equal to an edge falls in the bin that edge terminates.
#[derive(Debug, Clone, PartialEq)]
pub struct NumericLayout {
    edges: Vec<f64>,
}

impl NumericLayout {
    /// Fits edges as the `bins+1` quantiles of the finite values in
    /// `values`, collapsing duplicates. NaN and infinite values are ignored
    /// during fitting; at least one finite value is required.
    pub fn fit(values: &[f64], bins: usize) -> Result<Self, LayoutError> {
        if bins == 0 {
            return Err(LayoutError::InvalidBinCount(bins));
        }
        let mut finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
        if finite.is_empty() {
            return Err(LayoutError::EmptyReference);
        }
        finite.sort_unstable_by(f64::total_cmp);
        let mut edges = Vec::with_capacity(bins + 1);
        for k in 0..=bins {
            let q = quantile_sorted(&finite, k as f64 / bins as f64);
            if edges.last() != Some(&q) {
                edges.push(q);
            }
        }
        Ok(NumericLayout { edges })
    }

    /// Builds a layout from known edges. Edges must be finite and strictly
    /// increasing.
    pub fn from_edges(edges: Vec<f64>) -> Result<Self, LayoutError> {
        if edges.is_empty() {
            return Err(LayoutError::EmptyReference);
        }
        if !edges.iter().all(|e| e.is_finite()) || !edges.windows(2).all(|w| w[0] < w[1]) {
            return Err(LayoutError::InvalidBinCount(edges.len()));
        }
        Ok(NumericLayout { edges })
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    /// Finite bins actually realized after duplicate-edge collapse.
    pub fn effective_bins(&self) -> usize {
        self.edges.len() - 1
    }

    /// Total bins including both tails and the NaN bin.
    pub fn bin_count(&self) -> usize {
        self.edges.len() + 2
    }

    /// Index of the bin for NaN and non-numeric inputs.
    pub fn nan_bin(&self) -> usize {
        self.edges.len() + 1
    }

    /// Maps any `f64` to a bin index. Never fails.
    pub fn locate(&self, v: f64) -> usize {
        if v.is_nan() {
            return self.nan_bin();
        }
        self.edges.partition_point(|e| *e < v)
    }
}

/// Bin layout for a categorical feature.
///
/// One bin per reference category, ordered by descending reference frequency
/// with lexicographic order breaking ties, followed by a bin for labels not
/// present in the reference and a bin for missing values.
#[derive(Debug, Clone)]
pub struct CategoricalLayout {
    categories: Vec<String>,
    index: HashMap<String, usize>,
}

impl PartialEq for CategoricalLayout {
    fn eq(&self, other: &Self) -> bool {
        self.categories == other.categories
    }
}

impl CategoricalLayout {
    /// Fits the category order from observed labels. At least one label is
    /// required; missing values must be filtered out by the caller.
    pub fn fit<S: AsRef<str>>(labels: &[S]) -> Result<Self, LayoutError> {
        if labels.is_empty() {
            return Err(LayoutError::EmptyReference);
        }
        let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
        for l in labels {
            *counts.entry(l.as_ref()).or_insert(0) += 1;
        }
        let mut ordered: Vec<(&str, u64)> = counts.into_iter().collect();
        ordered.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        Ok(Self::from_categories(
            ordered.into_iter().map(|(l, _)| l.to_owned()).collect(),
        ))
    }

    /// Builds a layout from an already-decided category order.
    pub fn from_categories(categories: Vec<String>) -> Self {
        let index = categories
            .iter()
            .enumerate()
            .map(|(i, c)| (c.clone(), i))
            .collect();
        CategoricalLayout { categories, index }
    }

    pub fn categories(&self) -> &[String] {
        &self.categories
    }

    /// Total bins including the unseen-label and missing bins.
    pub fn bin_count(&self) -> usize {
        self.categories.len() + 2
    }

    /// Index of the bin for labels absent from the reference.
    pub fn unseen_bin(&self) -> usize {
        self.categories.len()
    }

    /// Index of the bin for missing values.
    pub fn missing_bin(&self) -> usize {
        self.categories.len() + 1
    }

    /// Maps any label to a bin index. Never fails.
    pub fn locate(&self, label: &str) -> usize {
        self.index
            .get(label)
            .copied()
            .unwrap_or_else(|| self.unseen_bin())
    }
}

/// Fitted layout for one feature.
#[derive(Debug, Clone, PartialEq)]
pub enum Layout {
    Numeric(NumericLayout),
    Categorical(CategoricalLayout),
}

impl Layout {
    pub fn kind(&self) -> FeatureKind {
        match self {
            Layout::Numeric(_) => FeatureKind::Numeric,
            Layout::Categorical(_) => FeatureKind::Categorical,
        }
    }

    pub fn bin_count(&self) -> usize {
        match self {
            Layout::Numeric(l) => l.bin_count(),
            Layout::Categorical(l) => l.bin_count(),
        }
    }

    /// Maps any value to a bin index, including missing values and values of
    /// the wrong type, which land in the NaN or missing bin.
    pub fn locate(&self, value: &Value) -> usize {
        match self {
            Layout::Numeric(l) => match value {
                Value::Num(x) => l.locate(*x),
                Value::Cat(_) | Value::Missing => l.nan_bin(),
            },
            Layout::Categorical(l) => match value {
                Value::Cat(s) => l.locate(s),
                Value::Num(_) | Value::Missing => l.missing_bin(),
            },
        }
    }
}

/// Quantile of a sorted slice with linear interpolation between the two
/// nearest order statistics, matching the convention of most statistics
/// libraries' default.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    if lo + 1 >= n {
        return sorted[n - 1];
    }
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn quantile_edges_interpolate() {
        let layout = NumericLayout::fit(&[1.0, 2.0, 3.0, 4.0], 2).unwrap();
        assert_eq!(layout.edges(), &[1.0, 2.5, 4.0]);
        assert_eq!(layout.effective_bins(), 2);
        assert_eq!(layout.bin_count(), 5);
    }

    #[test]
    fn constant_reference_collapses_to_single_edge() {
        let layout = NumericLayout::fit(&[5.0, 5.0, 5.0, 5.0], 3).unwrap();
        assert_eq!(layout.edges(), &[5.0]);
        assert_eq!(layout.bin_count(), 3);
        assert_eq!(layout.locate(5.0), 0);
        assert_eq!(layout.locate(5.1), 1);
        assert_eq!(layout.locate(f64::NAN), 2);
    }

    #[test]
    fn heavy_ties_reduce_effective_bins() {
        let layout = NumericLayout::fit(&[1.0, 1.0, 1.0, 1.0, 2.0, 3.0], 3).unwrap();
        assert_eq!(layout.effective_bins(), 2);
        assert_eq!(layout.edges().len(), 3);
        assert_eq!(layout.edges()[0], 1.0);
    }

    #[test]
    fn intervals_are_right_closed() {
        let layout = NumericLayout::from_edges(vec![1.0, 2.5, 4.0]).unwrap();
        assert_eq!(layout.locate(0.0), 0);
        assert_eq!(layout.locate(1.0), 0);
        assert_eq!(layout.locate(1.0000000001), 1);
        assert_eq!(layout.locate(2.5), 1);
        assert_eq!(layout.locate(4.0), 2);
        assert_eq!(layout.locate(4.1), 3);
        assert_eq!(layout.locate(f64::NEG_INFINITY), 0);
        assert_eq!(layout.locate(f64::INFINITY), 3);
    }

    #[test]
    fn fitting_ignores_non_finite_values() {
        let layout =
            NumericLayout::fit(&[f64::NAN, 1.0, f64::INFINITY, 2.0, f64::NEG_INFINITY], 1).unwrap();
        assert_eq!(layout.edges(), &[1.0, 2.0]);
    }

    #[test]
    fn fit_rejects_degenerate_inputs() {
        assert_eq!(
            NumericLayout::fit(&[1.0], 0).unwrap_err(),
            LayoutError::InvalidBinCount(0)
        );
        assert_eq!(
            NumericLayout::fit(&[f64::NAN], 3).unwrap_err(),
            LayoutError::EmptyReference
        );
        assert!(CategoricalLayout::fit::<String>(&[]).is_err());
    }

    #[test]
    fn categories_order_by_frequency_then_label() {
        let labels = ["b", "a", "c", "a", "b", "a", "c"];
        let layout = CategoricalLayout::fit(&labels).unwrap();
        assert_eq!(layout.categories(), &["a", "b", "c"]);
        assert_eq!(layout.locate("a"), 0);
        assert_eq!(layout.locate("z"), layout.unseen_bin());
        assert_eq!(layout.bin_count(), 5);
    }

    #[test]
    fn wrong_typed_values_land_in_catchall_bins() {
        let num = Layout::Numeric(NumericLayout::from_edges(vec![0.0, 1.0]).unwrap());
        assert_eq!(num.locate(&Value::Cat("x".into())), 3);
        assert_eq!(num.locate(&Value::Missing), 3);
        let cat = Layout::Categorical(CategoricalLayout::from_categories(vec!["a".into()]));
        assert_eq!(cat.locate(&Value::Num(1.0)), 2);
        assert_eq!(cat.locate(&Value::Missing), 2);
    }

    proptest! {
        #[test]
        fn locate_is_total_and_in_range(
            values in proptest::collection::vec(-1e12f64..1e12, 1..200),
            bins in 1usize..40,
            probe in proptest::num::f64::ANY,
        ) {
            let layout = NumericLayout::fit(&values, bins).unwrap();
            let bin = layout.locate(probe);
            prop_assert!(bin < layout.bin_count());
            if probe.is_nan() {
                prop_assert_eq!(bin, layout.nan_bin());
            }
        }

        #[test]
        fn edges_strictly_increase(
            values in proptest::collection::vec(-1e6f64..1e6, 1..300),
            bins in 1usize..50,
        ) {
            let layout = NumericLayout::fit(&values, bins).unwrap();
            prop_assert!(layout.edges().windows(2).all(|w| w[0] < w[1]));
            prop_assert!(layout.effective_bins() <= bins);
        }

        #[test]
        fn fit_is_order_independent(
            mut values in proptest::collection::vec(-1e6f64..1e6, 2..100),
            bins in 1usize..20,
        ) {
            let fitted = NumericLayout::fit(&values, bins).unwrap();
            values.reverse();
            values.rotate_left(1);
            let refitted = NumericLayout::fit(&values, bins).unwrap();
            prop_assert_eq!(fitted, refitted);
        }

        #[test]
        fn distinct_values_fill_every_finite_bin(
            start in -1e6f64..1e6,
            step in 0.001f64..100.0,
            n in 30usize..200,
            bins in 1usize..20,
        ) {
            let values: Vec<f64> = (0..n).map(|i| start + step * i as f64).collect();
            let layout = NumericLayout::fit(&values, bins).unwrap();
            let mut counts = vec![0u64; layout.bin_count()];
            for v in &values {
                counts[layout.locate(*v)] += 1;
            }
            // Finite bins are index 1..edges.len(); the minimum lands in the
            // left tail bin because intervals are right-closed.
            prop_assert_eq!(counts[0], 1);
            for c in &counts[1..layout.edges().len()] {
                prop_assert!(*c > 0);
            }
            prop_assert_eq!(counts[layout.edges().len()], 0);
            prop_assert_eq!(counts[layout.nan_bin()], 0);
        }

        #[test]
        fn every_label_locates(
            labels in proptest::collection::vec("[a-f]{1,3}", 1..100),
            probe in "[a-z]{1,4}",
        ) {
            let layout = CategoricalLayout::fit(&labels).unwrap();
            let bin = layout.locate(&probe);
            prop_assert!(bin < layout.bin_count());
            prop_assert!(bin != layout.missing_bin());
        }
    }
}
