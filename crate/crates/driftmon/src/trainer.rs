//! Training: turning a reference window into a ready-to-run monitor.
//!
//! Training makes two passes over the reference events. The first pass fits
//! a bin layout per feature and counts the reference histogram. The second
//! pass replays the reference through a fresh moving histogram per feature
//! and records, at `M` randomly sampled time steps, the divergence between
//! the moving histogram and the full reference histogram. Those divergences
//! are what the same statistic looks like when nothing is drifting; at
//! monitoring time they serve as the null distribution that divergences are
//! ranked against.
//!
//! `M` is chosen so that with probability at least `1 - gamma` every one of
//! the `N` features has at least one sample in the upper `alpha_bar / N`
//! tail of its own null distribution. Without that many samples the
//! smallest achievable p-value is too coarse for the Holm correction to
//! ever fire at level `alpha_bar`. Sampled steps are drawn after a warmup
//! prefix (a few half-lives) so the moving histogram has forgotten its empty
//! initial state.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::LN_2;
use thiserror::Error;

use crate::divergence::{self, DivergenceError, DivergenceMeasure};
use crate::duration::{Span, format_secs, parse_span};
use crate::emh::{EmhError, HalfLife, MovingHistogram, OutOfOrderPolicy};
use crate::event::Event;
use crate::ingest::Schema;
use crate::layout::{CategoricalLayout, FeatureKind, Layout, LayoutError, NumericLayout};
use crate::monitor::{Cadence, MonitorState};

#[derive(Debug, Error, PartialEq)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("reference window is empty")]
    EmptyReference,
    #[error("feature '{name}' has no usable reference values")]
    EmptyFeature { name: String },
    #[error("event {index} carries {got} values, schema has {want}")]
    SchemaMismatch {
        index: usize,
        got: usize,
        want: usize,
    },
    #[error("reference has {available} events after warmup, need {needed} for divergence sampling")]
    InsufficientReference { available: usize, needed: usize },
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error(transparent)]
    Emh(#[from] EmhError),
    #[error(transparent)]
    Divergence(#[from] DivergenceError),
}

/// Half-life as configured, before resolving against the reference.
///
/// Time spans can either be converted to an equivalent event count at the
/// reference's average event rate (the default, which keeps per-update cost
/// identical and behaves well under seasonal rate changes) or applied as
/// true time decay at run time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HalfLifeSpec {
    /// Half-life of this many events.
    Events(f64),
    /// Half-life of this many seconds, converted to events at the average
    /// reference event rate during training.
    TimeAsEvents(f64),
    /// Half-life of this many seconds, decayed by timestamp gaps at run
    /// time.
    TimeDecay(f64),
}

impl HalfLifeSpec {
    /// Switches a time span from rate conversion to run-time decay. Event
    /// counts are unaffected.
    pub fn with_time_decay(self) -> Self {
        match self {
            HalfLifeSpec::TimeAsEvents(s) => HalfLifeSpec::TimeDecay(s),
            other => other,
        }
    }

    /// Resolves to a runtime half-life, converting time spans with the given
    /// average event rate where the variant asks for it.
    pub fn resolve(&self, events_per_sec: f64) -> Result<HalfLife, TrainError> {
        match self {
            HalfLifeSpec::Events(n) => Ok(HalfLife::events(*n)?),
            HalfLifeSpec::TimeAsEvents(secs) => {
                if !(events_per_sec.is_finite() && events_per_sec > 0.0) {
                    return Err(TrainError::InvalidConfig(
                        "time-based half-life requires a reference with a positive time span"
                            .into(),
                    ));
                }
                Ok(HalfLife::events(secs * events_per_sec)?)
            }
            HalfLifeSpec::TimeDecay(secs) => Ok(HalfLife::time_secs(*secs)?),
        }
    }

    /// Short human-readable form, such as `1w` or `5000e`.
    pub fn label(&self) -> String {
        match self {
            HalfLifeSpec::Events(n) => format!("{n}e"),
            HalfLifeSpec::TimeAsEvents(s) | HalfLifeSpec::TimeDecay(s) => format_secs(*s),
        }
    }
}

impl std::str::FromStr for HalfLifeSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match parse_span(s)? {
            Span::Events(n) => Ok(HalfLifeSpec::Events(n)),
            Span::Secs(secs) => Ok(HalfLifeSpec::TimeAsEvents(secs)),
        }
    }
}

impl std::fmt::Display for HalfLifeSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.label())
    }
}

/// How the monitoring histogram starts relative to the reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedingMode {
    /// Start from the reference distribution at steady-state mass, so the
    /// first checks compare against a fully warmed histogram.
    FullReference,
    /// Continue from the moving histogram as it stood at the end of the
    /// training replay.
    LastSample,
}

impl std::str::FromStr for SeedingMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full-reference" => Ok(SeedingMode::FullReference),
            "last-sample" => Ok(SeedingMode::LastSample),
            other => Err(format!(
                "unknown seeding mode '{other}' (expected full-reference or last-sample)"
            )),
        }
    }
}

impl std::fmt::Display for SeedingMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SeedingMode::FullReference => f.write_str("full-reference"),
            SeedingMode::LastSample => f.write_str("last-sample"),
        }
    }
}

/// Divergence measure per feature kind.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasureMap {
    pub numeric: DivergenceMeasure,
    pub categorical: DivergenceMeasure,
}

impl MeasureMap {
    pub fn for_kind(&self, kind: FeatureKind) -> DivergenceMeasure {
        match kind {
            FeatureKind::Numeric => self.numeric,
            FeatureKind::Categorical => self.categorical,
        }
    }
}

impl Default for MeasureMap {
    fn default() -> Self {
        MeasureMap {
            numeric: DivergenceMeasure::Wasserstein,
            categorical: DivergenceMeasure::Jsd,
        }
    }
}

/// Everything training needs beyond the reference events themselves.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    /// Requested finite bins per numeric feature.
    pub bins: usize,
    pub half_life: HalfLifeSpec,
    pub measures: MeasureMap,
    /// Family-wise false alarm budget per check.
    pub alpha_bar: f64,
    /// Acceptable probability that some feature's null distribution misses
    /// its upper tail entirely.
    pub gamma: f64,
    pub seed: u64,
    pub seeding: SeedingMode,
    /// Warmup before divergence sampling, in half-lives.
    pub warmup_half_lives: f64,
    /// Cap on the number of divergence samples. Capping below the required
    /// count is allowed but flagged in the trained state.
    pub max_samples: Option<usize>,
    pub out_of_order: OutOfOrderPolicy,
    /// Default check cadence carried into the monitor.
    pub cadence: Cadence,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            bins: 100,
            half_life: HalfLifeSpec::TimeAsEvents(crate::duration::SECS_PER_WEEK),
            measures: MeasureMap::default(),
            alpha_bar: 0.01,
            gamma: 0.01,
            seed: 0,
            seeding: SeedingMode::FullReference,
            warmup_half_lives: 3.0,
            max_samples: None,
            out_of_order: OutOfOrderPolicy::Reject,
            cadence: Cadence::Time {
                interval_ns: 86_400_000_000_000,
            },
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.bins == 0 {
            return Err(TrainError::InvalidConfig("bins must be at least 1".into()));
        }
        if !(self.alpha_bar > 0.0 && self.alpha_bar < 1.0) {
            return Err(TrainError::InvalidConfig(format!(
                "alpha_bar must be in (0, 1), got {}",
                self.alpha_bar
            )));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(TrainError::InvalidConfig(format!(
                "gamma must be in (0, 1), got {}",
                self.gamma
            )));
        }
        if !(self.warmup_half_lives.is_finite() && self.warmup_half_lives >= 0.0) {
            return Err(TrainError::InvalidConfig(format!(
                "warmup must be a non-negative number of half-lives, got {}",
                self.warmup_half_lives
            )));
        }
        if !self
            .measures
            .categorical
            .allowed_for(FeatureKind::Categorical)
        {
            return Err(TrainError::InvalidConfig(format!(
                "categorical features cannot use {}: their bins are unordered",
                self.measures.categorical
            )));
        }
        if self.max_samples == Some(0) {
            return Err(TrainError::InvalidConfig(
                "max_samples must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Divergence sample count required for the null distributions, with the
/// intermediate quantities useful for reporting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleCount {
    /// Smallest integer sample count meeting the coverage guarantee.
    pub required: usize,
    /// The real-valued solution the requirement is the ceiling of.
    pub exact: f64,
    /// Closed-form approximation `(N / alpha_bar) * ln(N / gamma)`.
    pub approximation: f64,
    /// Probability that a single feature's samples all miss the upper
    /// `alpha_bar / N` tail when exactly `required` samples are drawn.
    pub tail_miss_probability: f64,
}

/// Computes how many null-divergence samples each feature needs so that,
/// with probability at least `1 - gamma`, all `n_features` features get at
/// least one sample in the upper `alpha_bar / n_features` tail.
pub fn required_sample_count(
    n_features: usize,
    alpha_bar: f64,
    gamma: f64,
) -> Result<SampleCount, TrainError> {
    if n_features == 0 {
        return Err(TrainError::InvalidConfig(
            "need at least one feature".into(),
        ));
    }
    if !(alpha_bar > 0.0 && alpha_bar < 1.0) || !(gamma > 0.0 && gamma < 1.0) {
        return Err(TrainError::InvalidConfig(format!(
            "alpha_bar and gamma must be in (0, 1), got {alpha_bar} and {gamma}"
        )));
    }
    let n = n_features as f64;
    // exact = ln(1 - (1-gamma)^(1/N)) / ln(1 - alpha_bar/N), kept accurate
    // near 0 and 1 with ln_1p/exp_m1.
    let numerator = (-((-gamma).ln_1p() / n).exp_m1()).ln();
    let denominator = (-alpha_bar / n).ln_1p();
    let exact = numerator / denominator;
    let required = exact.ceil() as usize;
    Ok(SampleCount {
        required,
        exact,
        approximation: (n / alpha_bar) * (n / gamma).ln(),
        tail_miss_probability: ((required as f64) * denominator).exp(),
    })
}

/// Mean and standard deviation of the number of samples landing in the
/// upper `alpha_bar / n_features` tail when `m` samples are drawn.
pub fn expected_tail_count(m: usize, alpha_bar: f64, n_features: usize) -> (f64, f64) {
    let p = alpha_bar / n_features as f64;
    let mean = m as f64 * p;
    (mean, (mean * (1.0 - p)).sqrt())
}

/// Draws `m` distinct event indices from `[warmup_events, event_count)`,
/// returned in ascending order. The same seed always yields the same steps.
pub fn sample_time_steps(
    event_count: usize,
    m: usize,
    warmup_events: usize,
    seed: u64,
) -> Result<Vec<usize>, TrainError> {
    let available = event_count.saturating_sub(warmup_events);
    if available < m {
        return Err(TrainError::InsufficientReference {
            available,
            needed: m,
        });
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut steps: Vec<usize> = rand::seq::index::sample(&mut rng, available, m)
        .into_iter()
        .map(|i| i + warmup_events)
        .collect();
    steps.sort_unstable();
    Ok(steps)
}

/// Plain counted histogram over a fixed layout.
#[derive(Debug, Clone, PartialEq)]
pub struct StaticHistogram {
    counts: Vec<u64>,
    total: u64,
}

impl StaticHistogram {
    pub fn new(bin_count: usize) -> Self {
        StaticHistogram {
            counts: vec![0; bin_count],
            total: 0,
        }
    }

    pub(crate) fn from_counts(counts: Vec<u64>) -> Self {
        let total = counts.iter().sum();
        StaticHistogram { counts, total }
    }

    pub fn record(&mut self, bin: usize) {
        self.counts[bin] += 1;
        self.total += 1;
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    /// Normalized probability vector. The histogram must be non-empty.
    pub fn distribution(&self) -> Vec<f64> {
        assert!(self.total > 0, "empty histogram has no distribution");
        self.counts
            .iter()
            .map(|c| *c as f64 / self.total as f64)
            .collect()
    }
}

/// Sorted null-divergence samples for one feature.
#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceDistribution {
    samples: Vec<f64>,
    capped: bool,
}

impl DivergenceDistribution {
    /// Takes ownership of the samples, sorting them. `capped` records that
    /// the sample count was limited below the required count.
    pub fn new(mut samples: Vec<f64>, capped: bool) -> Self {
        samples.sort_unstable_by(f64::total_cmp);
        DivergenceDistribution { samples, capped }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn capped(&self) -> bool {
        self.capped
    }

    /// Empirical p-value of an observed divergence, with add-one smoothing
    /// so the result is never exactly zero: `(#{samples >= d} + 1) / (len + 1)`.
    pub fn p_value(&self, d: f64) -> f64 {
        let below = self.samples.partition_point(|x| *x < d);
        (self.samples.len() - below + 1) as f64 / (self.samples.len() + 1) as f64
    }
}

/// Complete monitoring state for one feature.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureState {
    pub name: String,
    pub layout: Layout,
    pub reference: StaticHistogram,
    pub divergences: DivergenceDistribution,
    pub moving: MovingHistogram,
    pub measure: DivergenceMeasure,
}

impl FeatureState {
    pub fn kind(&self) -> FeatureKind {
        self.layout.kind()
    }
}

/// The resolved training configuration and reference facts, carried in the
/// trained state for reporting and for consistency checks at load time.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSnapshot {
    pub bins: usize,
    pub half_life: HalfLifeSpec,
    pub resolved_half_life: HalfLife,
    pub measures: MeasureMap,
    pub alpha_bar: f64,
    pub gamma: f64,
    pub seed: u64,
    pub seeding: SeedingMode,
    pub warmup_half_lives: f64,
    pub warmup_events: usize,
    /// Divergence samples actually drawn per feature.
    pub sample_count: usize,
    /// Samples the coverage guarantee asks for; differs from `sample_count`
    /// only when capped.
    pub sample_count_required: usize,
    pub samples_capped: bool,
    pub out_of_order: OutOfOrderPolicy,
    pub cadence: Cadence,
    pub reference_events: usize,
    pub reference_span_secs: f64,
    pub events_per_sec: f64,
}

/// Trains a monitor on a time-ordered reference window.
pub fn train(
    reference: &[Event],
    schema: &Schema,
    config: &TrainingConfig,
) -> Result<MonitorState, TrainError> {
    config.validate()?;
    if reference.is_empty() {
        return Err(TrainError::EmptyReference);
    }
    let n = schema.features.len();
    if n == 0 {
        return Err(TrainError::InvalidConfig(
            "schema declares no features".into(),
        ));
    }
    for (index, event) in reference.iter().enumerate() {
        if event.values.len() != n {
            return Err(TrainError::SchemaMismatch {
                index,
                got: event.values.len(),
                want: n,
            });
        }
    }

    let layouts = fit_layouts(reference, schema, config.bins)?;

    let mut reference_hists: Vec<StaticHistogram> = layouts
        .iter()
        .map(|l| StaticHistogram::new(l.bin_count()))
        .collect();
    for event in reference {
        for (f, value) in event.values.iter().enumerate() {
            reference_hists[f].record(layouts[f].locate(value));
        }
    }
    let reference_dists: Vec<Vec<f64>> = reference_hists.iter().map(|h| h.distribution()).collect();

    let span_secs = (reference.last().unwrap().ts - reference.first().unwrap().ts) as f64 / 1e9;
    let events_per_sec = if span_secs > 0.0 {
        reference.len() as f64 / span_secs
    } else {
        f64::INFINITY
    };
    let half_life = config.half_life.resolve(events_per_sec)?;
    let n_half_events = half_life.events_equivalent(events_per_sec);
    if !(n_half_events.is_finite() && n_half_events > 0.0) {
        return Err(TrainError::InvalidConfig(
            "time-based half-life requires a reference with a positive time span".into(),
        ));
    }
    let warmup_events = (config.warmup_half_lives * n_half_events).ceil() as usize;

    let sample_count = required_sample_count(n, config.alpha_bar, config.gamma)?;
    let (m, capped) = match config.max_samples {
        Some(cap) if cap < sample_count.required => (cap, true),
        _ => (sample_count.required, false),
    };
    let steps = sample_time_steps(reference.len(), m, warmup_events, config.seed)?;

    let measures: Vec<DivergenceMeasure> = schema
        .features
        .iter()
        .map(|decl| config.measures.for_kind(decl.kind))
        .collect();
    let mut movings: Vec<MovingHistogram> = layouts
        .iter()
        .map(|l| MovingHistogram::new(l.bin_count(), half_life, config.out_of_order))
        .collect();
    let mut samples: Vec<Vec<f64>> = vec![Vec::with_capacity(m); n];
    let mut next_step = steps.iter().peekable();
    for (i, event) in reference.iter().enumerate() {
        for (f, value) in event.values.iter().enumerate() {
            movings[f].update(layouts[f].locate(value), event.ts)?;
        }
        if next_step.peek() == Some(&&i) {
            next_step.next();
            for f in 0..n {
                let current = movings[f].to_distribution()?;
                samples[f].push(divergence::compute(
                    measures[f],
                    &current,
                    &reference_dists[f],
                )?);
            }
        }
    }

    let last_ts = reference.last().unwrap().ts;
    let seeded: Vec<MovingHistogram> = match config.seeding {
        SeedingMode::LastSample => movings,
        SeedingMode::FullReference => {
            let mass = n_half_events / LN_2;
            reference_dists
                .iter()
                .map(|dist| {
                    MovingHistogram::seeded(
                        dist,
                        mass,
                        half_life,
                        config.out_of_order,
                        Some(last_ts),
                    )
                })
                .collect::<Result<_, _>>()?
        }
    };

    let mut features = Vec::with_capacity(n);
    let mut sample_iter = samples.into_iter();
    let mut hist_iter = reference_hists.into_iter();
    let mut moving_iter = seeded.into_iter();
    let mut layout_iter = layouts.into_iter();
    for (f, decl) in schema.features.iter().enumerate() {
        features.push(FeatureState {
            name: decl.name.clone(),
            layout: layout_iter.next().unwrap(),
            reference: hist_iter.next().unwrap(),
            divergences: DivergenceDistribution::new(sample_iter.next().unwrap(), capped),
            moving: moving_iter.next().unwrap(),
            measure: measures[f],
        });
    }

    let snapshot = TrainingSnapshot {
        bins: config.bins,
        half_life: config.half_life,
        resolved_half_life: half_life,
        measures: config.measures,
        alpha_bar: config.alpha_bar,
        gamma: config.gamma,
        seed: config.seed,
        seeding: config.seeding,
        warmup_half_lives: config.warmup_half_lives,
        warmup_events,
        sample_count: m,
        sample_count_required: sample_count.required,
        samples_capped: capped,
        out_of_order: config.out_of_order,
        cadence: config.cadence,
        reference_events: reference.len(),
        reference_span_secs: span_secs,
        events_per_sec,
    };
    Ok(MonitorState::assemble(
        schema.clone(),
        features,
        snapshot,
        Some(last_ts),
    ))
}

fn fit_layouts(
    reference: &[Event],
    schema: &Schema,
    bins: usize,
) -> Result<Vec<Layout>, TrainError> {
    let mut layouts = Vec::with_capacity(schema.features.len());
    for (f, decl) in schema.features.iter().enumerate() {
        let layout = match decl.kind {
            FeatureKind::Numeric => {
                let values: Vec<f64> = reference
                    .iter()
                    .filter_map(|e| e.values[f].as_num())
                    .collect();
                Layout::Numeric(NumericLayout::fit(&values, bins).map_err(|e| match e {
                    LayoutError::EmptyReference => TrainError::EmptyFeature {
                        name: decl.name.clone(),
                    },
                    other => TrainError::Layout(other),
                })?)
            }
            FeatureKind::Categorical => {
                let labels: Vec<&str> = reference
                    .iter()
                    .filter_map(|e| e.values[f].as_cat())
                    .collect();
                Layout::Categorical(CategoricalLayout::fit(&labels).map_err(|e| match e {
                    LayoutError::EmptyReference => TrainError::EmptyFeature {
                        name: decl.name.clone(),
                    },
                    other => TrainError::Layout(other),
                })?)
            }
        };
        layouts.push(layout);
    }
    Ok(layouts)
}
