//! Synthetic streams, controlled drift injection, and alarm metrics.
//!
//! Everything here exists to exercise a monitor under known conditions: build
//! a stream whose distribution is fully specified, inject a drift with a
//! known onset and magnitude, then summarize the resulting check reports so
//! detection delay, recovery, and false-alarm behavior can be read off
//! directly. The same pieces back the `sweep` and `inject` CLI commands.

use std::collections::VecDeque;

use rand::distr::weighted::WeightedIndex;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use rayon::prelude::*;
use thiserror::Error;

use crate::divergence::DivergenceMeasure;
use crate::event::{Event, TimestampNs, Value};
use crate::ingest::{FeatureDecl, Schema};
use crate::layout::FeatureKind;
use crate::monitor::{CheckReport, MonitorError};
use crate::trainer::{HalfLifeSpec, TrainError, TrainingConfig, train};

/// Nanoseconds per day.
pub const DAY_NS: i64 = 86_400_000_000_000;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("unknown feature '{0}'")]
    UnknownFeature(String),
    #[error("transform does not apply to feature '{feature}' of kind {kind}")]
    KindMismatch { feature: String, kind: FeatureKind },
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Monitor(#[from] MonitorError),
}

/// Distribution family of one synthetic feature.
#[derive(Debug, Clone)]
pub enum ValueFamily {
    LogNormal {
        mu: f64,
        sigma: f64,
    },
    Normal {
        mean: f64,
        std: f64,
    },
    Uniform {
        lo: f64,
        hi: f64,
    },
    Categorical {
        labels: Vec<String>,
        weights: Vec<f64>,
    },
    /// Discrete support: `levels` values spaced `step` apart starting at
    /// `base`, drawn with quadratically decaying probability toward the top.
    Quantized {
        base: f64,
        step: f64,
        levels: u32,
    },
}

impl ValueFamily {
    pub fn kind(&self) -> FeatureKind {
        match self {
            ValueFamily::Categorical { .. } => FeatureKind::Categorical,
            _ => FeatureKind::Numeric,
        }
    }
}

enum Sampler {
    LogNormal(LogNormal<f64>),
    Normal(Normal<f64>),
    Uniform {
        lo: f64,
        hi: f64,
    },
    Categorical {
        labels: Vec<String>,
        index: WeightedIndex<f64>,
    },
    Quantized {
        base: f64,
        step: f64,
        levels: u32,
    },
}

impl Sampler {
    fn build(family: &ValueFamily) -> Result<Self, HarnessError> {
        let invalid = |msg: String| HarnessError::InvalidSpec(msg);
        Ok(match family {
            ValueFamily::LogNormal { mu, sigma } => Sampler::LogNormal(
                LogNormal::new(*mu, *sigma).map_err(|e| invalid(format!("log-normal: {e}")))?,
            ),
            ValueFamily::Normal { mean, std } => Sampler::Normal(
                Normal::new(*mean, *std).map_err(|e| invalid(format!("normal: {e}")))?,
            ),
            ValueFamily::Uniform { lo, hi } => {
                if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                    return Err(invalid(format!("uniform bounds [{lo}, {hi})")));
                }
                Sampler::Uniform { lo: *lo, hi: *hi }
            }
            ValueFamily::Categorical { labels, weights } => {
                if labels.len() != weights.len() || labels.is_empty() {
                    return Err(invalid(format!(
                        "{} labels with {} weights",
                        labels.len(),
                        weights.len()
                    )));
                }
                Sampler::Categorical {
                    labels: labels.clone(),
                    index: WeightedIndex::new(weights.iter().copied())
                        .map_err(|e| invalid(format!("category weights: {e}")))?,
                }
            }
            ValueFamily::Quantized { base, step, levels } => {
                if *levels == 0 || !step.is_finite() || !base.is_finite() || *step <= 0.0 {
                    return Err(invalid(format!(
                        "quantized family base {base}, step {step}, levels {levels}"
                    )));
                }
                Sampler::Quantized {
                    base: *base,
                    step: *step,
                    levels: *levels,
                }
            }
        })
    }

    fn sample(&self, rng: &mut ChaCha12Rng) -> Value {
        match self {
            Sampler::LogNormal(d) => Value::Num(d.sample(rng)),
            Sampler::Normal(d) => Value::Num(d.sample(rng)),
            Sampler::Uniform { lo, hi } => Value::Num(rng.random_range(*lo..*hi)),
            Sampler::Categorical { labels, index } => Value::Cat(labels[index.sample(rng)].clone()),
            Sampler::Quantized { base, step, levels } => {
                let u: f64 = rng.random();
                let k = (u * u * *levels as f64).floor().min((*levels - 1) as f64);
                Value::Num(base + step * k)
            }
        }
    }
}

/// One synthetic feature: a distribution plus a missing-value rate.
#[derive(Debug, Clone)]
pub struct FeatureSpec {
    pub name: String,
    pub family: ValueFamily,
    pub missing_rate: f64,
}

/// A synthetic event stream: daily batches of evenly spaced events, with an
/// optional weekly sinusoidal modulation of the per-day event count.
#[derive(Debug, Clone)]
pub struct StreamSpec {
    pub features: Vec<FeatureSpec>,
    pub events_per_day: usize,
    pub days: usize,
    pub start_ts_ns: TimestampNs,
    /// Relative amplitude of the weekly rate cycle, in `[0, 1)`. Zero keeps
    /// every day at `events_per_day` events.
    pub weekly_seasonality: f64,
}

impl StreamSpec {
    /// Schema matching this stream, with an epoch-seconds `ts` column.
    pub fn schema(&self) -> Result<Schema, HarnessError> {
        let features = self
            .features
            .iter()
            .map(|f| FeatureDecl {
                name: f.name.clone(),
                kind: f.family.kind(),
            })
            .collect();
        Schema::new("ts", crate::ingest::TimestampFormat::EpochSeconds, features)
            .map_err(|e| HarnessError::InvalidSpec(e.to_string()))
    }

    fn events_on_day(&self, day: usize) -> usize {
        let cycle = (std::f64::consts::TAU * day as f64 / 7.0).sin();
        let count = self.events_per_day as f64 * (1.0 + self.weekly_seasonality * cycle);
        count.round().max(1.0) as usize
    }
}

/// Generates the stream described by `spec`. The same spec and seed always
/// produce the same events.
pub fn synth_stream(spec: &StreamSpec, seed: u64) -> Result<Vec<Event>, HarnessError> {
    if spec.features.is_empty() || spec.events_per_day == 0 || spec.days == 0 {
        return Err(HarnessError::InvalidSpec(
            "stream needs at least one feature, one event per day, and one day".into(),
        ));
    }
    if !(0.0..1.0).contains(&spec.weekly_seasonality) {
        return Err(HarnessError::InvalidSpec(format!(
            "weekly seasonality {} outside [0, 1)",
            spec.weekly_seasonality
        )));
    }
    for f in &spec.features {
        if !(0.0..=1.0).contains(&f.missing_rate) {
            return Err(HarnessError::InvalidSpec(format!(
                "missing rate {} for feature '{}' outside [0, 1]",
                f.missing_rate, f.name
            )));
        }
    }
    let samplers = spec
        .features
        .iter()
        .map(|f| Sampler::build(&f.family))
        .collect::<Result<Vec<_>, _>>()?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut events = Vec::new();
    for day in 0..spec.days {
        let day_start = spec.start_ts_ns + day as i64 * DAY_NS;
        let count = spec.events_on_day(day);
        for i in 0..count {
            let ts =
                day_start + (((2 * i as i128 + 1) * DAY_NS as i128) / (2 * count as i128)) as i64;
            let values = spec
                .features
                .iter()
                .zip(&samplers)
                .map(|(f, sampler)| {
                    if rng.random::<f64>() < f.missing_rate {
                        Value::Missing
                    } else {
                        sampler.sample(&mut rng)
                    }
                })
                .collect();
            events.push(Event::new(ts, values));
        }
    }
    Ok(events)
}

/// What a drift injection does to a selected value.
#[derive(Debug, Clone, PartialEq)]
pub enum DriftTransform {
    /// Multiplies numeric values by this factor. Missing values stay missing.
    ScaleFactor(f64),
    /// Replaces the value with missing.
    MissingSpike,
    /// Rewrites one categorical label into another. Other labels and missing
    /// values are untouched.
    CategorySwap { from: String, to: String },
}

/// A drift window on one feature. Inside `[start_ns, end_ns)` each event is
/// independently selected with probability `fraction`; selected events get
/// the transform applied. The selection depends only on the seed and the
/// event order, never on the values, so different transforms with the same
/// seed hit the same events.
#[derive(Debug, Clone)]
pub struct DriftSpec {
    pub feature: String,
    pub transform: DriftTransform,
    pub fraction: f64,
    pub start_ns: TimestampNs,
    pub end_ns: TimestampNs,
    pub seed: u64,
}

/// Applies a drift to `events` in place. Returns how many values actually
/// changed.
pub fn inject(
    events: &mut [Event],
    schema: &Schema,
    spec: &DriftSpec,
) -> Result<u64, HarnessError> {
    let idx = schema
        .features
        .iter()
        .position(|d| d.name == spec.feature)
        .ok_or_else(|| HarnessError::UnknownFeature(spec.feature.clone()))?;
    let kind = schema.features[idx].kind;
    let fits = match spec.transform {
        DriftTransform::ScaleFactor(_) => kind == FeatureKind::Numeric,
        DriftTransform::MissingSpike => true,
        DriftTransform::CategorySwap { .. } => kind == FeatureKind::Categorical,
    };
    if !fits {
        return Err(HarnessError::KindMismatch {
            feature: spec.feature.clone(),
            kind,
        });
    }
    if !(0.0..=1.0).contains(&spec.fraction) {
        return Err(HarnessError::InvalidSpec(format!(
            "fraction {} outside [0, 1]",
            spec.fraction
        )));
    }
    if spec.start_ns >= spec.end_ns {
        return Err(HarnessError::InvalidSpec(format!(
            "empty drift window [{}, {})",
            spec.start_ns, spec.end_ns
        )));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
    let mut changed = 0;
    for event in events.iter_mut() {
        if event.ts < spec.start_ns || event.ts >= spec.end_ns {
            continue;
        }
        let selected = rng.random::<f64>() < spec.fraction;
        if !selected {
            continue;
        }
        let value = &mut event.values[idx];
        match &spec.transform {
            DriftTransform::ScaleFactor(k) => {
                if let Value::Num(v) = value {
                    *v *= k;
                    changed += 1;
                }
            }
            DriftTransform::MissingSpike => {
                if !value.is_missing() {
                    *value = Value::Missing;
                    changed += 1;
                }
            }
            DriftTransform::CategorySwap { from, to } => {
                if value.as_cat() == Some(from.as_str()) {
                    *value = Value::Cat(to.clone());
                    changed += 1;
                }
            }
        }
    }
    Ok(changed)
}

/// Pointwise or windowed function of one numeric base feature.
#[derive(Debug, Clone, PartialEq)]
pub enum DerivedTransform {
    Log1p,
    Scale(f64),
    Sqrt,
    ClampMax(f64),
    /// Mean of the last `n` present base values, in event order.
    RollingMean(usize),
}

/// A new numeric column computed from an existing one. `base` may itself be
/// a derived column declared earlier in the list.
#[derive(Debug, Clone)]
pub struct DerivedSpec {
    pub name: String,
    pub base: String,
    pub transform: DerivedTransform,
}

/// Appends derived columns to every event and returns the extended schema.
/// A missing base value yields a missing derived value and leaves rolling
/// windows untouched, as do transform results that are not finite.
pub fn derive_features(
    events: &mut [Event],
    schema: &Schema,
    derived: &[DerivedSpec],
) -> Result<Schema, HarnessError> {
    let mut extended = schema.clone();
    for spec in derived {
        let base_idx = extended
            .features
            .iter()
            .position(|d| d.name == spec.base)
            .ok_or_else(|| HarnessError::UnknownFeature(spec.base.clone()))?;
        if extended.features[base_idx].kind != FeatureKind::Numeric {
            return Err(HarnessError::KindMismatch {
                feature: spec.base.clone(),
                kind: extended.features[base_idx].kind,
            });
        }
        if let DerivedTransform::RollingMean(0) = spec.transform {
            return Err(HarnessError::InvalidSpec(format!(
                "rolling mean window for '{}' must be positive",
                spec.name
            )));
        }
        let arity = extended.features.len();
        let mut window: VecDeque<f64> = VecDeque::new();
        for event in events.iter_mut() {
            if event.values.len() != arity {
                return Err(HarnessError::InvalidSpec(format!(
                    "event carries {} values, schema declares {arity} features",
                    event.values.len()
                )));
            }
            let out = match event.values[base_idx].as_num() {
                None => Value::Missing,
                Some(v) => {
                    let computed = match &spec.transform {
                        DerivedTransform::Log1p => v.ln_1p(),
                        DerivedTransform::Scale(k) => v * k,
                        DerivedTransform::Sqrt => v.sqrt(),
                        DerivedTransform::ClampMax(m) => v.min(*m),
                        DerivedTransform::RollingMean(n) => {
                            window.push_back(v);
                            if window.len() > *n {
                                window.pop_front();
                            }
                            window.iter().sum::<f64>() / window.len() as f64
                        }
                    };
                    if computed.is_finite() {
                        Value::Num(computed)
                    } else {
                        Value::Missing
                    }
                }
            };
            event.values.push(out);
        }
        extended.features.push(FeatureDecl {
            name: spec.name.clone(),
            kind: FeatureKind::Numeric,
        });
        extended
            .validate()
            .map_err(|e| HarnessError::InvalidSpec(e.to_string()))?;
    }
    Ok(extended)
}

/// Per-feature alarm bit series extracted from a sequence of check reports.
#[derive(Debug, Clone)]
pub struct AlarmSeries {
    pub feature_names: Vec<String>,
    pub check_times: Vec<TimestampNs>,
    /// `alarms[feature][check]`.
    pub alarms: Vec<Vec<bool>>,
    pub family: Vec<bool>,
}

impl AlarmSeries {
    pub fn from_reports(reports: &[CheckReport]) -> Self {
        let feature_names: Vec<String> = reports
            .first()
            .map(|r| r.features.iter().map(|f| f.feature.clone()).collect())
            .unwrap_or_default();
        let mut alarms = vec![Vec::with_capacity(reports.len()); feature_names.len()];
        let mut check_times = Vec::with_capacity(reports.len());
        let mut family = Vec::with_capacity(reports.len());
        for report in reports {
            check_times.push(report.at_ns);
            family.push(report.family_alarm);
            for (series, check) in alarms.iter_mut().zip(&report.features) {
                series.push(check.alarmed);
            }
        }
        AlarmSeries {
            feature_names,
            check_times,
            alarms,
            family,
        }
    }

    pub fn checks(&self) -> usize {
        self.check_times.len()
    }

    /// Maximal spans of consecutive alarms for one feature, as
    /// `(start index, length)` pairs.
    pub fn runs(&self, feature: usize) -> Vec<(usize, usize)> {
        runs_of(&self.alarms[feature])
    }

    pub fn family_runs(&self) -> Vec<(usize, usize)> {
        runs_of(&self.family)
    }

    /// Index of the first alarmed check at or after `from`, for one feature.
    pub fn first_alarm_at_or_after(&self, feature: usize, from: usize) -> Option<usize> {
        self.alarms[feature][from.min(self.alarms[feature].len())..]
            .iter()
            .position(|a| *a)
            .map(|p| from + p)
    }
}

fn runs_of(bits: &[bool]) -> Vec<(usize, usize)> {
    let mut runs = Vec::new();
    let mut start = None;
    for (i, bit) in bits.iter().enumerate() {
        match (bit, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                runs.push((s, i - s));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        runs.push((s, bits.len() - s));
    }
    runs
}

/// Alarm behavior summarized over a whole replay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggMetrics {
    /// Alarmed cells over all feature-check cells.
    pub alarmed_check_fraction: f64,
    /// Alarm runs per feature, relative to the maximum possible number of
    /// runs (every other check), averaged over features.
    pub relative_chained_alarms: f64,
    /// Mean alarm run length, averaged over the features that alarmed at
    /// all; zero when nothing alarmed.
    pub avg_alarm_duration: f64,
}

pub fn aggregate(series: &AlarmSeries) -> AggMetrics {
    let checks = series.checks();
    let features = series.feature_names.len();
    if checks == 0 || features == 0 {
        return AggMetrics {
            alarmed_check_fraction: 0.0,
            relative_chained_alarms: 0.0,
            avg_alarm_duration: 0.0,
        };
    }
    let max_runs = checks.div_ceil(2) as f64;
    let mut relative_sum = 0.0;
    let mut alarmed_cells = 0usize;
    let mut durations = Vec::new();
    for f in 0..features {
        let runs = series.runs(f);
        relative_sum += runs.len() as f64 / max_runs;
        alarmed_cells += series.alarms[f].iter().filter(|a| **a).count();
        if !runs.is_empty() {
            durations
                .push(runs.iter().map(|(_, len)| *len as f64).sum::<f64>() / runs.len() as f64);
        }
    }
    AggMetrics {
        alarmed_check_fraction: alarmed_cells as f64 / (features * checks) as f64,
        relative_chained_alarms: relative_sum / features as f64,
        avg_alarm_duration: if durations.is_empty() {
            0.0
        } else {
            durations.iter().sum::<f64>() / durations.len() as f64
        },
    }
}

/// Axes of a configuration sweep. Every combination is trained and replayed.
#[derive(Debug, Clone)]
pub struct SweepGrid {
    pub half_lives: Vec<HalfLifeSpec>,
    pub bins: Vec<usize>,
    /// Applied to numeric features; categorical features always keep the
    /// base configuration's categorical measure.
    pub measures: Vec<DivergenceMeasure>,
}

/// One trained-and-replayed sweep combination.
#[derive(Debug, Clone)]
pub struct SweepCell {
    pub half_life: String,
    pub bins: usize,
    pub measure: DivergenceMeasure,
    pub metrics: AggMetrics,
}

/// Trains one monitor per grid cell on `reference` and replays `stream`
/// through each, in parallel. Cells come back in grid order: half-life
/// outermost, then bins, then measure.
pub fn sweep(
    reference: &[Event],
    stream: &[Event],
    schema: &Schema,
    base: &TrainingConfig,
    grid: &SweepGrid,
) -> Result<Vec<SweepCell>, HarnessError> {
    if grid.half_lives.is_empty() || grid.bins.is_empty() || grid.measures.is_empty() {
        return Err(HarnessError::InvalidSpec(
            "sweep grid needs at least one half-life, bin count, and measure".into(),
        ));
    }
    let mut cells = Vec::new();
    for hl in &grid.half_lives {
        for &bins in &grid.bins {
            for &measure in &grid.measures {
                cells.push((*hl, bins, measure));
            }
        }
    }
    cells
        .into_par_iter()
        .map(|(half_life, bins, measure)| {
            let mut config = base.clone();
            config.half_life = half_life;
            config.bins = bins;
            config.measures.numeric = measure;
            let mut state = train(reference, schema, &config)?;
            let mut reports = Vec::new();
            state.replay(stream, |r| reports.push(r.clone()))?;
            Ok(SweepCell {
                half_life: half_life.label(),
                bins,
                measure,
                metrics: aggregate(&AlarmSeries::from_reports(&reports)),
            })
        })
        .collect()
}

/// Renders sweep cells as a TSV table with a header row.
pub fn sweep_table_tsv(cells: &[SweepCell]) -> String {
    let mut out = String::from(
        "half_life\tbins\tmeasure\talarmed_check_fraction\trelative_chained_alarms\tavg_alarm_duration\n",
    );
    for cell in cells {
        out.push_str(&format!(
            "{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}\n",
            cell.half_life,
            cell.bins,
            cell.measure,
            cell.metrics.alarmed_check_fraction,
            cell.metrics.relative_chained_alarms,
            cell.metrics.avg_alarm_duration,
        ));
    }
    out
}

/// Renders per-feature signals over time as a TSV matrix: one row per check,
/// one column per feature. With `log_scale` the cells are
/// `-log10(normalized signal)`, so larger means more drifted.
pub fn heatmap_tsv(reports: &[CheckReport], log_scale: bool) -> String {
    let Some(first) = reports.first() else {
        return String::new();
    };
    let mut out = String::from("time");
    for check in &first.features {
        out.push('\t');
        out.push_str(&check.feature);
    }
    out.push('\n');
    for report in reports {
        out.push_str(&report.at_iso);
        for check in &report.features {
            let v = if log_scale {
                0.0 - check.normalized_signal.max(1e-300).log10()
            } else {
                check.normalized_signal
            };
            out.push_str(&format!("\t{v:.6}"));
        }
        out.push('\n');
    }
    out
}

/// Count-based histogram over the last `window` observations, kept exact by
/// remembering each observation's bin. Memory grows with the window size;
/// this is the baseline a decayed histogram's constant footprint is measured
/// against.
#[derive(Debug, Clone)]
pub struct SlidingWindowHistogram {
    window: usize,
    order: VecDeque<usize>,
    counts: Vec<u64>,
}

impl SlidingWindowHistogram {
    pub fn new(bin_count: usize, window: usize) -> Self {
        SlidingWindowHistogram {
            window,
            order: VecDeque::new(),
            counts: vec![0; bin_count],
        }
    }

    pub fn push(&mut self, bin: usize) {
        if self.window == 0 {
            return;
        }
        self.order.push_back(bin);
        self.counts[bin] += 1;
        if self.order.len() > self.window {
            let evicted = self
                .order
                .pop_front()
                .expect("window overflow implies an element");
            self.counts[evicted] -= 1;
        }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn distribution(&self) -> Option<Vec<f64>> {
        if self.order.is_empty() {
            return None;
        }
        let total = self.order.len() as f64;
        Some(self.counts.iter().map(|c| *c as f64 / total).collect())
    }
}
