//! The live monitor: event ingestion, scheduled checks, and alarms.
//!
//! A [`MonitorState`] ingests events one at a time, updating each feature's
//! moving histogram in constant time. On a fixed cadence it runs a check:
//! every feature's current distribution is scored against its reference, the
//! score is converted to an empirical p-value against that feature's null
//! divergence distribution, and the family of p-values goes through a Holm
//! correction so that the probability of any false alarm in a check stays
//! below the configured level no matter how many features are monitored.
//!
//! Checks are pure reads of the histogram state. Between events the
//! normalized distribution of a decayed histogram does not change (decay
//! scales all weights alike), so a check at a cadence boundary needs no
//! catch-up decay.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::divergence::{self, DivergenceError};
use crate::duration::{Span, format_secs, parse_span};
use crate::emh::EmhError;
use crate::event::{Event, TimestampNs};
use crate::ingest::Schema;
use crate::trainer::{FeatureState, TrainingSnapshot};

#[derive(Debug, Error, PartialEq)]
pub enum MonitorError {
    #[error("event carries {got} values, schema has {want}")]
    SchemaMismatch { got: usize, want: usize },
    #[error("alpha must be in (0, 1), got {0}")]
    InvalidAlpha(f64),
    #[error(transparent)]
    Emh(#[from] EmhError),
    #[error(transparent)]
    Divergence(#[from] DivergenceError),
}

/// How often checks run during a replay.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cadence {
    /// A check at every multiple of this interval past the anchor point.
    Time { interval_ns: i64 },
    /// A check after every `count` ingested events.
    Events { count: u64 },
}

impl Cadence {
    pub fn time_secs(secs: f64) -> Result<Self, String> {
        if !(secs.is_finite() && secs > 0.0) {
            return Err(format!("cadence must be positive, got {secs}"));
        }
        Ok(Cadence::Time {
            interval_ns: (secs * 1e9).round() as i64,
        })
    }

    pub fn events(count: u64) -> Result<Self, String> {
        if count == 0 {
            return Err("cadence must be at least one event".into());
        }
        Ok(Cadence::Events { count })
    }
}

impl std::str::FromStr for Cadence {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match parse_span(s)? {
            Span::Events(n) => {
                if n.fract() != 0.0 {
                    return Err(format!("event cadence must be a whole number, got {n}"));
                }
                Cadence::events(n as u64)
            }
            Span::Secs(secs) => Cadence::time_secs(secs),
        }
    }
}

impl std::fmt::Display for Cadence {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Cadence::Time { interval_ns } => f.write_str(&format_secs(*interval_ns as f64 / 1e9)),
            Cadence::Events { count } => write!(f, "{count}e"),
        }
    }
}

/// Which features a check alarms on, given the per-feature Holm signals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AlarmRule {
    /// Alarm exactly the features whose own signal is below alpha,
    /// regardless of position in the sorted order.
    #[default]
    PerFeature,
    /// Classical step-down: walk features in ascending p-value order and
    /// alarm until the first signal at or above alpha, then stop.
    StepDown,
}

impl std::str::FromStr for AlarmRule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "per-feature" => Ok(AlarmRule::PerFeature),
            "step-down" => Ok(AlarmRule::StepDown),
            other => Err(format!(
                "unknown alarm rule '{other}' (expected per-feature or step-down)"
            )),
        }
    }
}

/// One feature's scores within a check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureCheck {
    pub feature: String,
    /// Divergence between the current moving distribution and the reference.
    pub divergence: f64,
    /// Empirical p-value of that divergence under the feature's null
    /// distribution.
    pub p_value: f64,
    /// 1-based position in ascending p-value order.
    pub rank: usize,
    /// Holm signal `p * (N + 1 - rank)`; alarms compare this against alpha.
    pub signal: f64,
    /// The signal clamped to at most 1, for display and heatmaps.
    pub normalized_signal: f64,
    pub alarmed: bool,
}

/// Outcome of one scheduled check across all features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    /// Check time, nanoseconds since the Unix epoch.
    pub at_ns: TimestampNs,
    /// Check time as RFC 3339 UTC, for human readers of the log.
    pub at_iso: String,
    pub family_alarm: bool,
    /// Feature entries in schema order.
    pub features: Vec<FeatureCheck>,
    /// Feature names in ascending p-value order: most drifted first.
    pub ranking: Vec<String>,
}

/// Per-input-position outcome of a Holm correction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HolmEntry {
    /// 1-based rank in ascending p-value order.
    pub rank: usize,
    pub signal: f64,
    pub alarmed: bool,
}

/// Applies the Holm correction to a family of p-values at level `alpha`.
/// Returns one entry per input position. Ties in p-value keep input order.
pub fn holm_correct(p_values: &[f64], alpha: f64, rule: AlarmRule) -> Vec<HolmEntry> {
    let n = p_values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| p_values[a].total_cmp(&p_values[b]).then(a.cmp(&b)));
    let mut entries = vec![
        HolmEntry {
            rank: 0,
            signal: 0.0,
            alarmed: false,
        };
        n
    ];
    let mut stepped_past_threshold = false;
    for (pos, &idx) in order.iter().enumerate() {
        let rank = pos + 1;
        let signal = p_values[idx] * (n + 1 - rank) as f64;
        let alarmed = match rule {
            AlarmRule::PerFeature => signal < alpha,
            AlarmRule::StepDown => {
                if signal >= alpha {
                    stepped_past_threshold = true;
                }
                !stepped_past_threshold
            }
        };
        entries[idx] = HolmEntry {
            rank,
            signal,
            alarmed,
        };
    }
    entries
}

/// Counters accumulated over one replay call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct ReplaySummary {
    pub events: u64,
    pub checks: u64,
    pub family_alarms: u64,
}

/// Full monitor state: one [`FeatureState`] per schema feature plus the
/// training snapshot and check bookkeeping.
///
/// The active `alpha`, `cadence`, and `alarm_rule` start at their trained
/// defaults on construction and on load; overrides apply to the running
/// process only and are never persisted.
#[derive(Debug, Clone, PartialEq)]
pub struct MonitorState {
    schema: Schema,
    features: Vec<FeatureState>,
    config: TrainingSnapshot,
    last_event: Option<TimestampNs>,
    last_check: Option<TimestampNs>,
    events_since_check: u64,
    alpha: f64,
    cadence: Cadence,
    alarm_rule: AlarmRule,
}

impl MonitorState {
    pub(crate) fn assemble(
        schema: Schema,
        features: Vec<FeatureState>,
        config: TrainingSnapshot,
        last_event: Option<TimestampNs>,
    ) -> Self {
        let alpha = config.alpha_bar;
        let cadence = config.cadence;
        MonitorState {
            schema,
            features,
            config,
            last_event,
            last_check: None,
            events_since_check: 0,
            alpha,
            cadence,
            alarm_rule: AlarmRule::default(),
        }
    }

    pub(crate) fn restore(
        schema: Schema,
        features: Vec<FeatureState>,
        config: TrainingSnapshot,
        last_event: Option<TimestampNs>,
        last_check: Option<TimestampNs>,
        events_since_check: u64,
    ) -> Self {
        let mut state = Self::assemble(schema, features, config, last_event);
        state.last_check = last_check;
        state.events_since_check = events_since_check;
        state
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn features(&self) -> &[FeatureState] {
        &self.features
    }

    pub fn config(&self) -> &TrainingSnapshot {
        &self.config
    }

    pub fn last_event(&self) -> Option<TimestampNs> {
        self.last_event
    }

    pub fn last_check(&self) -> Option<TimestampNs> {
        self.last_check
    }

    pub(crate) fn events_since_check(&self) -> u64 {
        self.events_since_check
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn cadence(&self) -> Cadence {
        self.cadence
    }

    /// Overrides the alarm level for this process; not persisted.
    pub fn set_alpha(&mut self, alpha: f64) -> Result<(), MonitorError> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(MonitorError::InvalidAlpha(alpha));
        }
        self.alpha = alpha;
        Ok(())
    }

    /// Overrides the check cadence for this process; not persisted.
    pub fn set_cadence(&mut self, cadence: Cadence) {
        self.cadence = cadence;
    }

    /// Overrides the alarm rule for this process; not persisted.
    pub fn set_alarm_rule(&mut self, rule: AlarmRule) {
        self.alarm_rule = rule;
    }

    /// Feeds one event into every feature's moving histogram.
    pub fn ingest_event(&mut self, event: &Event) -> Result<(), MonitorError> {
        if event.values.len() != self.features.len() {
            return Err(MonitorError::SchemaMismatch {
                got: event.values.len(),
                want: self.features.len(),
            });
        }
        for (fs, value) in self.features.iter_mut().zip(event.values.iter()) {
            fs.moving.update(fs.layout.locate(value), event.ts)?;
        }
        self.last_event = Some(self.last_event.map_or(event.ts, |t| t.max(event.ts)));
        self.events_since_check += 1;
        Ok(())
    }

    /// Runs a check against the current histograms and records it as the
    /// last check time.
    pub fn check_at(&mut self, at: TimestampNs) -> Result<CheckReport, MonitorError> {
        let report = self.evaluate(at)?;
        self.last_check = Some(at);
        self.events_since_check = 0;
        Ok(report)
    }

    fn evaluate(&self, at: TimestampNs) -> Result<CheckReport, MonitorError> {
        let mut divergences = Vec::with_capacity(self.features.len());
        let mut p_values = Vec::with_capacity(self.features.len());
        for fs in &self.features {
            let current = fs.moving.to_distribution()?;
            let reference = fs.reference.distribution();
            let d = divergence::compute(fs.measure, &current, &reference)?;
            p_values.push(fs.divergences.p_value(d));
            divergences.push(d);
        }
        let entries = holm_correct(&p_values, self.alpha, self.alarm_rule);
        let features: Vec<FeatureCheck> = self
            .features
            .iter()
            .zip(divergences.iter().zip(p_values.iter().zip(entries.iter())))
            .map(|(fs, (&divergence, (&p_value, entry)))| FeatureCheck {
                feature: fs.name.clone(),
                divergence,
                p_value,
                rank: entry.rank,
                signal: entry.signal,
                normalized_signal: entry.signal.min(1.0),
                alarmed: entry.alarmed,
            })
            .collect();
        let mut ranking: Vec<&FeatureCheck> = features.iter().collect();
        ranking.sort_by_key(|fc| fc.rank);
        Ok(CheckReport {
            at_ns: at,
            at_iso: chrono::DateTime::from_timestamp_nanos(at)
                .to_rfc3339_opts(chrono::SecondsFormat::Nanos, true),
            family_alarm: features.iter().any(|fc| fc.alarmed),
            ranking: ranking.into_iter().map(|fc| fc.feature.clone()).collect(),
            features,
        })
    }

    /// Ingests a time-ordered batch of events, running checks at cadence
    /// boundaries as they are crossed. Boundary checks see the state just
    /// before the crossing event. The time cadence anchors at the last
    /// check if one has happened, otherwise at the first event of this
    /// batch.
    pub fn replay(
        &mut self,
        events: &[Event],
        mut on_check: impl FnMut(&CheckReport),
    ) -> Result<ReplaySummary, MonitorError> {
        let mut summary = ReplaySummary::default();
        let mut next_check: Option<TimestampNs> = None;
        if let (Cadence::Time { interval_ns }, Some(first)) = (self.cadence, events.first()) {
            let anchor = self.last_check.unwrap_or(first.ts);
            next_check = Some(anchor + interval_ns);
        }
        for event in events {
            if let (Cadence::Time { interval_ns }, Some(boundary)) = (self.cadence, next_check) {
                let mut boundary = boundary;
                while event.ts >= boundary {
                    let report = self.check_at(boundary)?;
                    summary.checks += 1;
                    summary.family_alarms += u64::from(report.family_alarm);
                    on_check(&report);
                    boundary += interval_ns;
                }
                next_check = Some(boundary);
            }
            self.ingest_event(event)?;
            summary.events += 1;
            if let Cadence::Events { count } = self.cadence
                && self.events_since_check >= count
            {
                let report = self.check_at(event.ts)?;
                summary.checks += 1;
                summary.family_alarms += u64::from(report.family_alarm);
                on_check(&report);
            }
        }
        Ok(summary)
    }
}
