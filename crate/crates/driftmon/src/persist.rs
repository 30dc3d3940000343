//! Checksummed text serialization of monitor state.
//!
//! A state file is two lines: a header naming the format version and the
//! SHA-256 of the payload, then the payload as a single JSON document. Any
//! corrupted payload byte fails the checksum before anything is parsed, and
//! an unknown version is rejected by name rather than misread.
//!
//! Every number in the payload is a fixed-width decimal string: floats carry
//! 17 significant digits (enough to reproduce any `f64` bit-for-bit) in a
//! 24-character scientific form, integers are zero-padded to 20 digits. The
//! fixed widths make a monitor's state file identical in size no matter how
//! many events it has absorbed, so storage for a fleet of monitors can be
//! provisioned exactly; the cost over compact encodings is modest and the
//! file stays greppable.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;
use thiserror::Error;

use crate::divergence::DivergenceMeasure;
use crate::emh::{HalfLife, MovingHistogram, OutOfOrderPolicy};
use crate::ingest::Schema;
use crate::layout::{CategoricalLayout, FeatureKind, Layout, NumericLayout};
use crate::monitor::{Cadence, MonitorState};
use crate::trainer::{
    DivergenceDistribution, FeatureState, HalfLifeSpec, SeedingMode, StaticHistogram,
    TrainingSnapshot,
};

/// Version tag written to and accepted from state file headers.
pub const STATE_FORMAT_VERSION: &str = "v1";

const HEADER_PREFIX: &str = "driftmon-state";

#[derive(Debug, Error)]
pub enum PersistError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("state file is corrupt: {0}")]
    Corrupt(String),
    #[error("state checksum mismatch: header says {expected}, payload hashes to {actual}")]
    ChecksumMismatch { expected: String, actual: String },
    #[error("unsupported state version '{found}' (this build reads '{supported}')")]
    VersionMismatch { found: String, supported: String },
    #[error("cannot serialize non-finite number in {field}")]
    NonFinite { field: &'static str },
}

/// Serializes a monitor to the two-line state file format.
pub fn serialize_state(state: &MonitorState) -> Result<String, PersistError> {
    let dto = state_to_dto(state)?;
    let payload = serde_json::to_string(&dto)
        .map_err(|e| PersistError::Corrupt(format!("serialization failed: {e}")))?;
    let digest = hex_sha256(payload.as_bytes());
    Ok(format!(
        "{HEADER_PREFIX} {STATE_FORMAT_VERSION} sha256={digest}\n{payload}\n"
    ))
}

/// Parses a state file, verifying version and checksum first.
pub fn parse_state(text: &str) -> Result<MonitorState, PersistError> {
    let (header, rest) = text
        .split_once('\n')
        .ok_or_else(|| PersistError::Corrupt("missing header line".into()))?;
    let payload = rest.strip_suffix('\n').unwrap_or(rest);
    let mut parts = header.split_ascii_whitespace();
    if parts.next() != Some(HEADER_PREFIX) {
        return Err(PersistError::Corrupt(format!(
            "header does not start with '{HEADER_PREFIX}'"
        )));
    }
    let version = parts
        .next()
        .ok_or_else(|| PersistError::Corrupt("header is missing the version".into()))?;
    if version != STATE_FORMAT_VERSION {
        return Err(PersistError::VersionMismatch {
            found: version.to_owned(),
            supported: STATE_FORMAT_VERSION.to_owned(),
        });
    }
    let expected = parts
        .next()
        .and_then(|f| f.strip_prefix("sha256="))
        .ok_or_else(|| PersistError::Corrupt("header is missing the checksum".into()))?;
    let actual = hex_sha256(payload.as_bytes());
    if expected != actual {
        return Err(PersistError::ChecksumMismatch {
            expected: expected.to_owned(),
            actual,
        });
    }
    let dto: StateDto = serde_json::from_str(payload)
        .map_err(|e| PersistError::Corrupt(format!("payload is not valid state JSON: {e}")))?;
    dto_to_state(dto)
}

/// Writes the state file atomically (temp file plus rename).
pub fn save_state(state: &MonitorState, path: &Path) -> Result<(), PersistError> {
    let text = serialize_state(state)?;
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, text)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Reads a state file written by [`save_state`].
pub fn load_state(path: &Path) -> Result<MonitorState, PersistError> {
    parse_state(&std::fs::read_to_string(path)?)
}

fn hex_sha256(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

// Fixed-width codecs. Floats: sign, 17 significant digits, three-digit
// signed exponent, 24 characters total. Integers: sign or zero padding to 20
// characters. Decoding accepts any valid decimal so hand-repaired files
// still load.

fn enc_f64(x: f64, field: &'static str) -> Result<String, PersistError> {
    if !x.is_finite() {
        return Err(PersistError::NonFinite { field });
    }
    let raw = format!("{x:+.16e}");
    let (mantissa, exp) = raw
        .split_once('e')
        .expect("scientific format has an exponent");
    let exp: i32 = exp.parse().expect("exponent is an integer");
    Ok(format!("{mantissa}e{exp:+04}"))
}

fn dec_f64(s: &str, what: &str) -> Result<f64, PersistError> {
    let x: f64 = s
        .parse()
        .map_err(|_| PersistError::Corrupt(format!("{what}: invalid number '{s}'")))?;
    if !x.is_finite() {
        return Err(PersistError::Corrupt(format!(
            "{what}: non-finite number '{s}'"
        )));
    }
    Ok(x)
}

fn enc_i64(v: i64) -> String {
    format!("{v:+020}")
}

fn dec_i64(s: &str, what: &str) -> Result<i64, PersistError> {
    s.parse()
        .map_err(|_| PersistError::Corrupt(format!("{what}: invalid integer '{s}'")))
}

fn enc_u64(v: u64) -> String {
    format!("{v:020}")
}

fn dec_u64(s: &str, what: &str) -> Result<u64, PersistError> {
    s.parse()
        .map_err(|_| PersistError::Corrupt(format!("{what}: invalid count '{s}'")))
}

#[derive(Serialize, Deserialize)]
struct StateDto {
    schema: Schema,
    config: SnapshotDto,
    features: Vec<FeatureDto>,
    last_event: Option<String>,
    last_check: Option<String>,
    events_since_check: String,
}

#[derive(Serialize, Deserialize)]
struct SnapshotDto {
    bins: String,
    half_life_mode: String,
    half_life_value: String,
    resolved_half_life_mode: String,
    resolved_half_life_value: String,
    numeric_measure: DivergenceMeasure,
    categorical_measure: DivergenceMeasure,
    alpha_bar: String,
    gamma: String,
    seed: String,
    seeding: SeedingMode,
    warmup_half_lives: String,
    warmup_events: String,
    sample_count: String,
    sample_count_required: String,
    samples_capped: bool,
    out_of_order: String,
    cadence_mode: String,
    cadence_value: String,
    reference_events: String,
    reference_span_secs: String,
    events_per_sec: String,
}

#[derive(Serialize, Deserialize)]
struct FeatureDto {
    name: String,
    kind: FeatureKind,
    measure: DivergenceMeasure,
    layout: LayoutDto,
    reference_counts: Vec<String>,
    divergence_samples: Vec<String>,
    moving: MovingDto,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum LayoutDto {
    Numeric { edges: Vec<String> },
    Categorical { categories: Vec<String> },
}

#[derive(Serialize, Deserialize)]
struct MovingDto {
    weights: Vec<String>,
    total_weight: String,
    last_timestamp: Option<String>,
    updates_since_resum: String,
}

fn state_to_dto(state: &MonitorState) -> Result<StateDto, PersistError> {
    let snap = state.config();
    let (hl_mode, hl_value) = match snap.half_life {
        HalfLifeSpec::Events(n) => ("events", enc_f64(n, "half_life")?),
        HalfLifeSpec::TimeAsEvents(s) => ("time_as_events", enc_f64(s, "half_life")?),
        HalfLifeSpec::TimeDecay(s) => ("time_decay", enc_f64(s, "half_life")?),
    };
    let (res_mode, res_value) = match snap.resolved_half_life {
        HalfLife::Events(n) => ("events", enc_f64(n, "resolved_half_life")?),
        HalfLife::TimeSecs(s) => ("time_secs", enc_f64(s, "resolved_half_life")?),
    };
    let (cadence_mode, cadence_value) = match snap.cadence {
        Cadence::Time { interval_ns } => ("time", enc_i64(interval_ns)),
        Cadence::Events { count } => ("events", enc_u64(count)),
    };
    let features = state
        .features()
        .iter()
        .map(feature_to_dto)
        .collect::<Result<Vec<_>, _>>()?;
    Ok(StateDto {
        schema: state.schema().clone(),
        config: SnapshotDto {
            bins: enc_u64(snap.bins as u64),
            half_life_mode: hl_mode.to_owned(),
            half_life_value: hl_value,
            resolved_half_life_mode: res_mode.to_owned(),
            resolved_half_life_value: res_value,
            numeric_measure: snap.measures.numeric,
            categorical_measure: snap.measures.categorical,
            alpha_bar: enc_f64(snap.alpha_bar, "alpha_bar")?,
            gamma: enc_f64(snap.gamma, "gamma")?,
            seed: enc_u64(snap.seed),
            seeding: snap.seeding,
            warmup_half_lives: enc_f64(snap.warmup_half_lives, "warmup_half_lives")?,
            warmup_events: enc_u64(snap.warmup_events as u64),
            sample_count: enc_u64(snap.sample_count as u64),
            sample_count_required: enc_u64(snap.sample_count_required as u64),
            samples_capped: snap.samples_capped,
            out_of_order: snap.out_of_order.to_string(),
            cadence_mode: cadence_mode.to_owned(),
            cadence_value,
            reference_events: enc_u64(snap.reference_events as u64),
            reference_span_secs: enc_f64(snap.reference_span_secs, "reference_span_secs")?,
            events_per_sec: enc_f64(snap.events_per_sec, "events_per_sec")?,
        },
        features,
        last_event: state.last_event().map(enc_i64),
        last_check: state.last_check().map(enc_i64),
        events_since_check: enc_u64(state.events_since_check()),
    })
}

fn feature_to_dto(fs: &FeatureState) -> Result<FeatureDto, PersistError> {
    let layout = match &fs.layout {
        Layout::Numeric(l) => LayoutDto::Numeric {
            edges: l
                .edges()
                .iter()
                .map(|e| enc_f64(*e, "layout edge"))
                .collect::<Result<_, _>>()?,
        },
        Layout::Categorical(l) => LayoutDto::Categorical {
            categories: l.categories().to_vec(),
        },
    };
    Ok(FeatureDto {
        name: fs.name.clone(),
        kind: fs.kind(),
        measure: fs.measure,
        layout,
        reference_counts: fs.reference.counts().iter().map(|c| enc_u64(*c)).collect(),
        divergence_samples: fs
            .divergences
            .samples()
            .iter()
            .map(|d| enc_f64(*d, "divergence sample"))
            .collect::<Result<_, _>>()?,
        moving: MovingDto {
            weights: fs
                .moving
                .weights()
                .iter()
                .map(|w| enc_f64(*w, "moving weight"))
                .collect::<Result<_, _>>()?,
            total_weight: enc_f64(fs.moving.total_weight(), "total_weight")?,
            last_timestamp: fs.moving.last_timestamp().map(enc_i64),
            updates_since_resum: enc_u64(fs.moving.updates_since_resum() as u64),
        },
    })
}

fn dto_to_state(dto: StateDto) -> Result<MonitorState, PersistError> {
    dto.schema
        .validate()
        .map_err(|e| PersistError::Corrupt(e.to_string()))?;
    let snap = snapshot_from_dto(&dto.config)?;
    if dto.features.len() != dto.schema.features.len() {
        return Err(PersistError::Corrupt(format!(
            "schema declares {} features, state carries {}",
            dto.schema.features.len(),
            dto.features.len()
        )));
    }
    let mut features = Vec::with_capacity(dto.features.len());
    for (decl, fdto) in dto.schema.features.iter().zip(dto.features) {
        features.push(feature_from_dto(fdto, decl.kind, &snap)?);
    }
    let last_event = dto
        .last_event
        .map(|s| dec_i64(&s, "last_event"))
        .transpose()?;
    let last_check = dto
        .last_check
        .map(|s| dec_i64(&s, "last_check"))
        .transpose()?;
    let events_since_check = dec_u64(&dto.events_since_check, "events_since_check")?;
    Ok(MonitorState::restore(
        dto.schema,
        features,
        snap,
        last_event,
        last_check,
        events_since_check,
    ))
}

fn snapshot_from_dto(dto: &SnapshotDto) -> Result<TrainingSnapshot, PersistError> {
    let corrupt = |msg: String| PersistError::Corrupt(msg);
    let half_life = match dto.half_life_mode.as_str() {
        "events" => HalfLifeSpec::Events(dec_f64(&dto.half_life_value, "half_life")?),
        "time_as_events" => HalfLifeSpec::TimeAsEvents(dec_f64(&dto.half_life_value, "half_life")?),
        "time_decay" => HalfLifeSpec::TimeDecay(dec_f64(&dto.half_life_value, "half_life")?),
        other => return Err(corrupt(format!("unknown half-life mode '{other}'"))),
    };
    let resolved_half_life = match dto.resolved_half_life_mode.as_str() {
        "events" => HalfLife::events(dec_f64(
            &dto.resolved_half_life_value,
            "resolved_half_life",
        )?),
        "time_secs" => HalfLife::time_secs(dec_f64(
            &dto.resolved_half_life_value,
            "resolved_half_life",
        )?),
        other => {
            return Err(corrupt(format!(
                "unknown resolved half-life mode '{other}'"
            )));
        }
    }
    .map_err(|e| corrupt(e.to_string()))?;
    let cadence = match dto.cadence_mode.as_str() {
        "time" => {
            let interval_ns = dec_i64(&dto.cadence_value, "cadence")?;
            if interval_ns <= 0 {
                return Err(corrupt("cadence interval must be positive".into()));
            }
            Cadence::Time { interval_ns }
        }
        "events" => {
            let count = dec_u64(&dto.cadence_value, "cadence")?;
            if count == 0 {
                return Err(corrupt("cadence event count must be positive".into()));
            }
            Cadence::Events { count }
        }
        other => return Err(corrupt(format!("unknown cadence mode '{other}'"))),
    };
    let out_of_order: OutOfOrderPolicy =
        dto.out_of_order.parse().map_err(|e: String| corrupt(e))?;
    if !dto
        .categorical_measure
        .allowed_for(FeatureKind::Categorical)
    {
        return Err(corrupt(format!(
            "categorical features cannot use {}",
            dto.categorical_measure
        )));
    }
    let alpha_bar = dec_f64(&dto.alpha_bar, "alpha_bar")?;
    let gamma = dec_f64(&dto.gamma, "gamma")?;
    if !(alpha_bar > 0.0 && alpha_bar < 1.0) || !(gamma > 0.0 && gamma < 1.0) {
        return Err(corrupt(format!(
            "alpha_bar and gamma must be in (0, 1), got {alpha_bar} and {gamma}"
        )));
    }
    Ok(TrainingSnapshot {
        bins: dec_u64(&dto.bins, "bins")? as usize,
        half_life,
        resolved_half_life,
        measures: crate::trainer::MeasureMap {
            numeric: dto.numeric_measure,
            categorical: dto.categorical_measure,
        },
        alpha_bar,
        gamma,
        seed: dec_u64(&dto.seed, "seed")?,
        seeding: dto.seeding,
        warmup_half_lives: dec_f64(&dto.warmup_half_lives, "warmup_half_lives")?,
        warmup_events: dec_u64(&dto.warmup_events, "warmup_events")? as usize,
        sample_count: dec_u64(&dto.sample_count, "sample_count")? as usize,
        sample_count_required: dec_u64(&dto.sample_count_required, "sample_count_required")?
            as usize,
        samples_capped: dto.samples_capped,
        out_of_order,
        cadence,
        reference_events: dec_u64(&dto.reference_events, "reference_events")? as usize,
        reference_span_secs: dec_f64(&dto.reference_span_secs, "reference_span_secs")?,
        events_per_sec: dec_f64(&dto.events_per_sec, "events_per_sec")?,
    })
}

fn feature_from_dto(
    dto: FeatureDto,
    declared_kind: FeatureKind,
    snap: &TrainingSnapshot,
) -> Result<FeatureState, PersistError> {
    let name = dto.name;
    let corrupt = |msg: String| PersistError::Corrupt(format!("feature '{name}': {msg}"));
    if dto.kind != declared_kind {
        return Err(corrupt(format!(
            "kind {} does not match the schema's {declared_kind}",
            dto.kind
        )));
    }
    let layout = match dto.layout {
        LayoutDto::Numeric { edges } => {
            if dto.kind != FeatureKind::Numeric {
                return Err(corrupt("numeric layout on a categorical feature".into()));
            }
            let edges = edges
                .iter()
                .map(|e| dec_f64(e, "layout edge"))
                .collect::<Result<Vec<_>, _>>()?;
            Layout::Numeric(
                NumericLayout::from_edges(edges)
                    .map_err(|e| corrupt(format!("bad layout edges: {e}")))?,
            )
        }
        LayoutDto::Categorical { categories } => {
            if dto.kind != FeatureKind::Categorical {
                return Err(corrupt("categorical layout on a numeric feature".into()));
            }
            if categories.is_empty() {
                return Err(corrupt("layout has no categories".into()));
            }
            Layout::Categorical(CategoricalLayout::from_categories(categories))
        }
    };
    if !dto.measure.allowed_for(dto.kind) {
        return Err(corrupt(format!(
            "{} is not valid for {}",
            dto.measure, dto.kind
        )));
    }
    let bin_count = layout.bin_count();
    if dto.reference_counts.len() != bin_count {
        return Err(corrupt(format!(
            "reference histogram has {} bins, layout has {bin_count}",
            dto.reference_counts.len()
        )));
    }
    let counts = dto
        .reference_counts
        .iter()
        .map(|c| dec_u64(c, "reference count"))
        .collect::<Result<Vec<_>, _>>()?;
    let reference = StaticHistogram::from_counts(counts);
    if reference.total() == 0 {
        return Err(corrupt("reference histogram is empty".into()));
    }
    if dto.divergence_samples.len() != snap.sample_count {
        return Err(corrupt(format!(
            "{} divergence samples, expected {}",
            dto.divergence_samples.len(),
            snap.sample_count
        )));
    }
    let samples = dto
        .divergence_samples
        .iter()
        .map(|d| dec_f64(d, "divergence sample"))
        .collect::<Result<Vec<_>, _>>()?;
    if samples.iter().any(|d| *d < 0.0) {
        return Err(corrupt("negative divergence sample".into()));
    }
    if dto.moving.weights.len() != bin_count {
        return Err(corrupt(format!(
            "moving histogram has {} bins, layout has {bin_count}",
            dto.moving.weights.len()
        )));
    }
    let weights = dto
        .moving
        .weights
        .iter()
        .map(|w| dec_f64(w, "moving weight"))
        .collect::<Result<Vec<_>, _>>()?;
    if weights.iter().any(|w| *w < 0.0) {
        return Err(corrupt("negative moving weight".into()));
    }
    let total_weight = dec_f64(&dto.moving.total_weight, "total_weight")?;
    let last_timestamp = dto
        .moving
        .last_timestamp
        .map(|s| dec_i64(&s, "moving last_timestamp"))
        .transpose()?;
    let updates_since_resum = dec_u64(&dto.moving.updates_since_resum, "updates_since_resum")?;
    let moving = MovingHistogram::from_parts(
        weights,
        total_weight,
        last_timestamp,
        snap.resolved_half_life,
        snap.out_of_order,
        updates_since_resum
            .try_into()
            .map_err(|_| corrupt("updates_since_resum out of range".into()))?,
    );
    Ok(FeatureState {
        name: name.clone(),
        layout,
        reference,
        divergences: DivergenceDistribution::new(samples, snap.samples_capped),
        moving,
        measure: dto.measure,
    })
}
