//! Schema-described event files in CSV or JSONL form.
//!
//! A [`Schema`] names the timestamp column, its format, and each monitored
//! feature with its kind. Readers map files onto [`Event`]s in schema order:
//! columns not named by the schema are ignored (and reported), configured
//! null tokens and numeric parse failures become [`Value::Missing`], and a
//! structurally broken record (bad timestamp, wrong field count, invalid
//! JSON) is either skipped or aborts the read, per policy. Normalizing
//! unparseable values to missing rather than erroring keeps a monitor alive
//! on the exact kind of upstream schema accidents it exists to detect.
//!
//! Epoch timestamps are read and written as decimal strings with up to
//! nanosecond precision; going through `f64` would lose precision for
//! present-day epochs.

use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use thiserror::Error;

use crate::event::{Event, TimestampNs, Value};
use crate::layout::FeatureKind;

const NANOS_PER_SEC_I: i64 = 1_000_000_000;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("{path}: unsupported file extension (expected .csv, .jsonl, or .ndjson)")]
    UnknownFormat { path: String },
    #[error("{path} is missing column '{column}' required by the schema")]
    MissingColumn { path: String, column: String },
    #[error("line {line}: {reason}")]
    MalformedRecord { line: u64, reason: String },
}

/// One monitored feature as declared by the schema.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureDecl {
    pub name: String,
    pub kind: FeatureKind,
}

/// Timestamp column format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimestampFormat {
    /// Decimal seconds since the Unix epoch, e.g. `1609459200.25`.
    EpochSeconds,
    /// RFC 3339 / ISO 8601, e.g. `2021-01-01T00:00:00.25Z`. Timestamps
    /// without an offset are taken as UTC.
    Iso8601,
}

fn default_null_tokens() -> Vec<String> {
    ["", "null", "NULL", "NaN"].map(String::from).to_vec()
}

/// Describes the columns of an event file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub timestamp_field: String,
    pub timestamp_format: TimestampFormat,
    pub features: Vec<FeatureDecl>,
    /// Raw strings that read as a missing value.
    #[serde(default = "default_null_tokens")]
    pub null_tokens: Vec<String>,
}

impl Schema {
    pub fn new(
        timestamp_field: impl Into<String>,
        timestamp_format: TimestampFormat,
        features: Vec<FeatureDecl>,
    ) -> Result<Self, IngestError> {
        let schema = Schema {
            timestamp_field: timestamp_field.into(),
            timestamp_format,
            features,
            null_tokens: default_null_tokens(),
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        if self.features.is_empty() {
            return Err(IngestError::InvalidSchema(
                "schema declares no features".into(),
            ));
        }
        if self.timestamp_field.is_empty() {
            return Err(IngestError::InvalidSchema(
                "timestamp field name is empty".into(),
            ));
        }
        let mut seen = BTreeSet::new();
        for decl in &self.features {
            if decl.name.is_empty() {
                return Err(IngestError::InvalidSchema("feature name is empty".into()));
            }
            if decl.name == self.timestamp_field {
                return Err(IngestError::InvalidSchema(format!(
                    "feature '{}' collides with the timestamp field",
                    decl.name
                )));
            }
            if !seen.insert(&decl.name) {
                return Err(IngestError::InvalidSchema(format!(
                    "duplicate feature '{}'",
                    decl.name
                )));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, IngestError> {
        let text = std::fs::read_to_string(path)?;
        let schema: Schema = serde_json::from_str(&text)
            .map_err(|e| IngestError::InvalidSchema(format!("{}: {e}", path.display())))?;
        schema.validate()?;
        Ok(schema)
    }

    fn is_null_token(&self, raw: &str) -> bool {
        self.null_tokens.iter().any(|t| t == raw)
    }

    fn parse_string_value(&self, raw: &str, kind: FeatureKind) -> Value {
        if self.is_null_token(raw) {
            return Value::Missing;
        }
        match kind {
            FeatureKind::Numeric => raw.trim().parse::<f64>().map_or(Value::Missing, Value::Num),
            FeatureKind::Categorical => Value::Cat(raw.to_owned()),
        }
    }
}

/// What to do with a structurally malformed record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MalformedPolicy {
    #[default]
    Abort,
    Skip,
}

/// Counters from one file read.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ReadSummary {
    pub events: usize,
    /// Malformed records dropped under [`MalformedPolicy::Skip`].
    pub skipped: usize,
    /// Columns present in the file but absent from the schema.
    pub ignored_columns: Vec<String>,
}

/// Reads a whole event file, dispatching on the file extension.
pub fn read_events(
    path: &Path,
    schema: &Schema,
    policy: MalformedPolicy,
) -> Result<(Vec<Event>, ReadSummary), IngestError> {
    match extension_of(path)? {
        FileFormat::Csv => read_csv(path, schema, policy),
        FileFormat::Jsonl => read_jsonl(path, schema, policy),
    }
}

/// Writes events in schema order, dispatching on the file extension.
pub fn write_events(path: &Path, events: &[Event], schema: &Schema) -> Result<(), IngestError> {
    match extension_of(path)? {
        FileFormat::Csv => write_csv(path, events, schema),
        FileFormat::Jsonl => write_jsonl(path, events, schema),
    }
}

enum FileFormat {
    Csv,
    Jsonl,
}

fn extension_of(path: &Path) -> Result<FileFormat, IngestError> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => Ok(FileFormat::Csv),
        Some("jsonl") | Some("ndjson") => Ok(FileFormat::Jsonl),
        _ => Err(IngestError::UnknownFormat {
            path: path.display().to_string(),
        }),
    }
}

fn read_csv(
    path: &Path,
    schema: &Schema,
    policy: MalformedPolicy,
) -> Result<(Vec<Event>, ReadSummary), IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(false)
        .from_path(path)
        .map_err(csv_open_error)?;
    let headers = reader
        .headers()
        .map_err(|e| IngestError::MalformedRecord {
            line: 1,
            reason: e.to_string(),
        })?
        .clone();
    let mut column_of = Vec::with_capacity(schema.features.len());
    let locate = |name: &str| headers.iter().position(|h| h == name);
    let ts_column = locate(&schema.timestamp_field).ok_or_else(|| IngestError::MissingColumn {
        path: path.display().to_string(),
        column: schema.timestamp_field.clone(),
    })?;
    for decl in &schema.features {
        column_of.push(
            locate(&decl.name).ok_or_else(|| IngestError::MissingColumn {
                path: path.display().to_string(),
                column: decl.name.clone(),
            })?,
        );
    }
    let mut known: BTreeSet<usize> = column_of.iter().copied().collect();
    known.insert(ts_column);
    let ignored_columns: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| !known.contains(i))
        .map(|(_, h)| h.to_owned())
        .collect();

    let mut events = Vec::new();
    let mut summary = ReadSummary {
        ignored_columns,
        ..Default::default()
    };
    for record in reader.into_records() {
        match parse_csv_record(record, schema, ts_column, &column_of) {
            Ok(event) => {
                events.push(event);
                summary.events += 1;
            }
            Err(err) => match policy {
                MalformedPolicy::Abort => return Err(err),
                MalformedPolicy::Skip => summary.skipped += 1,
            },
        }
    }
    Ok((events, summary))
}

fn parse_csv_record(
    record: Result<csv::StringRecord, csv::Error>,
    schema: &Schema,
    ts_column: usize,
    column_of: &[usize],
) -> Result<Event, IngestError> {
    let record = record.map_err(|e| IngestError::MalformedRecord {
        line: e.position().map_or(0, |p| p.line()),
        reason: e.to_string(),
    })?;
    let line = record.position().map_or(0, |p| p.line());
    let malformed = |reason: String| IngestError::MalformedRecord { line, reason };
    let raw_ts = record
        .get(ts_column)
        .ok_or_else(|| malformed("missing timestamp column".into()))?;
    let ts = parse_timestamp(raw_ts, schema.timestamp_format).map_err(&malformed)?;
    let mut values = Vec::with_capacity(column_of.len());
    for (decl, &col) in schema.features.iter().zip(column_of) {
        let raw = record
            .get(col)
            .ok_or_else(|| malformed(format!("missing column '{}'", decl.name)))?;
        values.push(schema.parse_string_value(raw, decl.kind));
    }
    Ok(Event::new(ts, values))
}

fn csv_open_error(e: csv::Error) -> IngestError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => IngestError::Io(io),
        other => IngestError::MalformedRecord {
            line: 0,
            reason: format!("{other:?}"),
        },
    }
}

fn read_jsonl(
    path: &Path,
    schema: &Schema,
    policy: MalformedPolicy,
) -> Result<(Vec<Event>, ReadSummary), IngestError> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut events = Vec::new();
    let mut summary = ReadSummary::default();
    let mut ignored: BTreeSet<String> = BTreeSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i as u64 + 1;
        let text = line?;
        if text.trim().is_empty() {
            continue;
        }
        match parse_json_event_inner(&text, schema, line_no, Some(&mut ignored)) {
            Ok(event) => {
                events.push(event);
                summary.events += 1;
            }
            Err(err) => match policy {
                MalformedPolicy::Abort => return Err(err),
                MalformedPolicy::Skip => summary.skipped += 1,
            },
        }
    }
    summary.ignored_columns = ignored.into_iter().collect();
    Ok((events, summary))
}

/// Parses a single JSONL event record against the schema.
pub fn parse_json_event(text: &str, schema: &Schema) -> Result<Event, IngestError> {
    parse_json_event_inner(text, schema, 0, None)
}

fn parse_json_event_inner(
    text: &str,
    schema: &Schema,
    line: u64,
    ignored: Option<&mut BTreeSet<String>>,
) -> Result<Event, IngestError> {
    let malformed = |reason: String| IngestError::MalformedRecord { line, reason };
    let parsed: serde_json::Value =
        serde_json::from_str(text).map_err(|e| malformed(e.to_string()))?;
    let object = parsed
        .as_object()
        .ok_or_else(|| malformed("record is not a JSON object".into()))?;
    let ts_value = object.get(&schema.timestamp_field).ok_or_else(|| {
        malformed(format!(
            "missing timestamp field '{}'",
            schema.timestamp_field
        ))
    })?;
    let ts = match (ts_value, schema.timestamp_format) {
        (serde_json::Value::String(s), format) => parse_timestamp(s, format).map_err(&malformed)?,
        (serde_json::Value::Number(n), TimestampFormat::EpochSeconds) => {
            json_number_to_ns(n).map_err(&malformed)?
        }
        _ => return Err(malformed("timestamp has an unsupported JSON type".into())),
    };
    let mut values = Vec::with_capacity(schema.features.len());
    for decl in &schema.features {
        values.push(match object.get(&decl.name) {
            None | Some(serde_json::Value::Null) => Value::Missing,
            Some(serde_json::Value::String(s)) => schema.parse_string_value(s, decl.kind),
            Some(serde_json::Value::Number(n)) => match decl.kind {
                FeatureKind::Numeric => n.as_f64().map_or(Value::Missing, Value::Num),
                FeatureKind::Categorical => Value::Cat(n.to_string()),
            },
            Some(serde_json::Value::Bool(b)) => match decl.kind {
                FeatureKind::Numeric => Value::Missing,
                FeatureKind::Categorical => Value::Cat(b.to_string()),
            },
            Some(_) => Value::Missing,
        });
    }
    if let Some(ignored) = ignored {
        for key in object.keys() {
            if key != &schema.timestamp_field && !schema.features.iter().any(|d| &d.name == key) {
                ignored.insert(key.clone());
            }
        }
    }
    Ok(Event::new(ts, values))
}

fn json_number_to_ns(n: &serde_json::Number) -> Result<TimestampNs, String> {
    if let Some(secs) = n.as_i64() {
        return secs
            .checked_mul(NANOS_PER_SEC_I)
            .ok_or_else(|| format!("timestamp {secs}s overflows the nanosecond range"));
    }
    let secs = n
        .as_f64()
        .ok_or_else(|| format!("cannot read timestamp '{n}'"))?;
    let ns = secs * 1e9;
    if !ns.is_finite() || ns.abs() >= i64::MAX as f64 {
        return Err(format!("timestamp {secs}s overflows the nanosecond range"));
    }
    Ok(ns.round() as i64)
}

fn write_csv(path: &Path, events: &[Event], schema: &Schema) -> Result<(), IngestError> {
    let mut writer = csv::Writer::from_path(path).map_err(csv_open_error)?;
    let mut header = vec![schema.timestamp_field.as_str()];
    header.extend(schema.features.iter().map(|d| d.name.as_str()));
    writer.write_record(&header).map_err(csv_write_error)?;
    let mut float_buf = ryu::Buffer::new();
    for event in events {
        let mut record = Vec::with_capacity(header.len());
        record.push(format_timestamp(event.ts, schema.timestamp_format));
        for value in &event.values {
            record.push(match value {
                Value::Num(x) if x.is_finite() => float_buf.format_finite(*x).to_owned(),
                Value::Num(x) => x.to_string(),
                Value::Cat(s) => s.clone(),
                Value::Missing => String::new(),
            });
        }
        writer.write_record(&record).map_err(csv_write_error)?;
    }
    writer.flush()?;
    Ok(())
}

fn csv_write_error(e: csv::Error) -> IngestError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => IngestError::Io(io),
        other => IngestError::MalformedRecord {
            line: 0,
            reason: format!("{other:?}"),
        },
    }
}

fn write_jsonl(path: &Path, events: &[Event], schema: &Schema) -> Result<(), IngestError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for event in events {
        let mut object = serde_json::Map::with_capacity(schema.features.len() + 1);
        object.insert(
            schema.timestamp_field.clone(),
            serde_json::Value::String(format_timestamp(event.ts, schema.timestamp_format)),
        );
        for (decl, value) in schema.features.iter().zip(&event.values) {
            let json = match value {
                Value::Num(x) => serde_json::Number::from_f64(*x)
                    .map(serde_json::Value::Number)
                    .unwrap_or_else(|| serde_json::Value::String(x.to_string())),
                Value::Cat(s) => serde_json::Value::String(s.clone()),
                Value::Missing => serde_json::Value::Null,
            };
            object.insert(decl.name.clone(), json);
        }
        serde_json::to_writer(&mut out, &serde_json::Value::Object(object))
            .map_err(|e| IngestError::Io(e.into()))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Parses a timestamp string in the given format to epoch nanoseconds.
pub fn parse_timestamp(raw: &str, format: TimestampFormat) -> Result<TimestampNs, String> {
    let raw = raw.trim();
    match format {
        TimestampFormat::EpochSeconds => parse_epoch_seconds(raw),
        TimestampFormat::Iso8601 => parse_iso8601(raw),
    }
}

/// Formats epoch nanoseconds in the given format. Epoch output keeps only
/// the digits needed; ISO output always carries nanosecond precision.
pub fn format_timestamp(ts: TimestampNs, format: TimestampFormat) -> String {
    match format {
        TimestampFormat::EpochSeconds => {
            let sign = if ts < 0 { "-" } else { "" };
            let abs = ts.unsigned_abs();
            let secs = abs / NANOS_PER_SEC_I as u64;
            let frac = abs % NANOS_PER_SEC_I as u64;
            if frac == 0 {
                format!("{sign}{secs}")
            } else {
                let digits = format!("{frac:09}");
                format!("{sign}{secs}.{}", digits.trim_end_matches('0'))
            }
        }
        TimestampFormat::Iso8601 => chrono::DateTime::from_timestamp_nanos(ts)
            .to_rfc3339_opts(chrono::SecondsFormat::Nanos, true),
    }
}

fn parse_epoch_seconds(raw: &str) -> Result<TimestampNs, String> {
    let bad = || format!("invalid epoch-seconds timestamp '{raw}'");
    let (sign, magnitude) = match raw.strip_prefix('-') {
        Some(rest) => (-1i64, rest),
        None => (1i64, raw),
    };
    let (sec_part, frac_part) = match magnitude.split_once('.') {
        Some((s, f)) => (s, f),
        None => (magnitude, ""),
    };
    if sec_part.is_empty() || !sec_part.bytes().all(|b| b.is_ascii_digit()) {
        return Err(bad());
    }
    if frac_part.len() > 9 || !frac_part.bytes().all(|b| b.is_ascii_digit()) {
        return Err(if frac_part.len() > 9 {
            format!("timestamp '{raw}' is finer than nanoseconds")
        } else {
            bad()
        });
    }
    let secs: i64 = sec_part.parse().map_err(|_| bad())?;
    let mut frac: i64 = if frac_part.is_empty() {
        0
    } else {
        frac_part.parse().map_err(|_| bad())?
    };
    for _ in 0..(9 - frac_part.len()) {
        frac *= 10;
    }
    secs.checked_mul(NANOS_PER_SEC_I)
        .and_then(|ns| ns.checked_add(frac))
        .and_then(|ns| ns.checked_mul(sign))
        .ok_or_else(|| format!("timestamp '{raw}' overflows the nanosecond range"))
}

fn parse_iso8601(raw: &str) -> Result<TimestampNs, String> {
    let to_ns = |dt: chrono::DateTime<chrono::FixedOffset>| {
        dt.timestamp_nanos_opt()
            .ok_or_else(|| format!("timestamp '{raw}' overflows the nanosecond range"))
    };
    if let Ok(dt) = chrono::DateTime::parse_from_rfc3339(raw) {
        return to_ns(dt);
    }
    if let Ok(naive) = chrono::NaiveDateTime::parse_from_str(raw, "%Y-%m-%dT%H:%M:%S%.f") {
        return to_ns(naive.and_utc().fixed_offset());
    }
    if let Ok(date) = chrono::NaiveDate::parse_from_str(raw, "%Y-%m-%d") {
        let naive = date.and_hms_opt(0, 0, 0).unwrap();
        return to_ns(naive.and_utc().fixed_offset());
    }
    Err(format!("invalid ISO 8601 timestamp '{raw}'"))
}
