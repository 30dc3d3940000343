//! Event and value types shared across the pipeline.

use serde::{Deserialize, Serialize};

/// Timestamp as nanoseconds since the Unix epoch, UTC.
///
/// The `i64` range covers years 1677 through 2262, which is ample for event
/// streams; readers reject timestamps outside it.
pub type TimestampNs = i64;

/// A single observed feature value.
///
/// `Missing` covers absent fields, configured null tokens, and values that
/// failed to parse. Keeping missingness as a first-class value (rather than
/// dropping the event) lets the monitor track missing-rate shifts like any
/// other distribution change.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Value {
    /// Numeric observation. May be NaN or infinite; bin layouts place
    /// non-finite numbers in their catch-all bins.
    Num(f64),
    /// Categorical observation.
    Cat(String),
    /// No observation.
    Missing,
}

impl Value {
    /// Returns the numeric payload, if any.
    pub fn as_num(&self) -> Option<f64> {
        match self {
            Value::Num(x) => Some(*x),
            _ => None,
        }
    }

    /// Returns the categorical payload, if any.
    pub fn as_cat(&self) -> Option<&str> {
        match self {
            Value::Cat(s) => Some(s),
            _ => None,
        }
    }

    pub fn is_missing(&self) -> bool {
        matches!(self, Value::Missing)
    }
}

/// One event: a timestamp plus one value per schema feature, in schema order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub ts: TimestampNs,
    pub values: Vec<Value>,
}

impl Event {
    pub fn new(ts: TimestampNs, values: Vec<Value>) -> Self {
        Event { ts, values }
    }
}
