//! Streaming feature drift monitor.
//!
//! Watches every feature of an event stream for distribution shift against a
//! fixed reference window, in constant memory per feature. The moving picture
//! of each feature is an exponentially decayed histogram that forgets old
//! events at a configurable half-life; drift is scored as a divergence
//! between that histogram and the reference histogram, turned into an
//! empirical p-value against divergences observed inside the reference
//! itself, and alarmed through a Holm multiple-testing correction so the
//! family-wise false alarm rate stays at a chosen level regardless of how
//! many features are watched.
//!
//! The crate is organized as a pipeline:
//!
//! * [`ingest`] reads schema-described CSV or JSONL event files.
//! * [`layout`] fits per-feature bin layouts on reference data.
//! * [`emh`] maintains the decayed moving histograms.
//! * [`divergence`] scores binned distributions against each other.
//! * [`trainer`] builds a ready-to-run [`monitor::MonitorState`] from a
//!   reference window.
//! * [`monitor`] ingests live events and emits [`monitor::CheckReport`]s on a
//!   fixed cadence.
//! * [`persist`] saves and restores monitor state as checksummed text.
//! * [`harness`] generates synthetic streams, injects controlled drifts, and
//!   aggregates alarm metrics for configuration sweeps.

pub mod divergence;
mod duration;
pub mod emh;
pub mod event;
pub mod harness;
pub mod ingest;
pub mod layout;
pub mod monitor;
pub mod persist;
pub mod trainer;

pub use divergence::DivergenceMeasure;
pub use emh::{HalfLife, MovingHistogram, OutOfOrderPolicy};
pub use event::{Event, TimestampNs, Value};
pub use ingest::Schema;
pub use layout::{FeatureKind, Layout};
pub use monitor::{Cadence, CheckReport, MonitorState};
pub use persist::{load_state, save_state};
pub use trainer::{FeatureState, SeedingMode, TrainingConfig, train};
