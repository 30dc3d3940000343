//! C ABI for the driftmon monitoring engine.
//!
//! The surface is deliberately small: open a trained state file, feed it
//! events as JSON lines, run checks on demand, and save the updated state
//! back to disk. Every function returns a [`DmStatus`]; on any non-OK
//! status a human-readable description is available from
//! [`dm_last_error_message`] until the next call on the same thread.
//!
//! Handles returned by `dm_monitor_open` are owned by the caller and must
//! be released with `dm_monitor_close`. Strings returned through output
//! parameters are owned by the caller and must be released with
//! `dm_string_free`. No function is safe to call with a handle that was
//! already closed.

use std::cell::RefCell;
use std::ffi::{CStr, CString, c_char};
use std::panic::{AssertUnwindSafe, catch_unwind};
use std::path::Path;
use std::sync::OnceLock;

use driftmon::emh::EmhError;
use driftmon::ingest::{IngestError, parse_json_event};
use driftmon::monitor::{MonitorError, MonitorState};
use driftmon::persist::{PersistError, STATE_FORMAT_VERSION, load_state, save_state};

/// Outcome of a driftmon call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DmStatus {
    /// The call succeeded.
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// Reading or writing a file failed.
    Io = 3,
    /// A state file failed its checksum or consistency checks.
    Corrupt = 4,
    /// A state file was written by an unsupported format version.
    VersionMismatch = 5,
    /// An event record could not be parsed.
    Parse = 6,
    /// An event timestamp precedes data the monitor has already seen.
    OutOfOrder = 7,
    /// An argument was structurally valid but semantically rejected.
    Invalid = 8,
    /// An unexpected internal failure; details in the last error message.
    Internal = 9,
}

/// Opaque handle to a loaded monitor.
pub struct DmMonitor {
    inner: MonitorState,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(message: &str) {
    let sanitized = message.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn fail(status: DmStatus, message: &str) -> DmStatus {
    set_last_error(message);
    status
}

fn persist_status(e: &PersistError) -> DmStatus {
    match e {
        PersistError::Io(_) => DmStatus::Io,
        PersistError::VersionMismatch { .. } => DmStatus::VersionMismatch,
        PersistError::ChecksumMismatch { .. }
        | PersistError::Corrupt(_)
        | PersistError::NonFinite { .. } => DmStatus::Corrupt,
    }
}

fn monitor_status(e: &MonitorError) -> DmStatus {
    match e {
        MonitorError::Emh(EmhError::OutOfOrderEvent { .. }) => DmStatus::OutOfOrder,
        MonitorError::SchemaMismatch { .. } | MonitorError::InvalidAlpha(_) => DmStatus::Invalid,
        _ => DmStatus::Internal,
    }
}

fn ingest_status(e: &IngestError) -> DmStatus {
    match e {
        IngestError::Io(_) => DmStatus::Io,
        IngestError::MalformedRecord { .. } => DmStatus::Parse,
        _ => DmStatus::Invalid,
    }
}

fn guarded(f: impl FnOnce() -> DmStatus) -> DmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => fail(DmStatus::Internal, "internal panic"),
    }
}

/// Reads a UTF-8 path argument, or reports why it cannot be used.
///
/// # Safety
/// `ptr` must be null or a valid NUL-terminated string.
unsafe fn read_str<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, DmStatus> {
    if ptr.is_null() {
        return Err(fail(DmStatus::NullArgument, &format!("{what} is null")));
    }
    unsafe { CStr::from_ptr(ptr) }
        .to_str()
        .map_err(|_| fail(DmStatus::InvalidUtf8, &format!("{what} is not valid UTF-8")))
}

/// Returns the library version as a static NUL-terminated string.
#[unsafe(no_mangle)]
pub extern "C" fn dm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Returns the state file format version this library reads and writes,
/// as a static NUL-terminated string.
#[unsafe(no_mangle)]
pub extern "C" fn dm_state_format_version() -> *const c_char {
    static VERSION: OnceLock<CString> = OnceLock::new();
    VERSION
        .get_or_init(|| CString::new(STATE_FORMAT_VERSION).unwrap())
        .as_ptr()
}

/// Returns a description of the most recent failure on this thread. The
/// pointer stays valid until the next driftmon call on the same thread and
/// must not be freed.
#[unsafe(no_mangle)]
pub extern "C" fn dm_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Loads a trained monitor from `path` into `*out`.
///
/// # Safety
/// `path` must be a valid NUL-terminated string and `out` a valid pointer.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn dm_monitor_open(
    path: *const c_char,
    out: *mut *mut DmMonitor,
) -> DmStatus {
    guarded(|| {
        if out.is_null() {
            return fail(DmStatus::NullArgument, "out handle is null");
        }
        let path = match unsafe { read_str(path, "path") } {
            Ok(p) => p,
            Err(status) => return status,
        };
        match load_state(Path::new(path)) {
            Ok(state) => {
                let handle = Box::new(DmMonitor { inner: state });
                unsafe { *out = Box::into_raw(handle) };
                DmStatus::Ok
            }
            Err(e) => fail(persist_status(&e), &e.to_string()),
        }
    })
}

/// Releases a monitor handle. Passing null is a no-op.
///
/// # Safety
/// `monitor` must be null or a handle from `dm_monitor_open` that has not
/// been closed yet.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn dm_monitor_close(monitor: *mut DmMonitor) {
    if !monitor.is_null() {
        drop(unsafe { Box::from_raw(monitor) });
    }
}

/// Writes the number of monitored features to `*out_count`.
///
/// # Safety
/// `monitor` must be an open handle and `out_count` a valid pointer.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn dm_monitor_feature_count(
    monitor: *const DmMonitor,
    out_count: *mut usize,
) -> DmStatus {
    guarded(|| {
        if monitor.is_null() || out_count.is_null() {
            return fail(DmStatus::NullArgument, "monitor and out_count are required");
        }
        unsafe { *out_count = (*monitor).inner.features().len() };
        DmStatus::Ok
    })
}

/// Ingests one event given as a JSON object on a single line. The object
/// must carry the schema's timestamp field; feature fields that are absent
/// or null count as missing values.
///
/// # Safety
/// `monitor` must be an open handle and `event_json` a valid
/// NUL-terminated string.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn dm_monitor_ingest_json(
    monitor: *mut DmMonitor,
    event_json: *const c_char,
) -> DmStatus {
    guarded(|| {
        if monitor.is_null() {
            return fail(DmStatus::NullArgument, "monitor is null");
        }
        let text = match unsafe { read_str(event_json, "event_json") } {
            Ok(t) => t,
            Err(status) => return status,
        };
        let state = unsafe { &mut (*monitor).inner };
        let event = match parse_json_event(text, state.schema()) {
            Ok(event) => event,
            Err(e) => return fail(ingest_status(&e), &e.to_string()),
        };
        match state.ingest_event(&event) {
            Ok(()) => DmStatus::Ok,
            Err(e) => fail(monitor_status(&e), &e.to_string()),
        }
    })
}

/// Runs a check at `at_ns` (nanoseconds since the Unix epoch) and stores
/// the full check report as a JSON string in `*out_json`. The caller owns
/// the string and must release it with `dm_string_free`.
///
/// # Safety
/// `monitor` must be an open handle and `out_json` a valid pointer.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn dm_monitor_check_json(
    monitor: *mut DmMonitor,
    at_ns: i64,
    out_json: *mut *mut c_char,
) -> DmStatus {
    guarded(|| {
        if monitor.is_null() || out_json.is_null() {
            return fail(DmStatus::NullArgument, "monitor and out_json are required");
        }
        let state = unsafe { &mut (*monitor).inner };
        let report = match state.check_at(at_ns) {
            Ok(report) => report,
            Err(e) => return fail(monitor_status(&e), &e.to_string()),
        };
        let text = match serde_json::to_string(&report) {
            Ok(text) => text,
            Err(e) => return fail(DmStatus::Internal, &e.to_string()),
        };
        match CString::new(text) {
            Ok(c) => {
                unsafe { *out_json = c.into_raw() };
                DmStatus::Ok
            }
            Err(e) => fail(DmStatus::Internal, &e.to_string()),
        }
    })
}

/// Saves the monitor's current state to `path`, replacing any existing
/// file atomically.
///
/// # Safety
/// `monitor` must be an open handle and `path` a valid NUL-terminated
/// string.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn dm_monitor_save(
    monitor: *const DmMonitor,
    path: *const c_char,
) -> DmStatus {
    guarded(|| {
        if monitor.is_null() {
            return fail(DmStatus::NullArgument, "monitor is null");
        }
        let path = match unsafe { read_str(path, "path") } {
            Ok(p) => p,
            Err(status) => return status,
        };
        match save_state(unsafe { &(*monitor).inner }, Path::new(path)) {
            Ok(()) => DmStatus::Ok,
            Err(e) => fail(persist_status(&e), &e.to_string()),
        }
    })
}

/// Releases a string returned by this library. Passing null is a no-op.
///
/// # Safety
/// `s` must be null or a string given out by this library that has not
/// been freed yet.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn dm_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use driftmon::harness::{DAY_NS, FeatureSpec, StreamSpec, ValueFamily, synth_stream};
    use driftmon::trainer::{HalfLifeSpec, TrainingConfig, train};
    use std::ffi::CString;
    use std::ptr;

    fn trained_state_file(dir: &Path) -> std::path::PathBuf {
        let spec = StreamSpec {
            features: vec![
                FeatureSpec {
                    name: "amount".into(),
                    family: ValueFamily::LogNormal {
                        mu: 3.0,
                        sigma: 1.0,
                    },
                    missing_rate: 0.0,
                },
                FeatureSpec {
                    name: "merchant".into(),
                    family: ValueFamily::Categorical {
                        labels: (0..6).map(|j| format!("m{j}")).collect(),
                        weights: (0..6).map(|j| 1.0 / (j as f64 + 1.0)).collect(),
                    },
                    missing_rate: 0.0,
                },
            ],
            events_per_day: 100,
            days: 30,
            start_ts_ns: 0,
            weekly_seasonality: 0.0,
        };
        let schema = spec.schema().unwrap();
        let events = synth_stream(&spec, 42).unwrap();
        let config = TrainingConfig {
            half_life: HalfLifeSpec::TimeDecay(3.0 * 86_400.0),
            ..Default::default()
        };
        let state = train(&events, &schema, &config).unwrap();
        let path = dir.join("state.dm");
        save_state(&state, &path).unwrap();
        path
    }

    fn last_error() -> String {
        unsafe { CStr::from_ptr(dm_last_error_message()) }
            .to_string_lossy()
            .into_owned()
    }

    #[test]
    fn version_strings_are_real() {
        let version = unsafe { CStr::from_ptr(dm_version()) }.to_str().unwrap();
        assert_eq!(version, env!("CARGO_PKG_VERSION"));
        let format = unsafe { CStr::from_ptr(dm_state_format_version()) }
            .to_str()
            .unwrap();
        assert_eq!(format, STATE_FORMAT_VERSION);
    }

    #[test]
    fn null_arguments_are_rejected_not_dereferenced() {
        let mut handle: *mut DmMonitor = ptr::null_mut();
        assert_eq!(
            unsafe { dm_monitor_open(ptr::null(), &mut handle) },
            DmStatus::NullArgument
        );
        let path = CString::new("/nonexistent").unwrap();
        assert_eq!(
            unsafe { dm_monitor_open(path.as_ptr(), ptr::null_mut()) },
            DmStatus::NullArgument
        );
        assert_eq!(
            unsafe { dm_monitor_ingest_json(ptr::null_mut(), path.as_ptr()) },
            DmStatus::NullArgument
        );
        assert!(!last_error().is_empty());
        unsafe { dm_monitor_close(ptr::null_mut()) };
        unsafe { dm_string_free(ptr::null_mut()) };
    }

    #[test]
    fn opening_a_missing_file_reports_io() {
        let path = CString::new("/definitely/not/there.dm").unwrap();
        let mut handle: *mut DmMonitor = ptr::null_mut();
        let status = unsafe { dm_monitor_open(path.as_ptr(), &mut handle) };
        assert_eq!(status, DmStatus::Io);
        assert!(handle.is_null());
        assert!(last_error().contains("there.dm") || !last_error().is_empty());
    }

    #[test]
    fn full_cycle_through_the_c_surface() {
        let dir = tempfile::tempdir().unwrap();
        let state_path = trained_state_file(dir.path());

        let c_path = CString::new(state_path.to_str().unwrap()).unwrap();
        let mut handle: *mut DmMonitor = ptr::null_mut();
        assert_eq!(
            unsafe { dm_monitor_open(c_path.as_ptr(), &mut handle) },
            DmStatus::Ok
        );
        assert!(!handle.is_null());

        let mut count = 0usize;
        assert_eq!(
            unsafe { dm_monitor_feature_count(handle, &mut count) },
            DmStatus::Ok
        );
        assert_eq!(count, 2);

        let base_secs = 30 * (DAY_NS / 1_000_000_000);
        for k in 0..50i64 {
            let line = CString::new(format!(
                r#"{{"ts": {}, "amount": {}, "merchant": "m{}"}}"#,
                base_secs + k * 60,
                20.0 + k as f64,
                k % 6
            ))
            .unwrap();
            assert_eq!(
                unsafe { dm_monitor_ingest_json(handle, line.as_ptr()) },
                DmStatus::Ok
            );
        }

        let garbage = CString::new("not json").unwrap();
        assert_eq!(
            unsafe { dm_monitor_ingest_json(handle, garbage.as_ptr()) },
            DmStatus::Parse
        );

        let stale = CString::new(r#"{"ts": 1, "amount": 5.0, "merchant": "m0"}"#).unwrap();
        assert_eq!(
            unsafe { dm_monitor_ingest_json(handle, stale.as_ptr()) },
            DmStatus::OutOfOrder
        );

        let mut report: *mut c_char = ptr::null_mut();
        let at_ns = (base_secs + 3600) * 1_000_000_000;
        assert_eq!(
            unsafe { dm_monitor_check_json(handle, at_ns, &mut report) },
            DmStatus::Ok
        );
        let text = unsafe { CStr::from_ptr(report) }.to_str().unwrap();
        assert!(text.contains("\"family_alarm\""));
        assert!(text.contains("\"amount\""));
        unsafe { dm_string_free(report) };

        let out_path = dir.path().join("updated.dm");
        let c_out = CString::new(out_path.to_str().unwrap()).unwrap();
        assert_eq!(
            unsafe { dm_monitor_save(handle, c_out.as_ptr()) },
            DmStatus::Ok
        );
        unsafe { dm_monitor_close(handle) };

        let reloaded = load_state(&out_path).unwrap();
        assert_eq!(reloaded.features().len(), 2);
        assert!(reloaded.last_check().is_some());
    }
}
