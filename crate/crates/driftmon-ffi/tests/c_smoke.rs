//! Builds a small C client against the generated header and shared
//! library, then runs it through the full open/ingest/check/save cycle.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use driftmon::harness::{FeatureSpec, StreamSpec, ValueFamily, synth_stream};
use driftmon::persist::save_state;
use driftmon::trainer::{HalfLifeSpec, TrainingConfig, train};

const SMOKE_C: &str = r#"
#include <inttypes.h>
#include <stdio.h>
#include <string.h>

#include "driftmon.h"

static int expect(DmStatus got, DmStatus want, const char *what) {
    if (got != want) {
        fprintf(stderr, "%s: status %d (want %d): %s\n", what, (int)got,
                (int)want, dm_last_error_message());
        return 1;
    }
    return 0;
}

int main(int argc, char **argv) {
    if (argc != 3) {
        fprintf(stderr, "usage: %s STATE_IN STATE_OUT\n", argv[0]);
        return 100;
    }
    printf("version=%s format=%s\n", dm_version(), dm_state_format_version());

    DmMonitor *monitor = NULL;
    if (expect(dm_monitor_open(argv[1], &monitor), DM_STATUS_OK, "open"))
        return 1;

    uintptr_t features = 0;
    if (expect(dm_monitor_feature_count(monitor, &features), DM_STATUS_OK,
               "feature_count"))
        return 2;
    printf("features=%" PRIuPTR "\n", features);

    const int64_t base_secs = INT64_C(30) * 86400;
    char line[256];
    for (int k = 0; k < 50; k++) {
        snprintf(line, sizeof line,
                 "{\"ts\": %" PRId64 ", \"amount\": %d.5, \"merchant\": \"m%d\"}",
                 base_secs + k * INT64_C(60), 20 + k, k % 6);
        if (expect(dm_monitor_ingest_json(monitor, line), DM_STATUS_OK,
                   "ingest"))
            return 3;
    }
    if (expect(dm_monitor_ingest_json(monitor, "not json"), DM_STATUS_PARSE,
               "garbage line"))
        return 4;
    if (expect(dm_monitor_ingest_json(
                   monitor, "{\"ts\": 1, \"amount\": 5.0, \"merchant\": \"m0\"}"),
               DM_STATUS_OUT_OF_ORDER, "stale event"))
        return 5;

    char *report = NULL;
    int64_t at_ns = (base_secs + 3600) * INT64_C(1000000000);
    if (expect(dm_monitor_check_json(monitor, at_ns, &report), DM_STATUS_OK,
               "check"))
        return 6;
    if (strstr(report, "\"family_alarm\"") == NULL ||
        strstr(report, "\"amount\"") == NULL) {
        fprintf(stderr, "report missing expected fields: %s\n", report);
        return 7;
    }
    printf("report_bytes=%zu\n", strlen(report));
    dm_string_free(report);

    if (expect(dm_monitor_save(monitor, argv[2]), DM_STATUS_OK, "save"))
        return 8;
    dm_monitor_close(monitor);

    DmMonitor *reopened = NULL;
    if (expect(dm_monitor_open(argv[2], &reopened), DM_STATUS_OK, "reopen"))
        return 9;
    dm_monitor_close(reopened);

    printf("smoke ok\n");
    return 0;
}
"#;

fn trained_state_file(dir: &Path) -> PathBuf {
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

fn shared_library() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    let deps = exe.parent().unwrap();
    let debug = deps.parent().unwrap();
    for dir in [debug, deps] {
        let candidate = dir.join("libdriftmon_ffi.so");
        if candidate.exists() {
            return candidate;
        }
    }
    let mut hashed: Vec<PathBuf> = fs::read_dir(deps)
        .unwrap()
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("libdriftmon_ffi") && n.ends_with(".so"))
        })
        .collect();
    hashed.sort_by_key(|p| fs::metadata(p).and_then(|m| m.modified()).ok());
    hashed.pop().unwrap_or_else(|| {
        panic!(
            "no libdriftmon_ffi shared library under {}",
            debug.display()
        )
    })
}

fn include_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include")
}

#[test]
fn header_declares_the_full_surface() {
    let header = fs::read_to_string(include_dir().join("driftmon.h")).unwrap();
    assert!(header.contains("#ifndef DRIFTMON_H"));
    for symbol in [
        "dm_version",
        "dm_state_format_version",
        "dm_last_error_message",
        "dm_monitor_open",
        "dm_monitor_close",
        "dm_monitor_feature_count",
        "dm_monitor_ingest_json",
        "dm_monitor_check_json",
        "dm_monitor_save",
        "dm_string_free",
        "DM_STATUS_OK",
        "DM_STATUS_OUT_OF_ORDER",
    ] {
        assert!(header.contains(symbol), "header is missing {symbol}");
    }
}

#[test]
fn c_client_builds_links_and_runs() {
    let dir = tempfile::tempdir().unwrap();
    let state_path = trained_state_file(dir.path());
    let out_path = dir.path().join("updated.dm");

    let lib_dir = dir.path().join("lib");
    fs::create_dir(&lib_dir).unwrap();
    fs::copy(shared_library(), lib_dir.join("libdriftmon_ffi.so")).unwrap();

    let c_path = dir.path().join("smoke.c");
    fs::write(&c_path, SMOKE_C).unwrap();
    let bin_path = dir.path().join("smoke");

    let compile = Command::new("cc")
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Wextra")
        .arg("-Werror")
        .arg(&c_path)
        .arg("-I")
        .arg(include_dir())
        .arg("-L")
        .arg(&lib_dir)
        .arg("-ldriftmon_ffi")
        .arg(format!("-Wl,-rpath,{}", lib_dir.display()))
        .arg("-o")
        .arg(&bin_path)
        .output()
        .expect("cc not runnable");
    assert!(
        compile.status.success(),
        "compile failed:\n{}",
        String::from_utf8_lossy(&compile.stderr)
    );

    let run = Command::new(&bin_path)
        .arg(&state_path)
        .arg(&out_path)
        .env("LD_LIBRARY_PATH", &lib_dir)
        .output()
        .unwrap();
    let stdout = String::from_utf8_lossy(&run.stdout);
    assert!(
        run.status.success(),
        "smoke binary failed ({:?}):\nstdout: {stdout}\nstderr: {}",
        run.status.code(),
        String::from_utf8_lossy(&run.stderr)
    );
    assert!(stdout.contains("features=2"), "stdout: {stdout}");
    assert!(stdout.contains("report_bytes="), "stdout: {stdout}");
    assert!(stdout.contains("smoke ok"), "stdout: {stdout}");
    assert!(out_path.exists());
}
