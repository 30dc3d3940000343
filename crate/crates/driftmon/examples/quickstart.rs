//! Generates a toy event stream, trains a monitor on its first 60 days,
//! replays the remaining 30 days through it, and leaves the generated
//! files in ./demo for the command-line walkthrough in the README.

use std::fs;
use std::path::Path;

use driftmon::harness::{DAY_NS, FeatureSpec, StreamSpec, ValueFamily, synth_stream};
use driftmon::ingest;
use driftmon::trainer::{HalfLifeSpec, TrainingConfig, train};

fn spec(days: usize, start_day: i64) -> StreamSpec {
    StreamSpec {
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
                    labels: (0..8).map(|j| format!("m{j}")).collect(),
                    weights: (0..8).map(|j| 1.0 / (j as f64 + 2.0)).collect(),
                },
                missing_rate: 0.0,
            },
        ],
        events_per_day: 200,
        days,
        start_ts_ns: start_day * DAY_NS,
        weekly_seasonality: 0.0,
    }
}

fn main() {
    let reference_spec = spec(60, 0);
    let live_spec = spec(30, 60);
    let schema = reference_spec.schema().unwrap();
    let reference = synth_stream(&reference_spec, 1).unwrap();
    let live = synth_stream(&live_spec, 2).unwrap();

    let demo = Path::new("demo");
    fs::create_dir_all(demo).unwrap();
    fs::write(
        demo.join("schema.json"),
        serde_json::to_string_pretty(&schema).unwrap(),
    )
    .unwrap();
    ingest::write_events(&demo.join("reference.csv"), &reference, &schema).unwrap();
    ingest::write_events(&demo.join("live.csv"), &live, &schema).unwrap();
    println!("wrote demo/schema.json, demo/reference.csv, demo/live.csv");

    let config = TrainingConfig {
        half_life: HalfLifeSpec::TimeAsEvents(7.0 * 86_400.0),
        ..TrainingConfig::default()
    };
    let mut monitor = train(&reference, &schema, &config).unwrap();
    println!(
        "trained {} features on {} events",
        monitor.features().len(),
        reference.len()
    );

    monitor
        .replay(&live, |report| {
            let flag = if report.family_alarm { "ALARM" } else { "ok" };
            let top = &report.ranking[0];
            let p = report
                .features
                .iter()
                .find(|f| &f.feature == top)
                .map_or(1.0, |f| f.p_value);
            println!("check {} {flag} top={top} p={p:.4}", report.at_iso);
        })
        .unwrap();
}
