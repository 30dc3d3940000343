//! Command-line front end: train a monitor, replay live events through it,
//! inject synthetic drifts, sweep configurations, and render signal heatmaps.
//!
//! Exit codes: 0 success, 2 replay finished with at least one family alarm,
//! 64 usage error, 65 bad data (malformed input, corrupt or mismatched
//! state), 74 I/O failure.

use std::path::PathBuf;
use std::process::exit;

use clap::{Args, Parser, Subcommand};

use driftmon::emh::HalfLife;
use driftmon::harness::{self, DriftSpec, DriftTransform, HarnessError, SweepGrid};
use driftmon::ingest::{self, IngestError, MalformedPolicy, ReadSummary, Schema};
use driftmon::layout::Layout;
use driftmon::monitor::{AlarmRule, MonitorError};
use driftmon::persist::{PersistError, load_state, save_state};
use driftmon::trainer::{HalfLifeSpec, TrainError, TrainingConfig, train};

#[derive(Parser)]
#[command(
    name = "driftmon",
    version = version_string(),
    about = "Constant-memory feature drift monitoring for event streams"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

fn version_string() -> &'static str {
    static VERSION: std::sync::OnceLock<String> = std::sync::OnceLock::new();
    VERSION.get_or_init(|| {
        format!(
            "{} (state format {})",
            env!("CARGO_PKG_VERSION"),
            driftmon::persist::STATE_FORMAT_VERSION
        )
    })
}

#[derive(Subcommand)]
enum Command {
    /// Train a monitor on a reference window and write its state file.
    Train(TrainArgs),
    /// Replay events through a trained monitor, reporting each check.
    Monitor(MonitorArgs),
    /// Inject a controlled drift into an event file.
    Inject(InjectArgs),
    /// Train and replay every combination of a configuration grid.
    Sweep(SweepArgs),
    /// Render per-feature drift signals over time as a TSV matrix.
    Heatmap(HeatmapArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Schema JSON file describing the event columns.
    #[arg(long)]
    schema: PathBuf,
    /// Reference events (.csv, .jsonl, or .ndjson), time-ordered.
    #[arg(long)]
    reference: PathBuf,
    /// Where to write the trained state file.
    #[arg(long)]
    out: PathBuf,
    /// Histogram bin budget per numeric feature.
    #[arg(long, default_value_t = 100)]
    bins: usize,
    /// Half-life: a time span like `1w` or `12h`, or an event count like `5000e`.
    #[arg(long, default_value = "1w")]
    half_life: String,
    /// Decay by elapsed time at run time instead of converting the half-life
    /// to an event count at the reference rate.
    #[arg(long)]
    time_decay: bool,
    /// Divergence for numeric features: jsd, ks, or wasserstein.
    #[arg(long, default_value = "wasserstein")]
    numeric_measure: String,
    /// Divergence for categorical features (only jsd is defined).
    #[arg(long, default_value = "jsd")]
    categorical_measure: String,
    /// Family-wise false alarm rate the sample count is sized for.
    #[arg(long, default_value_t = 0.01)]
    alpha_bar: f64,
    /// Probability of missing the null tail entirely.
    #[arg(long, default_value_t = 0.01)]
    gamma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Moving histogram start: full-reference or last-sample.
    #[arg(long, default_value = "full-reference")]
    seeding: String,
    /// Warmup before null sampling, in half-lives.
    #[arg(long, default_value_t = 3.0)]
    warmup_half_lives: f64,
    /// Cap on null divergence samples per feature.
    #[arg(long)]
    max_samples: Option<usize>,
    /// Out-of-order timestamps under time decay: reject or clamp.
    #[arg(long, default_value = "reject")]
    out_of_order: String,
    /// Default check cadence: a time span like `1d`, or an event count like `1000e`.
    #[arg(long, default_value = "1d")]
    cadence: String,
    /// Skip malformed records instead of aborting.
    #[arg(long)]
    skip_malformed: bool,
}

#[derive(Args)]
struct MonitorArgs {
    /// Trained state file.
    #[arg(long)]
    state: PathBuf,
    /// Events to replay (.csv, .jsonl, or .ndjson), time-ordered.
    #[arg(long)]
    events: PathBuf,
    /// Write the updated state here after the replay.
    #[arg(long)]
    out_state: Option<PathBuf>,
    /// Write every check report as one JSON line.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Override the family-wise alarm level for this run (not persisted).
    #[arg(long)]
    alpha: Option<f64>,
    /// Override the check cadence for this run (not persisted).
    #[arg(long)]
    cadence: Option<String>,
    /// Alarm with the classical step-down rule: stop at the first feature
    /// whose signal misses the level.
    #[arg(long)]
    classical_holm: bool,
    /// Skip malformed records instead of aborting.
    #[arg(long)]
    skip_malformed: bool,
    /// Fail unless the state was trained with this half-life.
    #[arg(long)]
    half_life: Option<String>,
    /// Interpret --half-life as run-time decay when checking it.
    #[arg(long)]
    time_decay: bool,
    /// Fail unless the state was trained with this bin budget.
    #[arg(long)]
    bins: Option<usize>,
    /// Fail unless the state was trained with this numeric measure.
    #[arg(long)]
    numeric_measure: Option<String>,
    /// Fail unless the state was trained with this categorical measure.
    #[arg(long)]
    categorical_measure: Option<String>,
    /// Fail unless the state was trained with this gamma.
    #[arg(long)]
    gamma: Option<f64>,
    /// Fail unless the state was trained with this seeding mode.
    #[arg(long)]
    seeding: Option<String>,
    /// Fail unless the state was trained with this seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct InjectArgs {
    /// Schema JSON file describing the event columns.
    #[arg(long)]
    schema: PathBuf,
    /// Input events (.csv, .jsonl, or .ndjson).
    #[arg(long = "in")]
    input: PathBuf,
    /// Where to write the drifted events.
    #[arg(long)]
    out: PathBuf,
    /// Feature to drift.
    #[arg(long)]
    feature: String,
    /// `scale:<factor>`, `missing-spike`, or `category-swap:<from>:<to>`.
    #[arg(long)]
    transform: String,
    /// Probability that an in-window event is drifted.
    #[arg(long, default_value_t = 0.1)]
    fraction: f64,
    /// Window start, in the schema's timestamp format (inclusive).
    #[arg(long)]
    start: String,
    /// Window end, in the schema's timestamp format (exclusive).
    #[arg(long)]
    end: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SweepArgs {
    /// Schema JSON file describing the event columns.
    #[arg(long)]
    schema: PathBuf,
    /// Events covering both the reference window and the replay stream.
    #[arg(long)]
    events: PathBuf,
    /// Timestamp splitting reference (before) from stream (at or after), in
    /// the schema's timestamp format.
    #[arg(long)]
    boundary: String,
    /// Comma-separated half-lives, e.g. `1d,1w,5000e`.
    #[arg(long, default_value = "1d,1w")]
    half_lives: String,
    /// Comma-separated bin budgets.
    #[arg(long, default_value = "50,100")]
    bins: String,
    /// Comma-separated numeric measures; categorical features keep jsd.
    #[arg(long, default_value = "jsd,ks,wasserstein")]
    measures: String,
    #[arg(long, default_value_t = 0.01)]
    alpha_bar: f64,
    #[arg(long, default_value_t = 0.01)]
    gamma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Check cadence during the replay.
    #[arg(long, default_value = "1d")]
    cadence: String,
    /// Cap on null divergence samples per feature.
    #[arg(long)]
    max_samples: Option<usize>,
    /// Write the TSV table here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Skip malformed records instead of aborting.
    #[arg(long)]
    skip_malformed: bool,
}

#[derive(Args)]
struct HeatmapArgs {
    /// Trained state file.
    #[arg(long)]
    state: PathBuf,
    /// Events to replay (.csv, .jsonl, or .ndjson), time-ordered.
    #[arg(long)]
    events: PathBuf,
    /// Emit -log10 of the normalized signal, so larger means more drifted.
    #[arg(long)]
    log: bool,
    /// Write the TSV matrix here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Skip malformed records instead of aborting.
    #[arg(long)]
    skip_malformed: bool,
}

enum CliError {
    Usage(String),
    Data(String),
    Io(String),
}

impl CliError {
    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Io(m) => m,
        }
    }

    fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 64,
            CliError::Data(_) => 65,
            CliError::Io(_) => 74,
        }
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        match e {
            IngestError::Io(_) => CliError::Io(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<PersistError> for CliError {
    fn from(e: PersistError) -> Self {
        match e {
            PersistError::Io(_) => CliError::Io(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<MonitorError> for CliError {
    fn from(e: MonitorError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Train(_) | HarnessError::Monitor(_) => CliError::Data(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            use clap::error::ErrorKind;
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 64,
            };
            let _ = err.print();
            exit(code);
        }
    };
    let result = match cli.command {
        Command::Train(args) => run_train(args),
        Command::Monitor(args) => run_monitor(args),
        Command::Inject(args) => run_inject(args),
        Command::Sweep(args) => run_sweep(args),
        Command::Heatmap(args) => run_heatmap(args),
    };
    match result {
        Ok(code) => exit(code),
        Err(err) => {
            eprintln!("error: {}", err.message());
            exit(err.exit_code());
        }
    }
}

fn malformed_policy(skip: bool) -> MalformedPolicy {
    if skip {
        MalformedPolicy::Skip
    } else {
        MalformedPolicy::Abort
    }
}

fn warn_read_summary(summary: &ReadSummary) {
    if summary.skipped > 0 {
        eprintln!("warning: skipped {} malformed records", summary.skipped);
    }
    if !summary.ignored_columns.is_empty() {
        eprintln!(
            "warning: ignored columns not in the schema: {}",
            summary.ignored_columns.join(", ")
        );
    }
}

fn write_text(out: Option<&PathBuf>, text: &str, what: &str) -> Result<(), CliError> {
    match out {
        Some(path) => {
            std::fs::write(path, text)?;
            println!("wrote {what} to {}", path.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn run_train(args: TrainArgs) -> Result<i32, CliError> {
    let schema = Schema::load(&args.schema)?;
    let (events, read) = ingest::read_events(
        &args.reference,
        &schema,
        malformed_policy(args.skip_malformed),
    )?;
    warn_read_summary(&read);
    let mut half_life: HalfLifeSpec = args.half_life.parse().map_err(CliError::Usage)?;
    if args.time_decay {
        half_life = half_life.with_time_decay();
    }
    let mut config = TrainingConfig {
        bins: args.bins,
        half_life,
        alpha_bar: args.alpha_bar,
        gamma: args.gamma,
        seed: args.seed,
        seeding: args.seeding.parse().map_err(CliError::Usage)?,
        warmup_half_lives: args.warmup_half_lives,
        max_samples: args.max_samples,
        out_of_order: args.out_of_order.parse().map_err(CliError::Usage)?,
        cadence: args.cadence.parse().map_err(CliError::Usage)?,
        ..Default::default()
    };
    config.measures.numeric = args.numeric_measure.parse().map_err(CliError::Usage)?;
    config.measures.categorical = args.categorical_measure.parse().map_err(CliError::Usage)?;
    let state = train(&events, &schema, &config)?;

    let snap = state.config();
    println!(
        "trained {} features on {} reference events",
        state.features().len(),
        snap.reference_events
    );
    println!(
        "reference span: {:.3} s, rate {:.6} events/s",
        snap.reference_span_secs, snap.events_per_sec
    );
    match snap.resolved_half_life {
        HalfLife::Events(n) => println!("half-life: {} ({n:.3} events)", snap.half_life),
        HalfLife::TimeSecs(s) => {
            println!("half-life: {} ({s:.3} s at run time)", snap.half_life)
        }
    }
    println!(
        "warmup: {} events ({} half-lives)",
        snap.warmup_events, snap.warmup_half_lives
    );
    println!(
        "null samples per feature: {} of {} required",
        snap.sample_count, snap.sample_count_required
    );
    if snap.samples_capped {
        eprintln!(
            "warning: null samples capped at {}; coverage requires {}",
            snap.sample_count, snap.sample_count_required
        );
    }
    for fs in state.features() {
        match &fs.layout {
            Layout::Numeric(l) => {
                if l.effective_bins() < snap.bins {
                    println!(
                        "feature {}: numeric, {} of {} bins (duplicate quantile edges collapsed)",
                        fs.name,
                        l.effective_bins(),
                        snap.bins
                    );
                } else {
                    println!("feature {}: numeric, {} bins", fs.name, l.effective_bins());
                }
            }
            Layout::Categorical(l) => {
                println!(
                    "feature {}: categorical, {} categories",
                    fs.name,
                    l.categories().len()
                );
            }
        }
    }
    save_state(&state, &args.out)?;
    let bytes = std::fs::metadata(&args.out)?.len();
    println!("state written to {} ({bytes} bytes)", args.out.display());
    Ok(0)
}

fn run_monitor(args: MonitorArgs) -> Result<i32, CliError> {
    let mut state = load_state(&args.state)?;
    let snap = state.config().clone();
    if let Some(raw) = &args.half_life {
        let mut want: HalfLifeSpec = raw.parse().map_err(CliError::Usage)?;
        if args.time_decay {
            want = want.with_time_decay();
        }
        if want != snap.half_life {
            return Err(CliError::Data(format!(
                "state was trained with half-life {}, not {want}",
                snap.half_life
            )));
        }
    }
    if let Some(bins) = args.bins
        && bins != snap.bins
    {
        return Err(CliError::Data(format!(
            "state was trained with {} bins, not {bins}",
            snap.bins
        )));
    }
    if let Some(raw) = &args.numeric_measure {
        let want = raw.parse().map_err(CliError::Usage)?;
        if snap.measures.numeric != want {
            return Err(CliError::Data(format!(
                "state was trained with numeric measure {}, not {want}",
                snap.measures.numeric
            )));
        }
    }
    if let Some(raw) = &args.categorical_measure {
        let want = raw.parse().map_err(CliError::Usage)?;
        if snap.measures.categorical != want {
            return Err(CliError::Data(format!(
                "state was trained with categorical measure {}, not {want}",
                snap.measures.categorical
            )));
        }
    }
    if let Some(gamma) = args.gamma
        && gamma != snap.gamma
    {
        return Err(CliError::Data(format!(
            "state was trained with gamma {}, not {gamma}",
            snap.gamma
        )));
    }
    if let Some(raw) = &args.seeding {
        let want = raw.parse().map_err(CliError::Usage)?;
        if snap.seeding != want {
            return Err(CliError::Data(format!(
                "state was trained with seeding {}, not {want}",
                snap.seeding
            )));
        }
    }
    if let Some(seed) = args.seed
        && seed != snap.seed
    {
        return Err(CliError::Data(format!(
            "state was trained with seed {}, not {seed}",
            snap.seed
        )));
    }
    if let Some(alpha) = args.alpha {
        state
            .set_alpha(alpha)
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    if let Some(raw) = &args.cadence {
        state.set_cadence(raw.parse().map_err(CliError::Usage)?);
    }
    if args.classical_holm {
        state.set_alarm_rule(AlarmRule::StepDown);
    }

    let schema = state.schema().clone();
    let (events, read) =
        ingest::read_events(&args.events, &schema, malformed_policy(args.skip_malformed))?;
    warn_read_summary(&read);
    let mut reports = Vec::new();
    let summary = state.replay(&events, |report| {
        if report.family_alarm {
            let alarmed: Vec<&str> = report
                .features
                .iter()
                .filter(|f| f.alarmed)
                .map(|f| f.feature.as_str())
                .collect();
            println!("check {} ALARM {}", report.at_iso, alarmed.join(","));
        } else {
            let top = &report.ranking[0];
            let p = report
                .features
                .iter()
                .find(|f| &f.feature == top)
                .map_or(1.0, |f| f.p_value);
            println!("check {} ok top={top} p={p:.6}", report.at_iso);
        }
        reports.push(report.clone());
    })?;
    println!(
        "replayed {} events, {} checks, {} family alarms",
        summary.events, summary.checks, summary.family_alarms
    );
    if let Some(path) = &args.report {
        let mut text = String::new();
        for report in &reports {
            text.push_str(
                &serde_json::to_string(report)
                    .map_err(|e| CliError::Data(format!("cannot serialize report: {e}")))?,
            );
            text.push('\n');
        }
        std::fs::write(path, text)?;
        println!(
            "wrote {} check reports to {}",
            reports.len(),
            path.display()
        );
    }
    if let Some(path) = &args.out_state {
        save_state(&state, path)?;
        println!("state written to {}", path.display());
    }
    Ok(if summary.family_alarms > 0 { 2 } else { 0 })
}

fn run_inject(args: InjectArgs) -> Result<i32, CliError> {
    let schema = Schema::load(&args.schema)?;
    let (mut events, read) = ingest::read_events(&args.input, &schema, MalformedPolicy::Abort)?;
    warn_read_summary(&read);
    let transform = parse_transform(&args.transform).map_err(CliError::Usage)?;
    let start_ns = ingest::parse_timestamp(&args.start, schema.timestamp_format)
        .map_err(|e| CliError::Usage(format!("--start: {e}")))?;
    let end_ns = ingest::parse_timestamp(&args.end, schema.timestamp_format)
        .map_err(|e| CliError::Usage(format!("--end: {e}")))?;
    let spec = DriftSpec {
        feature: args.feature.clone(),
        transform,
        fraction: args.fraction,
        start_ns,
        end_ns,
        seed: args.seed,
    };
    let changed = harness::inject(&mut events, &schema, &spec)?;
    ingest::write_events(&args.out, &events, &schema)?;
    println!(
        "changed {changed} values of '{}'; wrote {}",
        args.feature,
        args.out.display()
    );
    Ok(0)
}

fn parse_transform(raw: &str) -> Result<DriftTransform, String> {
    if raw == "missing-spike" {
        return Ok(DriftTransform::MissingSpike);
    }
    if let Some(factor) = raw.strip_prefix("scale:") {
        let factor: f64 = factor
            .parse()
            .map_err(|_| format!("invalid scale factor '{factor}'"))?;
        if !factor.is_finite() {
            return Err(format!("scale factor {factor} is not finite"));
        }
        return Ok(DriftTransform::ScaleFactor(factor));
    }
    if let Some(rest) = raw.strip_prefix("category-swap:") {
        let (from, to) = rest
            .split_once(':')
            .ok_or_else(|| "category-swap needs '<from>:<to>'".to_string())?;
        return Ok(DriftTransform::CategorySwap {
            from: from.to_owned(),
            to: to.to_owned(),
        });
    }
    Err(format!(
        "unknown transform '{raw}' (expected scale:<factor>, missing-spike, or category-swap:<from>:<to>)"
    ))
}

fn run_sweep(args: SweepArgs) -> Result<i32, CliError> {
    let schema = Schema::load(&args.schema)?;
    let (events, read) =
        ingest::read_events(&args.events, &schema, malformed_policy(args.skip_malformed))?;
    warn_read_summary(&read);
    let boundary = ingest::parse_timestamp(&args.boundary, schema.timestamp_format)
        .map_err(|e| CliError::Usage(format!("--boundary: {e}")))?;
    let mut reference = Vec::new();
    let mut stream = Vec::new();
    for event in events {
        if event.ts < boundary {
            reference.push(event);
        } else {
            stream.push(event);
        }
    }
    if reference.is_empty() || stream.is_empty() {
        return Err(CliError::Data(format!(
            "boundary leaves {} reference events and {} stream events; both sides must be non-empty",
            reference.len(),
            stream.len()
        )));
    }
    let grid = SweepGrid {
        half_lives: parse_list(&args.half_lives, "half-life")?,
        bins: parse_list(&args.bins, "bin count")?,
        measures: parse_list(&args.measures, "measure")?,
    };
    let config = TrainingConfig {
        alpha_bar: args.alpha_bar,
        gamma: args.gamma,
        seed: args.seed,
        max_samples: args.max_samples,
        cadence: args.cadence.parse().map_err(CliError::Usage)?,
        ..Default::default()
    };
    let cells = harness::sweep(&reference, &stream, &schema, &config, &grid)?;
    write_text(
        args.out.as_ref(),
        &harness::sweep_table_tsv(&cells),
        &format!("sweep table ({} cells)", cells.len()),
    )?;
    Ok(0)
}

fn parse_list<T: std::str::FromStr>(raw: &str, what: &str) -> Result<Vec<T>, CliError>
where
    T::Err: std::fmt::Display,
{
    raw.split(',')
        .map(|part| {
            part.trim()
                .parse()
                .map_err(|e| CliError::Usage(format!("invalid {what} '{part}': {e}")))
        })
        .collect()
}

fn run_heatmap(args: HeatmapArgs) -> Result<i32, CliError> {
    let mut state = load_state(&args.state)?;
    let schema = state.schema().clone();
    let (events, read) =
        ingest::read_events(&args.events, &schema, malformed_policy(args.skip_malformed))?;
    warn_read_summary(&read);
    let mut reports = Vec::new();
    state.replay(&events, |r| reports.push(r.clone()))?;
    write_text(
        args.out.as_ref(),
        &harness::heatmap_tsv(&reports, args.log),
        &format!("heatmap ({} checks)", reports.len()),
    )?;
    Ok(0)
}
