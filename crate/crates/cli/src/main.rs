use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use transit_sense::clustering::{run_baseline, run_spectral, BaselineConfig, MovementConfig};
use transit_sense::dsg::{
    read_gate_csv, write_features_csv, BinCount, ModelHierarchy, FEATURE_NAMES,
};
use transit_sense::eval::scenarios::{
    clean_scenario, dsg_lines, incident_experiment, incident_scenario, movement_experiment,
    noisy_scenario, simulation_baseline_config, simulation_movement_config,
};
use transit_sense::eval::{
    predict_line, run_dsg_experiment, run_movement_experiment, run_robustness_sweep, stream_run,
    write_robustness_csv, write_stream_flags_csv, write_stream_rows_csv, DsgExperiment, EvalReport,
    MovementExperiment, StreamConfig, StreamDsg,
};
use transit_sense::sim::ScenarioConfig;
use transit_sense::trace::{
    read_trace, vectorize_journeys, LineTopology, Seconds, DEFAULT_GAP_THRESHOLD,
};

#[derive(Parser, Debug)]
#[command(
    name = "transit-sense",
    version,
    about = "Train movement and demand-supply-gap inference from wifi traces"
)]
struct Cli {
    /// JSON configuration for the subcommand; missing fields keep their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

/// Where the station sequence of a trace comes from.
#[derive(clap::Args, Debug)]
struct LineArgs {
    /// Trace file: CSV with a device,station,timestamp header, or JSON Lines.
    #[arg(long)]
    trace: PathBuf,
    /// Line topology as JSON, as written by `simulate`.
    #[arg(long, conflicts_with = "stations")]
    topology: Option<PathBuf>,
    /// Build a linear topology with stations 0..N instead.
    #[arg(long)]
    stations: Option<u32>,
    #[arg(long, default_value = "L1")]
    line: String,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum Method {
    Baseline,
    Spectral,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum Scenario {
    Clean,
    Noisy,
    Incident,
    Dsg,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate one line and write its trace, true timetable, DSG labels and gate counts.
    Simulate {
        /// Preset used when no --config is given; `dsg` is the first capacity-constrained line.
        #[arg(long, value_enum, default_value = "noisy")]
        scenario: Scenario,
    },
    /// Cluster journeys into train trips.
    Cluster {
        #[arg(long, value_enum, default_value = "spectral")]
        method: Method,
        #[command(flatten)]
        line: LineArgs,
    },
    /// Estimate the timetable and headways of a trace.
    Timetable {
        #[command(flatten)]
        line: LineArgs,
    },
    /// Train the DSG model hierarchy on simulated days.
    DsgTrain,
    /// Score every estimated departure of a trace with a trained hierarchy.
    DsgPredict {
        #[arg(long)]
        model: PathBuf,
        /// Fare-gate entries per station and 10-minute bin.
        #[arg(long)]
        gates: PathBuf,
        #[command(flatten)]
        line: LineArgs,
    },
    /// Run an experiment on simulated data and score it against the truth.
    Evaluate {
        #[arg(long, value_enum, default_value = "noisy")]
        scenario: Scenario,
        /// Number of consecutive seeds, starting at --seed.
        #[arg(long, default_value_t = 5)]
        seeds: u64,
    },
    /// Precision and recall of the DSG hierarchy under device down-sampling.
    Robustness {
        #[arg(long, default_value_t = 0.1)]
        step: f64,
    },
    /// Replay a trace in mini-batches.
    Stream {
        #[command(flatten)]
        line: LineArgs,
        /// Batch length in seconds; 0 replays the whole file as one batch.
        #[arg(long)]
        batch_seconds: Option<Seconds>,
        #[arg(long)]
        lateness: Option<Seconds>,
        #[arg(long, requires = "gates")]
        model: Option<PathBuf>,
        #[arg(long, requires = "model")]
        gates: Option<PathBuf>,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
struct ClusterConfig {
    movement: MovementConfig,
    baseline: BaselineConfig,
    gap_threshold: Seconds,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            movement: simulation_movement_config(),
            baseline: simulation_baseline_config(),
            gap_threshold: DEFAULT_GAP_THRESHOLD,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
struct PredictConfig {
    movement: MovementConfig,
    features: transit_sense::dsg::FeatureConfig,
    gap_threshold: Seconds,
    alpha: f64,
}

impl Default for PredictConfig {
    fn default() -> Self {
        let e = DsgExperiment::default();
        PredictConfig {
            movement: e.movement,
            features: e.features,
            gap_threshold: e.gap_threshold,
            alpha: e.alpha,
        }
    }
}

fn load_config<T: DeserializeOwned>(path: Option<&Path>, default: T) -> Result<T> {
    match path {
        None => Ok(default),
        Some(p) => {
            let f = File::open(p).with_context(|| format!("opening config {}", p.display()))?;
            serde_json::from_reader(BufReader::new(f))
                .with_context(|| format!("parsing config {}", p.display()))
        }
    }
}

fn create(out: &Path, name: &str) -> Result<File> {
    let p = out.join(name);
    File::create(&p).with_context(|| format!("creating {}", p.display()))
}

fn write_json<T: Serialize>(out: &Path, name: &str, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(create(out, name)?, value)?;
    Ok(())
}

fn topology(args: &LineArgs) -> Result<LineTopology> {
    match (&args.topology, args.stations) {
        (Some(p), _) => {
            let f = File::open(p).with_context(|| format!("opening topology {}", p.display()))?;
            let t: LineTopology = serde_json::from_reader(BufReader::new(f))?;
            Ok(LineTopology::new(t.line_id, t.stations, t.direction)?)
        }
        (None, Some(n)) => Ok(LineTopology::linear(args.line.clone(), n)?),
        (None, None) => bail!("either --topology or --stations is required"),
    }
}

fn read_gates(path: &Path) -> Result<Vec<BinCount>> {
    let f = File::open(path).with_context(|| format!("opening gate counts {}", path.display()))?;
    Ok(read_gate_csv(BufReader::new(f))?)
}

fn read_model(path: &Path) -> Result<ModelHierarchy> {
    let s = std::fs::read_to_string(path)
        .with_context(|| format!("reading model {}", path.display()))?;
    Ok(ModelHierarchy::from_json(&s)?)
}

fn simulate(cli: &Cli, scenario: Scenario) -> Result<Value> {
    let preset = match scenario {
        Scenario::Clean => clean_scenario(),
        Scenario::Noisy => noisy_scenario(),
        Scenario::Incident => incident_scenario(),
        Scenario::Dsg => dsg_lines().swap_remove(0),
    };
    let cfg: ScenarioConfig = load_config(cli.config.as_deref(), preset)?;
    let seed = cli.seed.unwrap_or(0);
    let run = cfg.run(seed)?;
    run.write_outputs(&cli.out)?;
    write_json(&cli.out, "topology.json", &run.topology)?;
    let boarded = run
        .outcome
        .commuters
        .iter()
        .filter(|c| c.boarded_train.is_some())
        .count();
    Ok(json!({
        "line": run.topology.line_id,
        "seed": seed,
        "records": run.observation.records.len(),
        "devices": run.observation.owners.len(),
        "commuters": run.outcome.commuters.len(),
        "boarded": boarded,
        "trains": run.timetable.trains.len(),
        "positive_windows": run.outcome.windows.iter().filter(|w| w.positive).count(),
    }))
}

fn cluster(cli: &Cli, method: Method, line: &LineArgs, headways: bool) -> Result<Value> {
    let mut cfg = load_config(cli.config.as_deref(), ClusterConfig::default())?;
    if let Some(s) = cli.seed {
        cfg.movement.seed = s;
    }
    let topo = topology(line)?;
    let v = vectorize_journeys(
        read_trace(&line.trace)
            .with_context(|| format!("reading trace {}", line.trace.display()))?,
        &topo,
        cfg.gap_threshold,
    )?;
    let timetable = match method {
        Method::Spectral => run_spectral(&v.journeys, &topo, &cfg.movement)?.timetable,
        Method::Baseline => run_baseline(&v.journeys, &topo, &cfg.baseline)?,
    };
    let mut w = csv::Writer::from_writer(create(&cli.out, "clusters.csv")?);
    w.write_record(["device", "journey", "train"])?;
    let mut clustered = 0;
    for t in &timetable.trips {
        for &m in &t.members {
            let j = &v.journeys[m];
            w.write_record([j.device.0.as_str(), &j.journey_seq.to_string(), &t.train.0])?;
            clustered += 1;
        }
    }
    w.flush()?;
    timetable.write_csv(create(&cli.out, "timetable.csv")?)?;
    if headways {
        timetable.write_headways_csv(create(&cli.out, "headways.csv")?)?;
    }
    Ok(json!({
        "method": format!("{method:?}").to_lowercase(),
        "journeys": v.journeys.len(),
        "rejected_records": v.rejected,
        "clustered_journeys": clustered,
        "trains": timetable.len(),
    }))
}

fn dsg_train(cli: &Cli) -> Result<Value> {
    let mut exp = load_config(cli.config.as_deref(), DsgExperiment::default())?;
    if let Some(s) = cli.seed {
        exp.train.seed = s;
    }
    let (h, report) = run_dsg_experiment(&exp)?;
    std::fs::write(cli.out.join("model.json"), h.to_json()?)?;
    let mut w = csv::Writer::from_writer(create(&cli.out, "windows.csv")?);
    w.write_record([
        "line",
        "station",
        "window_start",
        "truth",
        "predicted",
        "true_pct",
        "est_pct",
    ])?;
    for s in &report.station.windows {
        w.write_record([
            s.key.line.clone(),
            s.key.station.0.to_string(),
            s.window_start.to_string(),
            (s.truth as u8).to_string(),
            (s.predicted as u8).to_string(),
            format!("{:.2}", s.true_pct),
            format!("{:.2}", s.est_pct),
        ])?;
    }
    w.flush()?;
    let level = |l: &transit_sense::eval::LevelScore| {
        json!({
            "precision": l.report.precision,
            "recall": l.report.recall,
            "accuracy": l.report.accuracy,
            "f1": l.report.f1,
            "median_mae": l.median_mae,
            "station_mae": l.station_mae,
        })
    };
    Ok(json!({
        "train_samples": report.train_samples,
        "train_positives": report.train_positives,
        "line_models": report.line_models,
        "station_models": report.station_models,
        "selected_features": report.selected_features,
        "network": level(&report.network),
        "line": level(&report.line),
        "station": level(&report.station),
    }))
}

fn dsg_predict(cli: &Cli, model: &Path, gates: &Path, line: &LineArgs) -> Result<Value> {
    let mut cfg = load_config(cli.config.as_deref(), PredictConfig::default())?;
    if let Some(s) = cli.seed {
        cfg.movement.seed = s;
    }
    let h = read_model(model)?;
    let topo = topology(line)?;
    let gate = read_gates(gates)?;
    let v = vectorize_journeys(
        read_trace(&line.trace)
            .with_context(|| format!("reading trace {}", line.trace.display()))?,
        &topo,
        cfg.gap_threshold,
    )?;
    let timetable = run_spectral(&v.journeys, &topo, &cfg.movement)?.timetable;
    let p = predict_line(
        &v.journeys,
        &topo,
        &timetable,
        &gate,
        &h,
        &cfg.features,
        cfg.alpha,
    )?;
    let feats: Vec<_> = p.departures.iter().map(|d| d.departure.clone()).collect();
    write_features_csv(create(&cli.out, "features.csv")?, &feats)?;
    let mut w = csv::Writer::from_writer(create(&cli.out, "predictions.csv")?);
    w.write_record([
        "station",
        "depart",
        "probability",
        "dsg",
        "severity",
        "level",
        "fallback",
    ])?;
    for d in &p.departures {
        w.write_record([
            d.departure.station.0.to_string(),
            format!("{:.1}", d.departure.depart),
            format!("{:.4}", d.prediction.probability),
            (d.prediction.dsg as u8).to_string(),
            d.prediction.severity.to_string(),
            format!("{:?}", d.prediction.level).to_lowercase(),
            (d.prediction.fallback as u8).to_string(),
        ])?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_writer(create(&cli.out, "dsg_windows.csv")?);
    w.write_record([
        "station",
        "window_start",
        "intending",
        "left_behind",
        "dsg_pct",
    ])?;
    for x in &p.windows {
        w.write_record([
            x.key.station.0.to_string(),
            x.window_start.to_string(),
            format!("{}", x.intending),
            format!("{}", x.left_behind),
            format!("{:.2}", x.pct),
        ])?;
    }
    w.flush()?;
    Ok(json!({
        "journeys": v.journeys.len(),
        "trains": timetable.len(),
        "departures": p.departures.len(),
        "flagged": p.departures.iter().filter(|d| d.prediction.dsg).count(),
        "windows": p.windows.len(),
        "features": FEATURE_NAMES,
    }))
}

fn evaluate(cli: &Cli, scenario: Scenario, seeds: u64) -> Result<Value> {
    let first = cli.seed.unwrap_or(0);
    if let Scenario::Dsg = scenario {
        return dsg_train(cli);
    }
    let default = match scenario {
        Scenario::Clean => movement_experiment(clean_scenario()),
        Scenario::Noisy => movement_experiment(noisy_scenario()),
        _ => incident_experiment(),
    };
    let exp: MovementExperiment = load_config(cli.config.as_deref(), default)?;
    let reports = (first..first + seeds)
        .map(|s| run_movement_experiment(&exp, s))
        .collect::<transit_sense::Result<Vec<EvalReport>>>()?;
    let mut w = csv::Writer::from_writer(create(&cli.out, "evaluation.csv")?);
    w.write_record([
        "seed",
        "method",
        "station",
        "truths",
        "estimates",
        "matched",
        "hit_rate",
        "rmse_min",
    ])?;
    let f = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.4}"));
    for r in &reports {
        for (name, m) in [("spectral", &r.spectral), ("baseline", &r.baseline)] {
            w.write_record([
                r.seed.to_string(),
                name.into(),
                "all".into(),
                String::new(),
                m.trains_estimated.to_string(),
                String::new(),
                f(m.hit_rate),
                f(m.rmse_min),
            ])?;
            for (s, st) in &m.per_station {
                w.write_record([
                    r.seed.to_string(),
                    name.into(),
                    s.0.to_string(),
                    st.truths.to_string(),
                    st.estimates.to_string(),
                    st.matched.to_string(),
                    f(st.hit_rate),
                    f(st.rmse_min),
                ])?;
            }
        }
    }
    w.flush()?;
    write_json(&cli.out, "reports.json", &reports)?;
    let mean = |g: &dyn Fn(&EvalReport) -> Option<f64>| {
        let v: Vec<f64> = reports.iter().filter_map(g).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    Ok(json!({
        "scenario": format!("{scenario:?}").to_lowercase(),
        "seeds": (first..first + seeds).collect::<Vec<_>>(),
        "spectral": {"hit_rate": mean(&|r| r.spectral.hit_rate), "rmse_min": mean(&|r| r.spectral.rmse_min)},
        "baseline": {"hit_rate": mean(&|r| r.baseline.hit_rate), "rmse_min": mean(&|r| r.baseline.rmse_min)},
        "spectral_ari": mean(&|r| r.spectral_ari),
    }))
}

fn robustness(cli: &Cli, step: f64) -> Result<Value> {
    let mut exp = load_config(cli.config.as_deref(), DsgExperiment::default())?;
    if let Some(s) = cli.seed {
        exp.train.seed = s;
    }
    let (_, points) = run_robustness_sweep(&exp, step)?;
    write_robustness_csv(create(&cli.out, "robustness.csv")?, &points)?;
    Ok(json!({ "points": points }))
}

fn stream(
    cli: &Cli,
    line: &LineArgs,
    batch_seconds: Option<Seconds>,
    lateness: Option<Seconds>,
    model: Option<&Path>,
    gates: Option<&Path>,
) -> Result<Value> {
    let mut cfg = load_config(cli.config.as_deref(), StreamConfig::default())?;
    if let Some(b) = batch_seconds {
        cfg.batch_seconds = (b > 0).then_some(b);
    }
    if let Some(l) = lateness {
        cfg.lateness = l;
    }
    if let Some(s) = cli.seed {
        cfg.movement.seed = s;
    }
    let topo = topology(line)?;
    let records = read_trace(&line.trace)
        .with_context(|| format!("reading trace {}", line.trace.display()))?;
    let (h, gate) = match (model, gates) {
        (Some(m), Some(g)) => (Some(read_model(m)?), read_gates(g)?),
        _ => (None, Vec::new()),
    };
    let dsg = h.as_ref().map(|model| StreamDsg { model, gate: &gate });
    let out = stream_run(records, &topo, &cfg, dsg)?;
    write_stream_rows_csv(create(&cli.out, "stream_rows.csv")?, &out.batches)?;
    if dsg.is_some() {
        write_stream_flags_csv(create(&cli.out, "stream_flags.csv")?, &out.batches)?;
    }
    out.timetable
        .write_csv(create(&cli.out, "timetable.csv")?)?;
    Ok(json!({
        "batches": out.batches.len(),
        "batch_seconds": cfg.batch_seconds,
        "journeys": out.journeys,
        "trains": out.timetable.len(),
        "dropped_late": out.dropped_late,
        "rejected_records": out.rejected,
        "rows_emitted": out.batches.iter().map(|b| b.rows.len()).sum::<usize>(),
        "flags_emitted": out.batches.iter().map(|b| b.flags.len()).sum::<usize>(),
    }))
}

fn run(cli: &Cli) -> Result<Value> {
    std::fs::create_dir_all(&cli.out).with_context(|| format!("creating {}", cli.out.display()))?;
    let summary = match &cli.command {
        Command::Simulate { scenario } => simulate(cli, *scenario)?,
        Command::Cluster { method, line } => cluster(cli, *method, line, false)?,
        Command::Timetable { line } => cluster(cli, Method::Spectral, line, true)?,
        Command::DsgTrain => dsg_train(cli)?,
        Command::DsgPredict { model, gates, line } => dsg_predict(cli, model, gates, line)?,
        Command::Evaluate { scenario, seeds } => evaluate(cli, *scenario, *seeds)?,
        Command::Robustness { step } => robustness(cli, *step)?,
        Command::Stream {
            line,
            batch_seconds,
            lateness,
            model,
            gates,
        } => stream(
            cli,
            line,
            *batch_seconds,
            *lateness,
            model.as_deref(),
            gates.as_deref(),
        )?,
    };
    let summary = json!({ "status": "ok", "summary": summary });
    write_json(&cli.out, "summary.json", &summary)?;
    Ok(summary)
}

fn fail(kind: &str, message: String) -> ExitCode {
    eprintln!(
        "{}",
        json!({ "status": "error", "kind": kind, "error": message })
    );
    ExitCode::FAILURE
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail("usage", e.to_string()),
    };
    match run(&cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => fail("runtime", format!("{e:#}")),
    }
}
