//! Command-line front end. [`run`] parses arguments, dispatches and maps
//! every outcome to an exit code; the binary only forwards to it.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::analytic::{self, AxisAnswer, AxisOptions, ResourceSet};
use crate::scenario::{resolve_scenario, ScenarioError, ScenarioSpec, BUILTIN_NAMES};
use crate::sim::{run_simulation, CsvSink, RunConfig, RunResult, SimError};
use crate::tco::{self, Catalog, TcoError};
use crate::telemetry;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "BROKERSIM_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "brokersim-out";

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_UNSTABLE: i32 = 2;

/// Columns of `sweep.csv`.
pub const SWEEP_CSV_COLUMNS: [&str; 17] = [
    "scenario",
    "acceleration",
    "drives_per_broker",
    "brokers",
    "scale_factor",
    "seed",
    "e2e_mean",
    "e2e_p99",
    "wait_mean",
    "wait_fraction",
    "throughput",
    "stable",
    "binding_resource",
    "truncated_at",
    "predicted_stable",
    "predicted_binding",
    "max_utilization",
];

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Tco(#[from] TcoError),
    #[error(transparent)]
    Analytic(#[from] analytic::AnalyticError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Parser)]
#[command(name = "brokersim", version, about = "Broker stability simulator, analytic models and TCO calculator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one simulation and write frames.csv, summary.json, utilization.csv.
    Simulate(SimulateArgs),
    /// Run a parameter grid and write sweep.csv.
    Sweep(SweepArgs),
    /// Amdahl speedup table, plus analytic utilizations for a scenario.
    Analyze(AnalyzeArgs),
    /// Smallest drive count, broker count or largest message scale that
    /// reaches a target acceleration.
    Plan(PlanArgs),
    /// Equipment and yearly cost of the datacenter designs.
    Tco(TcoArgs),
    /// Print a scenario after defaults are applied.
    Show(ShowArgs),
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Builtin scenario name or path to a TOML file.
    #[arg(long)]
    pub scenario: Option<String>,
    /// Virtual seconds to simulate.
    #[arg(long, default_value_t = 600.0)]
    pub sim_time: f64,
    /// Virtual seconds excluded from statistics.
    #[arg(long, default_value_t = 60.0)]
    pub warmup: f64,
    /// Stop a run once any backlog exceeds this many seconds (0 disables).
    #[arg(long, default_value_t = 60.0)]
    pub divergence_limit: f64,
    /// Exact percentiles instead of a 3-digit histogram.
    #[arg(long)]
    pub exact_percentiles: bool,
    /// Exit with status 2 when any run is unstable.
    #[arg(long)]
    pub require_stable: bool,
    /// Output directory (defaults to $BROKERSIM_OUT_DIR, then ./brokersim-out).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, default_value_t = 1.0)]
    pub accel: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, value_delimiter = ',', required = true)]
    pub accel_list: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    pub drives_list: Option<Vec<u32>>,
    #[arg(long, value_delimiter = ',')]
    pub brokers_list: Option<Vec<u32>>,
    /// Message size scale factors in (0, 1].
    #[arg(long, value_delimiter = ',')]
    pub size_list: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', default_value = "1")]
    pub seeds: Vec<u64>,
    /// Worker threads (0 = one per core).
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
}

#[derive(Debug, Clone, Args)]
pub struct AnalyzeArgs {
    /// Fraction of the workload that is accelerated.
    #[arg(long)]
    pub fraction: Option<f64>,
    #[arg(long, value_delimiter = ',', required = true)]
    pub accel_list: Vec<f64>,
    /// Also print analytic utilizations for this scenario.
    #[arg(long)]
    pub scenario: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct PlanArgs {
    #[arg(long)]
    pub scenario: Option<String>,
    #[arg(long)]
    pub target_accel: f64,
    /// Skip the confirming simulation of each proposed setting.
    #[arg(long)]
    pub no_confirm: bool,
    /// Virtual seconds for each confirming run.
    #[arg(long, default_value_t = 120.0)]
    pub sim_time: f64,
    #[arg(long, default_value_t = 20.0)]
    pub warmup: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Design {
    Homogeneous,
    PurposeBuilt,
    Both,
}

#[derive(Debug, Clone, Args)]
pub struct TcoArgs {
    /// Catalog TOML; the shipped edge-datacenter catalog when omitted.
    #[arg(long)]
    pub catalog: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Design::Both)]
    pub design: Design,
    /// Extra yearly cost as a fraction of amortized equipment.
    #[arg(long, default_value_t = 0.0)]
    pub overhead: f64,
    /// Also write tco.json into this directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ShowArgs {
    /// Scenario to print; lists the builtins when omitted.
    #[arg(long)]
    pub scenario: Option<String>,
}

/// What a simulate or sweep invocation will run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub scenario: String,
    pub accelerations: Vec<f64>,
    pub seeds: Vec<u64>,
    pub horizon: f64,
    pub warmup: f64,
    pub out_dir: PathBuf,
    pub require_stable: bool,
}

impl RunManifest {
    pub fn validate(&self) -> Result<(), CliError> {
        if self.accelerations.is_empty() {
            return Err(CliError::Usage("acceleration list is empty".into()));
        }
        if self.seeds.is_empty() {
            return Err(CliError::Usage("seed list is empty".into()));
        }
        if let Some(a) = self.accelerations.iter().find(|a| !(**a >= 1.0 && a.is_finite())) {
            return Err(CliError::Usage(format!("acceleration must be >= 1, got {a}")));
        }
        if !(self.horizon > self.warmup && self.warmup >= 0.0) {
            return Err(CliError::Usage(format!(
                "sim-time {} must exceed warmup {}",
                self.horizon, self.warmup
            )));
        }
        Ok(())
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// exit code. Messages go to stdout, errors to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_CONFIG
        }
    }
}

fn dispatch(command: Command) -> Result<i32, CliError> {
    match command {
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Sweep(a) => cmd_sweep(&a),
        Command::Analyze(a) => cmd_analyze(&a),
        Command::Plan(a) => cmd_plan(&a),
        Command::Tco(a) => cmd_tco(&a),
        Command::Show(a) => cmd_show(&a),
    }
}

fn out_dir(explicit: &Option<PathBuf>) -> PathBuf {
    explicit
        .clone()
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

fn require_scenario(s: &Option<String>) -> Result<ScenarioSpec, CliError> {
    let name = s
        .as_deref()
        .ok_or_else(|| CliError::Usage("--scenario is required".into()))?;
    Ok(resolve_scenario(name)?)
}

fn run_config(r: &RunArgs, seed: u64) -> RunConfig {
    RunConfig {
        seed,
        horizon: r.sim_time,
        warmup: r.warmup,
        divergence_limit: (r.divergence_limit > 0.0).then_some(r.divergence_limit),
        exact_percentiles: r.exact_percentiles,
        ..RunConfig::default()
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Writes `path` through a temporary file in the same directory, so the
/// final name only ever holds a complete file.
pub fn write_atomically<F>(path: &Path, fill: F) -> Result<(), CliError>
where
    F: FnOnce(&mut dyn Write) -> Result<(), CliError>,
{
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(dir))?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        fill(&mut w)?;
        w.flush().map_err(io_err(path))?;
    }
    tmp.as_file().sync_all().map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| CliError::Io {
        path: path.display().to_string(),
        source: e.error,
    })?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    write_atomically(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value).map_err(|e| CliError::Io {
            path: path.display().to_string(),
            source: e.into(),
        })?;
        writeln!(w).map_err(io_err(path))
    })
}

/// One-line human summary of a run.
pub fn verdict_line(r: &RunResult, seed: u64) -> String {
    let mut s = format!("{} a={} seed={}: ", r.scenario, r.acceleration, seed);
    if r.stable() {
        s.push_str("STABLE");
    } else {
        let binding = r.verdict.binding_resource.as_deref().unwrap_or("unknown");
        let _ = write!(s, "UNSTABLE (binding {binding})");
    }
    if let Some(b) = &r.breakdown {
        let _ = write!(
            s,
            " e2e mean {:.3} s, wait fraction {:.3}, throughput {:.1} fps",
            b.end_to_end.mean, b.wait_fraction, b.throughput
        );
    }
    s
}

pub fn cmd_simulate(a: &SimulateArgs) -> Result<i32, CliError> {
    let spec = require_scenario(&a.run.scenario)?;
    let manifest = RunManifest {
        scenario: spec.name.clone(),
        accelerations: vec![a.accel],
        seeds: vec![a.seed],
        horizon: a.run.sim_time,
        warmup: a.run.warmup,
        out_dir: out_dir(&a.run.out),
        require_stable: a.run.require_stable,
    };
    manifest.validate()?;
    let spec = spec.with_acceleration(a.accel);
    spec.validate()?;
    let config = run_config(&a.run, a.seed);
    config.validate()?;

    let dir = &manifest.out_dir;
    let frames = dir.join("frames.csv");
    let mut result = None;
    write_atomically(&frames, |w| {
        let mut sink = CsvSink::new(w).map_err(io_err(&frames))?;
        result = Some(run_simulation(&spec, &config, &mut sink)?);
        Ok(())
    })?;
    let result = result.expect("simulation ran");
    write_json(&dir.join("summary.json"), &result)?;
    let util = dir.join("utilization.csv");
    write_atomically(&util, |w| {
        telemetry::write_utilization_csv(w, &result.utilization).map_err(io_err(&util))
    })?;

    println!("{}", verdict_line(&result, a.seed));
    Ok(if manifest.require_stable && !result.stable() {
        EXIT_UNSTABLE
    } else {
        EXIT_OK
    })
}

/// One grid point of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub acceleration: f64,
    pub drives_per_broker: u32,
    pub brokers: u32,
    pub scale_factor: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub point: SweepPoint,
    pub result: RunResult,
}

/// Grid in sorted parameter order: drives, brokers, scale, acceleration, seed.
pub fn sweep_grid(
    spec: &ScenarioSpec,
    accels: &[f64],
    drives: Option<&[u32]>,
    brokers: Option<&[u32]>,
    sizes: Option<&[f64]>,
    seeds: &[u64],
) -> Vec<SweepPoint> {
    let sorted_u = |v: Option<&[u32]>, d: u32| {
        let mut v = v.map(<[u32]>::to_vec).unwrap_or_else(|| vec![d]);
        v.sort_unstable();
        v.dedup();
        v
    };
    let sorted_f = |v: &[f64]| {
        let mut v = v.to_vec();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    };
    let drives = sorted_u(drives, spec.drives_per_broker);
    let brokers = sorted_u(brokers, spec.brokers);
    let sizes = sorted_f(sizes.unwrap_or(&[spec.message_size.scale_factor]));
    let accels = sorted_f(accels);
    let mut seeds = seeds.to_vec();
    seeds.sort_unstable();
    seeds.dedup();
    let mut out = Vec::new();
    for &d in &drives {
        for &b in &brokers {
            for &s in sizes.iter().rev() {
                for &a in &accels {
                    for &seed in &seeds {
                        out.push(SweepPoint {
                            acceleration: a,
                            drives_per_broker: d,
                            brokers: b,
                            scale_factor: s,
                            seed,
                        });
                    }
                }
            }
        }
    }
    out
}

pub fn point_spec(spec: &ScenarioSpec, p: &SweepPoint) -> ScenarioSpec {
    let mut s = spec.with_acceleration(p.acceleration);
    s.drives_per_broker = p.drives_per_broker;
    s.brokers = p.brokers;
    s.message_size.scale_factor = p.scale_factor;
    s
}

pub fn write_sweep_csv<W: Write + ?Sized>(w: &mut W, scenario: &str, rows: &[SweepRow]) -> std::io::Result<()> {
    writeln!(w, "{}", SWEEP_CSV_COLUMNS.join(","))?;
    for row in rows {
        let p = &row.point;
        let r = &row.result;
        let (mean, p99, wait, frac, thr) = match &r.breakdown {
            Some(b) => (
                b.end_to_end.mean.to_string(),
                b.end_to_end.p99.to_string(),
                b.stage(telemetry::WAIT).map(|s| s.mean.to_string()).unwrap_or_default(),
                b.wait_fraction.to_string(),
                b.throughput.to_string(),
            ),
            None => Default::default(),
        };
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            scenario,
            p.acceleration,
            p.drives_per_broker,
            p.brokers,
            p.scale_factor,
            p.seed,
            mean,
            p99,
            wait,
            frac,
            thr,
            r.verdict.stable,
            r.verdict.binding_resource.as_deref().unwrap_or(""),
            r.verdict.truncated_at.map(|t| t.to_string()).unwrap_or_default(),
            r.prediction.stable,
            r.prediction.binding_resource.as_deref().unwrap_or(""),
            r.prediction.max_utilization(),
        )?;
    }
    Ok(())
}

/// Runs every grid point, in parallel, returning rows in grid order.
pub fn run_sweep(
    spec: &ScenarioSpec,
    grid: &[SweepPoint],
    run: &RunArgs,
) -> Result<Vec<SweepRow>, CliError> {
    for p in grid {
        point_spec(spec, p).validate()?;
    }
    grid.par_iter()
        .map(|p| {
            let s = point_spec(spec, p);
            let result = run_simulation(&s, &run_config(run, p.seed), &mut ())?;
            Ok(SweepRow {
                point: p.clone(),
                result,
            })
        })
        .collect()
}

pub fn cmd_sweep(a: &SweepArgs) -> Result<i32, CliError> {
    let spec = require_scenario(&a.run.scenario)?;
    let manifest = RunManifest {
        scenario: spec.name.clone(),
        accelerations: a.accel_list.clone(),
        seeds: a.seeds.clone(),
        horizon: a.run.sim_time,
        warmup: a.run.warmup,
        out_dir: out_dir(&a.run.out),
        require_stable: a.run.require_stable,
    };
    manifest.validate()?;
    let grid = sweep_grid(
        &spec,
        &a.accel_list,
        a.drives_list.as_deref(),
        a.brokers_list.as_deref(),
        a.size_list.as_deref(),
        &a.seeds,
    );
    if grid.is_empty() {
        return Err(CliError::Usage("sweep grid is empty".into()));
    }
    run_config(&a.run, 0).validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.jobs)
        .build()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let rows = pool.install(|| run_sweep(&spec, &grid, &a.run))?;
    let path = manifest.out_dir.join("sweep.csv");
    write_atomically(&path, |w| write_sweep_csv(w, &spec.name, &rows).map_err(io_err(&path)))?;
    for row in &rows {
        let p = &row.point;
        println!(
            "drives={} brokers={} scale={} {}",
            p.drives_per_broker,
            p.brokers,
            p.scale_factor,
            verdict_line(&row.result, p.seed)
        );
    }
    let unstable = rows.iter().any(|r| !r.result.stable());
    Ok(if manifest.require_stable && unstable {
        EXIT_UNSTABLE
    } else {
        EXIT_OK
    })
}

pub fn cmd_analyze(a: &AnalyzeArgs) -> Result<i32, CliError> {
    if a.fraction.is_none() && a.scenario.is_none() {
        return Err(CliError::Usage("give --fraction, --scenario or both".into()));
    }
    if let Some(f) = a.fraction {
        println!("{:>10} {:>10}", "accel", "speedup");
        for &x in &a.accel_list {
            println!("{:>10} {:>10.3}", x, analytic::amdahl_speedup(f, x)?);
        }
        println!("{:>10} {:>10.3}", "inf", analytic::amdahl_speedup(f, f64::INFINITY)?);
    }
    if let Some(name) = &a.scenario {
        let spec = resolve_scenario(name)?;
        for &x in &a.accel_list {
            if !(x >= 1.0) {
                return Err(CliError::Usage(format!("acceleration must be >= 1, got {x}")));
            }
            let v = analytic::predict_stability_with(&spec, x, ResourceSet::Calibrated);
            let rhos: Vec<String> = v
                .utilizations
                .iter()
                .map(|(k, r)| format!("{k}={r:.3}"))
                .collect();
            println!(
                "a={x}: {} {}",
                if v.stable { "stable" } else { "unstable" },
                rhos.join(" ")
            );
        }
    }
    Ok(EXIT_OK)
}

fn describe(answer: &AxisAnswer) -> String {
    match answer {
        AxisAnswer::Found { value } => format!("{value}"),
        AxisAnswer::Infeasible { binding_resource } => {
            format!("infeasible (binding {binding_resource})")
        }
    }
}

fn confirm(spec: &ScenarioSpec, a: &PlanArgs, apply: impl Fn(&mut ScenarioSpec)) -> Result<String, CliError> {
    let mut s = spec.with_acceleration(a.target_accel);
    apply(&mut s);
    let config = RunConfig {
        seed: a.seed,
        horizon: a.sim_time,
        warmup: a.warmup,
        ..RunConfig::default()
    };
    let r = run_simulation(&s, &config, &mut ())?;
    Ok(if r.stable() {
        "simulated stable".into()
    } else {
        format!(
            "simulated UNSTABLE (binding {})",
            r.verdict.binding_resource.as_deref().unwrap_or("unknown")
        )
    })
}

fn print_axes(spec: &ScenarioSpec, label: &str, axes: &AxisOptions, a: &PlanArgs) -> Result<(), CliError> {
    println!("{label}:");
    let rows: [(&str, &AxisAnswer, fn(&mut ScenarioSpec, f64)); 3] = [
        ("drives per broker", &axes.drives_per_broker, |s, v| s.drives_per_broker = v as u32),
        ("brokers", &axes.brokers, |s, v| s.brokers = v as u32),
        ("message scale", &axes.scale_factor, |s, v| s.message_size.scale_factor = v),
    ];
    for (name, answer, apply) in rows {
        let mut line = format!("  {name:<18} {}", describe(answer));
        if let (Some(v), false) = (answer.value(), a.no_confirm) {
            let _ = write!(line, "  [{}]", confirm(spec, a, |s| apply(s, v))?);
        }
        println!("{line}");
    }
    Ok(())
}

pub fn cmd_plan(a: &PlanArgs) -> Result<i32, CliError> {
    let spec = require_scenario(&a.scenario)?;
    let plan = analytic::min_mitigation(&spec, a.target_accel)?;
    println!("{} at {}x", spec.name, a.target_accel);
    print_axes(&spec, "storage bandwidth only", &plan.storage_only, &PlanArgs { no_confirm: true, ..a.clone() })?;
    print_axes(&spec, "all modeled resources", &plan.calibrated, a)?;
    Ok(EXIT_OK)
}

pub fn cmd_tco(a: &TcoArgs) -> Result<i32, CliError> {
    let catalog = match &a.catalog {
        Some(p) => Catalog::load(p)?,
        None => Catalog::shipped(),
    };
    let reports = match a.design {
        Design::Homogeneous => vec![tco::homogeneous_report(&catalog, a.overhead)?],
        Design::PurposeBuilt => vec![tco::purpose_built_report(&catalog, a.overhead)?],
        Design::Both => {
            let c = tco::compare(&catalog, a.overhead)?;
            vec![c.homogeneous, c.purpose_built]
        }
    };
    for r in &reports {
        print!("{}", r.table());
    }
    if let Some(dir) = &a.out {
        write_json(&dir.join("tco.json"), &reports)?;
    }
    Ok(EXIT_OK)
}

pub fn cmd_show(a: &ShowArgs) -> Result<i32, CliError> {
    match &a.scenario {
        Some(name) => print!("{}", resolve_scenario(name)?.to_toml()),
        None => {
            for n in BUILTIN_NAMES {
                println!("{n}");
            }
        }
    }
    Ok(EXIT_OK)
}
