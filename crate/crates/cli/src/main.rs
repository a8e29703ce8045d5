//! `itecp`: simulate data, run one effect-interval pipeline, or run the
//! benchmark sweep.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{ArgAction, Args, Parser, Subcommand};
use log::info;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use ite_conformal::evaluation::{format_table, run_experiment, write_report, ExperimentConfig};
use ite_conformal::ite::{run_pipeline, ItePipelineConfig};
use ite_conformal::simulation::{gen_scenario, ScenarioConfig, SigmaKind};
use ite_conformal::tabular::{load_csv, write_csv, write_csv_with, CsvSchema};

#[derive(Debug, Parser)]
#[command(name = "itecp", version, about = "Conformal intervals for individual treatment effects")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true, env = "ITECP_THREADS")]
    threads: Option<usize>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate train.csv and test.csv for one scenario.
    Simulate(Common),
    /// Fit the pipeline on a training CSV and write intervals for a test CSV.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
    },
    /// Run the simulation sweep and write metrics.csv and points.csv.
    Benchmark(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// JSON configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Root seed; overrides the configuration.
    #[arg(long)]
    seed: Option<u64>,
}

enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }
}

type Outcome<T> = std::result::Result<T, Failure>;

fn usage<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Usage(e.into())
}

fn runtime<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Runtime(e.into())
}

/// Dotted paths of keys in `user` that do not occur in `template`. Array
/// elements are checked against the template's first element.
fn unknown_keys(user: &Value, template: &Value, path: &str, out: &mut Vec<String>) {
    let join = |k: &str| if path.is_empty() { k.to_string() } else { format!("{path}.{k}") };
    match (user, template) {
        (Value::Object(u), Value::Object(t)) => {
            for (k, v) in u {
                match t.get(k) {
                    Some(tv) => unknown_keys(v, tv, &join(k), out),
                    None => out.push(join(k)),
                }
            }
        }
        (Value::Array(u), Value::Array(t)) => {
            if let Some(t0) = t.first() {
                for (i, v) in u.iter().enumerate() {
                    unknown_keys(v, t0, &format!("{path}[{i}]"), out);
                }
            }
        }
        _ => {}
    }
}

/// Parses `path` as JSON into `T`, listing every unknown key at once.
fn load_config<T: DeserializeOwned, S: Serialize>(path: &Path, template: &S) -> Outcome<T> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))
        .map_err(usage)?;
    let value: Value = serde_json::from_str(&text)
        .with_context(|| format!("parsing config {}", path.display()))
        .map_err(usage)?;
    let template = serde_json::to_value(template).expect("config types serialize");
    let mut unknown = Vec::new();
    unknown_keys(&value, &template, "", &mut unknown);
    if !unknown.is_empty() {
        return Err(usage(anyhow!(
            "config {}: unknown keys: {}",
            path.display(),
            unknown.join(", ")
        )));
    }
    serde_json::from_value(value)
        .with_context(|| format!("config {}", path.display()))
        .map_err(usage)
}

fn create_dir(out: &Path) -> Outcome<()> {
    fs::create_dir_all(out)
        .with_context(|| format!("creating output directory {}", out.display()))
        .map_err(usage)
}

fn header(command: &str, seed: u64) {
    println!("itecp {command} | root seed {seed}");
}

fn simulate(common: &Common) -> Outcome<()> {
    let path = common
        .config
        .as_deref()
        .ok_or_else(|| usage(anyhow!("simulate needs --config with a scenario file")))?;
    let mut cfg: ScenarioConfig = load_config(path, &ScenarioConfig::new(SigmaKind::Homoscedastic, 1, 0))?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate().map_err(usage)?;
    header("simulate", cfg.seed);
    create_dir(&common.out)?;
    let data = gen_scenario(&cfg).map_err(runtime)?;
    let train = common.out.join("train.csv");
    let test = common.out.join("test.csv");
    write_csv(&data.train, &train).map_err(runtime)?;
    write_csv(&data.test, &test).map_err(runtime)?;
    println!("wrote {} ({} rows) and {} ({} rows)", train.display(), data.train.n(), test.display(), data.test.n());
    Ok(())
}

fn run(common: &Common, train: &Path, test: &Path) -> Outcome<()> {
    let cfg: ItePipelineConfig = match &common.config {
        Some(path) => load_config(path, &ItePipelineConfig::default())?,
        None => ItePipelineConfig::default(),
    };
    cfg.validate().map_err(usage)?;
    let seed = common.seed.unwrap_or(0);
    header("run", seed);
    let schema = CsvSchema::default();
    let train_ds = load_csv(train, &schema)
        .with_context(|| format!("loading {}", train.display()))
        .map_err(runtime)?;
    train_ds.require_treatment().map_err(runtime)?;
    train_ds.require_outcome().map_err(runtime)?;
    let test_ds = load_csv(test, &schema)
        .with_context(|| format!("loading {}", test.display()))
        .map_err(runtime)?;
    if test_ds.d() != train_ds.d() {
        return Err(runtime(anyhow!(
            "train has {} features but test has {}",
            train_ds.d(),
            test_ds.d()
        )));
    }
    create_dir(&common.out)?;
    info!("fitting on {} rows, predicting {} rows", train_ds.n(), test_ds.n());
    let intervals = run_pipeline(&train_ds, &cfg, test_ds.features(), seed).map_err(runtime)?;
    let lo: Vec<f64> = intervals.iter().map(|p| p.0).collect();
    let hi: Vec<f64> = intervals.iter().map(|p| p.1).collect();
    let path = common.out.join("intervals.csv");
    write_csv_with(&test_ds, &[("lo", &lo), ("hi", &hi)], &path).map_err(runtime)?;
    println!("wrote {} ({} rows)", path.display(), intervals.len());
    Ok(())
}

fn benchmark(common: &Common) -> Outcome<()> {
    let mut cfg: ExperimentConfig = match &common.config {
        Some(path) => load_config(path, &ExperimentConfig::default())?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.base_seed = seed;
    }
    cfg.validate().map_err(usage)?;
    header("benchmark", cfg.base_seed);
    create_dir(&common.out)?;
    info!(
        "{} scenarios x {} methods x {} replications",
        cfg.scenarios.len(),
        cfg.methods.len(),
        cfg.replications
    );
    let report = run_experiment(&cfg).map_err(runtime)?;
    write_report(&report, &common.out).map_err(runtime)?;
    print!("{}", format_table(&report.rows));
    if report.failures.is_empty() {
        return Ok(());
    }
    for f in &report.failures {
        eprintln!("failed cell {} / {} / replication {}: {}", f.scenario, f.method, f.replication, f.message);
    }
    Err(runtime(anyhow!("{} cells failed", report.failures.len())))
}

fn dispatch(cli: &Cli) -> Outcome<()> {
    match &cli.command {
        Command::Simulate(common) => simulate(common),
        Command::Run { common, train, test } => run(common, train, test),
        Command::Benchmark(common) => benchmark(common),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).init();

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        pool = pool.num_threads(n);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match pool.install(|| dispatch(&cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let code = f.code();
            let (Failure::Usage(e) | Failure::Runtime(e)) = f;
            eprintln!("error: {e:#}");
            ExitCode::from(code)
        }
    }
}
