//! Subcommand dispatch.
//!
//! Exit codes: 0 success, 1 a gated comparison failed, 2 bad config or
//! arguments, 3 runtime failure such as a degenerate batch.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use resprop_core::analytic::{depth_limit, predict, DepthBound};
use resprop_core::montecarlo::{compare, deviations_shrink, mean_checks};
use resprop_core::FloatFormat;
use serde_json::Value;

use crate::config::Experiment;
use crate::{report, runner, CliError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_COMPARISON: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "resprop", version, about = "Variance propagation experiments for residual networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Monte-Carlo run compared against the closed-form predictions.
    Run(RunArgs),
    /// Closed-form predictions only.
    Predict(PredictArgs),
    /// Deepest network whose proposed weight variance is a normal number.
    DepthLimit(DepthLimitArgs),
    /// Gradient-descent runs on a synthetic two-class task.
    Train(TrainArgs),
    /// First-layer delta ratio across batch sizes.
    BnConvergence(ConvergenceArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Directory for the CSV and JSON outputs.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write a gnuplot script next to the CSV.
    #[arg(long)]
    pub gnuplot: bool,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub trials: Option<u64>,
    /// Write the full trace of trial 0 as JSON (small configs only).
    #[arg(long)]
    pub dump_trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Print log10 of each prediction, for regimes beyond f64 range.
    #[arg(long)]
    pub log_space: bool,
}

#[derive(Debug, Args)]
pub struct DepthLimitArgs {
    #[arg(long)]
    pub format: String,
    #[arg(long)]
    pub fan_in: usize,
    #[arg(long, default_value_t = 1.0)]
    pub c: f64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct ConvergenceArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub trials: Option<u64>,
}

/// Parses arguments and runs; returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn dispatch(command: Command) -> Result<i32, CliError> {
    match command {
        Command::Run(a) => cmd_run(a),
        Command::Predict(a) => cmd_predict(a),
        Command::DepthLimit(a) => cmd_depth_limit(a),
        Command::Train(a) => cmd_train(a),
        Command::BnConvergence(a) => cmd_bn_convergence(a),
    }
}

struct Outputs {
    csv: Option<PathBuf>,
    json: Option<PathBuf>,
}

fn outputs(out: &Option<PathBuf>, exp: Option<&Experiment>, stem: &str) -> Result<Outputs, CliError> {
    if let Some(dir) = out {
        fs::create_dir_all(dir)
            .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
        return Ok(Outputs { csv: Some(dir.join(format!("{stem}.csv"))), json: Some(dir.join(format!("{stem}.json"))) });
    }
    Ok(match exp {
        Some(e) => Outputs { csv: e.output.csv_path.clone(), json: e.output.json_path.clone() },
        None => Outputs { csv: None, json: None },
    })
}

fn write_error(path: &Path, e: io::Error) -> CliError {
    CliError::Runtime(format!("cannot write {}: {e}", path.display()))
}

/// Writes CSV to `path`, or stdout when there is none.
fn emit_csv(path: Option<&Path>, write: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> Result<(), CliError> {
    match path {
        Some(p) => {
            let file = File::create(p).map_err(|e| write_error(p, e))?;
            let mut w = BufWriter::new(file);
            write(&mut w).and_then(|_| w.flush()).map_err(|e| write_error(p, e))
        }
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            write(&mut lock).map_err(|e| CliError::Runtime(format!("stdout: {e}")))
        }
    }
}

fn emit_json(path: Option<&Path>, value: &Value) -> Result<(), CliError> {
    if let Some(p) = path {
        let text = serde_json::to_string_pretty(value).expect("summary serializes");
        fs::write(p, text + "\n").map_err(|e| write_error(p, e))?;
    }
    Ok(())
}

fn emit_gnuplot(enabled: bool, csv: Option<&Path>, script: impl FnOnce(&Path) -> String) -> Result<(), CliError> {
    if !enabled {
        return Ok(());
    }
    let csv = csv.ok_or_else(|| CliError::Config("--gnuplot needs a CSV file (use --out or output.csv_path)".into()))?;
    let gp = csv.with_extension("gp");
    fs::write(&gp, script(csv)).map_err(|e| write_error(&gp, e))
}

fn load(common: &Common) -> Result<(Experiment, usize), CliError> {
    let exp = Experiment::from_file(&common.config)?.with_seed(common.seed);
    let workers = runner::resolve_workers(common.workers, exp.workers).map_err(CliError::Config)?;
    Ok((exp, workers))
}

fn cmd_run(a: RunArgs) -> Result<i32, CliError> {
    let (exp, workers) = load(&a.common)?;
    let exp = exp.with_trials(a.trials)?;
    if let Some(path) = &a.dump_trace {
        let dump = report::trace_dump(&exp.net, exp.seed).map_err(CliError::Config)?;
        emit_json(Some(path), &dump)?;
    }
    let stats = runner::run_experiment(&exp.net, exp.trials, exp.seed, workers)?;
    let table = predict(&exp.net)?;
    let comparison = compare(&stats, &table, &exp.tolerance)?;
    let means = mean_checks(&exp.net, &stats, exp.tolerance.z_crit);
    let code = if comparison.passed() { EXIT_OK } else { EXIT_COMPARISON };
    let out = outputs(&a.common.out, Some(&exp), "run")?;
    emit_csv(out.csv.as_deref(), |w| report::write_run_csv(w, &comparison))?;
    emit_json(out.json.as_deref(), &report::run_summary(&exp, &comparison, &means, code))?;
    emit_gnuplot(a.common.gnuplot, out.csv.as_deref(), report::gnuplot_run)?;
    let failed = comparison.failures().count();
    eprintln!(
        "{} trials, {} comparison rows, {} gated failures",
        exp.trials,
        comparison.rows.len(),
        failed
    );
    Ok(code)
}

fn cmd_predict(a: PredictArgs) -> Result<i32, CliError> {
    let exp = Experiment::from_file(&a.config)?;
    let table = predict(&exp.net)?;
    let csv = match &a.out {
        Some(_) => outputs(&a.out, None, "predict")?.csv,
        None => exp.output.csv_path.clone(),
    };
    emit_csv(csv.as_deref(), |w| report::write_predict_csv(w, &table, a.log_space))?;
    Ok(EXIT_OK)
}

fn cmd_depth_limit(a: DepthLimitArgs) -> Result<i32, CliError> {
    let format: FloatFormat = a.format.parse().map_err(|e| CliError::Config(format!("--format: {e}")))?;
    let limit = depth_limit(&format, a.fan_in, a.c)?;
    match limit.max_depth {
        DepthBound::Finite(l) => println!("{l}"),
        DepthBound::Saturated => println!("saturated"),
    }
    Ok(EXIT_OK)
}

fn cmd_train(a: TrainArgs) -> Result<i32, CliError> {
    let (exp, workers) = load(&a.common)?;
    let result = runner::train(&exp.train, exp.seed, workers)?;
    let out = outputs(&a.common.out, Some(&exp), "train")?;
    emit_csv(out.csv.as_deref(), |w| report::write_train_csv(w, &result))?;
    emit_json(out.json.as_deref(), &report::train_summary(&exp, &result))?;
    emit_gnuplot(a.common.gnuplot, out.csv.as_deref(), |p| report::gnuplot_train(p, exp.train.repeats))?;
    eprintln!("{} repeats, {} diverged, {} with a plateau", result.repeats.len(), result.divergences(), result.plateaus());
    Ok(EXIT_OK)
}

fn cmd_bn_convergence(a: ConvergenceArgs) -> Result<i32, CliError> {
    let (exp, workers) = load(&a.common)?;
    let exp = exp.with_trials(a.trials)?;
    let rows = runner::bn_convergence(&exp.net, &exp.batch_sizes, exp.trials, exp.seed, workers)?;
    let shrinking = deviations_shrink(&rows, 2.0);
    let out = outputs(&a.common.out, Some(&exp), "bn_convergence")?;
    emit_csv(out.csv.as_deref(), |w| report::write_convergence_csv(w, &rows))?;
    emit_json(out.json.as_deref(), &report::convergence_summary(&exp, &rows, shrinking))?;
    emit_gnuplot(a.common.gnuplot, out.csv.as_deref(), report::gnuplot_convergence)?;
    Ok(if shrinking { EXIT_OK } else { EXIT_COMPARISON })
}
