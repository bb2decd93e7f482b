//! `edaem` subcommands. Each command returns a process exit code:
//! 0 success, 1 failed diagnostics, 2 invalid configuration, 3 runtime
//! failure, 4 I/O failure. Errors are printed to stderr as one JSON object.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::config::RunConfig;
use crate::engine::{run, IterationRecord, RunFailure, Trace, UpdateRule};
use crate::error::{EdaError, Result};
use crate::oracle::{load_fixture_set, run_diagnostics, DiagnosticsOptions, Report};
use crate::shaping::ShapingSpec;

/// Frozen column order of `trace.csv`.
pub const TRACE_COLUMNS: [&str; 6] = [
    "iter",
    "best_raw_f",
    "mean_raw_f",
    "weighted_mean_shaped_f",
    "free_energy_estimate",
    "ess",
];

/// Frozen column order of `sweep.csv`.
pub const SWEEP_COLUMNS: [&str; 10] = [
    "index",
    "param",
    "value",
    "seed",
    "status",
    "final_best_raw_f",
    "best_raw_f",
    "iterations_to_threshold",
    "iterations_run",
    "error",
];

#[derive(Debug, Parser)]
#[command(name = "edaem", version, about = "EDA optimizer run as Monte-Carlo EM, with exact diagnostics")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one optimization and write trace.csv and summary.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the exact-identity checks on a fixture set (`default` or a JSON file).
    Diagnose {
        #[arg(default_value = "default")]
        fixtures: String,
        /// Write all reports to DIR/diagnostics.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// One run per value of a hyperparameter; child i uses seed base + i.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        param: SweepParam,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        values: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SweepParam {
    Gamma,
    Alpha,
    K,
    #[value(name = "N")]
    N,
    Rho,
    Beta,
}

impl SweepParam {
    fn name(self) -> &'static str {
        match self {
            SweepParam::Gamma => "gamma",
            SweepParam::Alpha => "alpha",
            SweepParam::K => "k",
            SweepParam::N => "N",
            SweepParam::Rho => "rho",
            SweepParam::Beta => "beta",
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match cli.command {
        Command::Run { config, out, seed } => cmd_run(&config, out.as_deref(), seed),
        Command::Diagnose { fixtures, out } => cmd_diagnose(&fixtures, out.as_deref()),
        Command::Sweep {
            config,
            param,
            values,
            out,
            seed,
            jobs,
        } => cmd_sweep(&config, param, &values, out.as_deref(), seed, jobs),
    }
}

pub fn exit_code(err: &EdaError) -> i32 {
    match err {
        EdaError::Config { .. } => 2,
        EdaError::Io { .. } => 4,
        _ => 3,
    }
}

pub fn error_json(err: &EdaError) -> serde_json::Value {
    let mut v = json!({ "error": err.kind(), "message": err.to_string() });
    if let EdaError::Config { field, .. } = err {
        v["field"] = json!(field);
    }
    v
}

fn report_error(err: &EdaError) -> i32 {
    eprintln!("{}", error_json(err));
    exit_code(err)
}

/// Writes the trace CSV in [`TRACE_COLUMNS`] order.
pub fn write_trace_csv<W: Write>(records: &[IterationRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let to_err = |e: csv::Error| EdaError::Input(format!("csv: {e}"));
    w.write_record(TRACE_COLUMNS).map_err(to_err)?;
    for r in records {
        w.write_record([
            r.iter.to_string(),
            r.best_raw_f.to_string(),
            r.mean_raw_f.to_string(),
            r.weighted_mean_shaped_f.to_string(),
            r.free_energy_estimate.to_string(),
            r.ess.to_string(),
        ])
        .map_err(to_err)?;
    }
    w.flush().map_err(|e| EdaError::Input(format!("csv: {e}")))
}

pub fn trace_csv_string(records: &[IterationRecord]) -> String {
    let mut buf = Vec::new();
    write_trace_csv(records, &mut buf).expect("writing to memory cannot fail");
    String::from_utf8(buf).expect("csv is utf-8")
}

/// The JSON sidecar: final θ, best point, stop reason and the per-iteration
/// MAP free-energy estimates.
pub fn summary_json(config: &RunConfig, trace: &Trace, error: Option<&EdaError>) -> serde_json::Value {
    json!({
        "objective": config.objective,
        "seed": config.seed,
        "iterations_run": trace.records.len(),
        "stop_reason": trace.stop,
        "best_raw_f": trace.best_value.is_finite().then_some(trace.best_value),
        "best_point": trace.best_point,
        "final_model": trace.final_state(),
        "free_energy_map_estimate": trace.records.iter().map(|r| r.free_energy_map_estimate).collect::<Vec<_>>(),
        "error": error.map(error_json),
        "config": config,
    })
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    fs::write(path, contents).map_err(|e| EdaError::io(path, e))
}

fn write_outputs(dir: &Path, config: &RunConfig, trace: &Trace, error: Option<&EdaError>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| EdaError::io(dir, e))?;
    write_file(&dir.join("trace.csv"), trace_csv_string(&trace.records).as_bytes())?;
    let summary = serde_json::to_string_pretty(&summary_json(config, trace, error)).expect("summary serializes");
    write_file(&dir.join("summary.json"), summary.as_bytes())
}

/// Runs a validated config and writes its outputs to `dir`.
///
/// A runtime failure still writes the partial trace before returning.
pub fn execute(config: &RunConfig, dir: &Path) -> Result<Trace> {
    let spec = config.to_spec()?;
    match run(&spec) {
        Ok(trace) => {
            write_outputs(dir, config, &trace, None)?;
            Ok(trace)
        }
        Err(RunFailure { error, trace }) => {
            write_outputs(dir, config, &trace, Some(&error))?;
            Err(error)
        }
    }
}

fn output_dir(config: &RunConfig, out: Option<&Path>) -> PathBuf {
    out.map(Path::to_path_buf)
        .or_else(|| config.output.clone())
        .unwrap_or_else(|| PathBuf::from("out"))
}

pub fn cmd_run(config_path: &Path, out: Option<&Path>, seed: Option<u64>) -> i32 {
    let mut config = match RunConfig::load(config_path) {
        Ok(c) => c,
        Err(e) => return report_error(&e),
    };
    if let Some(s) = seed {
        config.seed = s;
    }
    let dir = output_dir(&config, out);
    match execute(&config, &dir) {
        Ok(trace) => {
            log::info!(
                "{} iterations, best {} ({:?}); wrote {}",
                trace.records.len(),
                trace.best_value,
                trace.stop,
                dir.display()
            );
            0
        }
        Err(e) => report_error(&e),
    }
}

pub fn cmd_diagnose(fixture_set: &str, out: Option<&Path>) -> i32 {
    let fixtures = match load_fixture_set(fixture_set) {
        Ok(f) => f,
        Err(e) => return report_error(&e),
    };
    let reports = match run_diagnostics(&fixtures, &DiagnosticsOptions::default()) {
        Ok(r) => r,
        Err(e) => return report_error(&e),
    };
    print!("{}", diagnostics_table(&reports));
    if let Some(dir) = out {
        let written = fs::create_dir_all(dir)
            .map_err(|e| EdaError::io(dir, e))
            .and_then(|_| {
                let text = serde_json::to_string_pretty(&reports).expect("reports serialize");
                write_file(&dir.join("diagnostics.json"), text.as_bytes())
            });
        if let Err(e) = written {
            return report_error(&e);
        }
    }
    let failed: Vec<&Report> = reports.iter().filter(|r| !r.pass).collect();
    if failed.is_empty() {
        0
    } else {
        eprintln!("{}", json!({ "error": "diagnostics_failed", "failed": failed }));
        1
    }
}

pub fn diagnostics_table(reports: &[Report]) -> String {
    let mut s = format!("{:<20} {:<16} {}\n", "check", "fixture", "result");
    for r in reports {
        s.push_str(&format!(
            "{:<20} {:<16} {}\n",
            r.check_name,
            r.fixture,
            if r.pass { "pass" } else { "FAIL" }
        ));
    }
    s
}

/// `config` with `param` set to `value`.
pub fn apply_sweep_value(config: &RunConfig, param: SweepParam, value: &str) -> Result<RunConfig> {
    let field = param.name();
    let bad = |msg: String| EdaError::config(field, msg);
    let real = || value.trim().parse::<f64>().map_err(|_| bad(format!("cannot parse `{value}` as a number")));
    let int = || value.trim().parse::<usize>().map_err(|_| bad(format!("cannot parse `{value}` as an integer")));
    let mut c = config.clone();
    match param {
        SweepParam::Gamma => match c.update {
            UpdateRule::ClosedForm | UpdateRule::MapSmoothed { .. } => {
                c.update = UpdateRule::MapSmoothed { gamma: real()? }
            }
            UpdateRule::Gradient { .. } => return Err(bad("needs update.kind = map_smoothed".into())),
        },
        SweepParam::Alpha | SweepParam::K => match c.update {
            UpdateRule::Gradient { alpha, k } => {
                c.update = if param == SweepParam::Alpha {
                    UpdateRule::Gradient { alpha: real()?, k }
                } else {
                    UpdateRule::Gradient { alpha, k: int()? }
                }
            }
            _ => return Err(bad("needs update.kind = gradient".into())),
        },
        SweepParam::N => c.population = int()?,
        SweepParam::Rho => match c.shaping {
            ShapingSpec::Quantile { .. } => c.shaping = ShapingSpec::Quantile { rho: real()? },
            _ => return Err(bad("needs quantile shaping".into())),
        },
        SweepParam::Beta => match c.shaping {
            ShapingSpec::Exponential { .. } => c.shaping = ShapingSpec::Exponential { beta: real()? },
            _ => return Err(bad("needs exp shaping".into())),
        },
    }
    c.to_spec()?;
    Ok(c)
}

/// One sweep child's row in `sweep.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub index: usize,
    pub value: String,
    pub seed: u64,
    pub trace: std::result::Result<(Option<f64>, f64, Option<usize>, usize), String>,
}

fn summarize(trace: &Trace, target: Option<f64>) -> (Option<f64>, f64, Option<usize>, usize) {
    let hit = target.and_then(|t| trace.records.iter().position(|r| r.best_raw_f >= t - 1e-9).map(|i| i + 1));
    (
        trace.records.last().map(|r| r.best_raw_f),
        trace.best_value,
        hit,
        trace.records.len(),
    )
}

pub fn sweep_csv_string(param: SweepParam, rows: &[SweepRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SWEEP_COLUMNS).expect("memory write");
    let opt = |v: Option<String>| v.unwrap_or_default();
    for r in rows {
        let (status, fin, best, hit, ran, err) = match &r.trace {
            Ok((fin, best, hit, ran)) => (
                "ok",
                opt(fin.map(|v| v.to_string())),
                best.to_string(),
                opt(hit.map(|v| v.to_string())),
                ran.to_string(),
                String::new(),
            ),
            Err(e) => ("failed", String::new(), String::new(), String::new(), String::new(), e.clone()),
        };
        w.write_record([
            r.index.to_string(),
            param.name().to_string(),
            r.value.clone(),
            r.seed.to_string(),
            status.to_string(),
            fin,
            best,
            hit,
            ran,
            err,
        ])
        .expect("memory write");
    }
    String::from_utf8(w.into_inner().expect("memory flush")).expect("csv is utf-8")
}

pub fn cmd_sweep(
    config_path: &Path,
    param: SweepParam,
    values: &[String],
    out: Option<&Path>,
    seed: Option<u64>,
    jobs: usize,
) -> i32 {
    if values.iter().all(|v| v.trim().is_empty()) {
        return report_error(&EdaError::config("values", "the sweep needs at least one value"));
    }
    if jobs == 0 {
        return report_error(&EdaError::config("jobs", "must be >= 1"));
    }
    let mut base = match RunConfig::load(config_path) {
        Ok(c) => c,
        Err(e) => return report_error(&e),
    };
    if let Some(s) = seed {
        base.seed = s;
    }
    let mut children = Vec::with_capacity(values.len());
    for (i, v) in values.iter().enumerate() {
        match apply_sweep_value(&base, param, v) {
            Ok(mut c) => {
                c.seed = base.seed.wrapping_add(i as u64);
                children.push((i, v.trim().to_string(), c));
            }
            Err(e) => return report_error(&e),
        }
    }
    let target = match base.target_value() {
        Ok(t) => t,
        Err(e) => return report_error(&e),
    };
    let dir = output_dir(&base, out);
    if let Err(e) = fs::create_dir_all(&dir) {
        return report_error(&EdaError::io(&dir, e));
    }
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
        Ok(p) => p,
        Err(e) => return report_error(&EdaError::Input(format!("thread pool: {e}"))),
    };
    use rayon::prelude::*;
    let rows: Vec<(SweepRow, Option<i32>)> = pool.install(|| {
        children
            .par_iter()
            .map(|(i, value, config)| {
                let child_dir = dir.join(format!("sweep_{i}"));
                let result = execute(config, &child_dir);
                let code = result.as_ref().err().map(exit_code);
                let row = SweepRow {
                    index: *i,
                    value: value.clone(),
                    seed: config.seed,
                    trace: result.map(|t| summarize(&t, target)).map_err(|e| e.to_string()),
                };
                (row, code)
            })
            .collect()
    });
    let table: Vec<SweepRow> = rows.iter().map(|(r, _)| r.clone()).collect();
    let path = dir.join("sweep.csv");
    if let Err(e) = write_file(&path, sweep_csv_string(param, &table).as_bytes()) {
        return report_error(&e);
    }
    rows.iter().filter_map(|(_, c)| *c).max().unwrap_or(0)
}
