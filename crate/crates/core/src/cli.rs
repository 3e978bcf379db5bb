//! Command-line front end. [`run`] takes explicit streams so the whole
//! surface can be driven from tests.

use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::bootstrap::{bootstrap_variance, coverage_experiment, write_coverage_csv, BootstrapConfig};
use crate::em::{fit_em, EmConfig, PatternCounts};
use crate::error::{Error, Result};
use crate::estimators::{estimated_matches, lfdse};
use crate::linkage::{classify_log, derive_thresholds, log_match_weight, ComparisonPattern};
use crate::report::{fit_report, parse_pattern_counts, Report};
use crate::simulation::{paper60, parse_scenarios, run_suite, table2, write_metrics_csv, Scenario, DEFAULT_REPS};

#[derive(Debug, Parser)]
#[command(name = "lfdse", version, about = "Linkage-free dual system estimation")]
pub struct RunConfig {
    #[command(subcommand)]
    pub command: Command,

    /// Master seed for every random draw.
    #[arg(long, global = true, default_value_t = 42)]
    pub seed: u64,

    /// Worker threads (defaults to available parallelism).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Output file (defaults to standard output).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run simulation scenarios and write a metrics CSV.
    Simulate(SimulateArgs),
    /// Fit the linkage model to pattern counts and estimate the population size.
    Estimate(EstimateArgs),
    /// Parametric bootstrap of the estimate, or a coverage experiment with --coverage.
    Bootstrap(BootstrapArgs),
    /// Classify comparison patterns read from standard input.
    Classify(ClassifyArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Built-in scenario set: `paper60` or `table2`.
    #[arg(long, conflicts_with = "config")]
    pub preset: Option<String>,
    /// Scenario file (TOML, `[[scenario]]` tables).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Replicates per scenario, overriding the file or preset.
    #[arg(long)]
    pub reps: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// Pattern-count file with lines `b1,...,bk,count`.
    #[arg(long)]
    pub config: PathBuf,
    /// Size of the first list.
    #[arg(long)]
    pub n1: u64,
    /// Size of the second list.
    #[arg(long)]
    pub n2: u64,
}

#[derive(Debug, Args)]
pub struct BootstrapArgs {
    /// Pattern-count file, or a scenario file when --coverage is given.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Built-in scenario set for --coverage (`table2` or `paper60`).
    #[arg(long, conflicts_with = "config")]
    pub preset: Option<String>,
    #[arg(long)]
    pub n1: Option<u64>,
    #[arg(long)]
    pub n2: Option<u64>,
    /// Bootstrap replicates.
    #[arg(long, default_value_t = crate::bootstrap::DEFAULT_REPLICATES)]
    pub replicates: usize,
    /// Confidence level of the interval.
    #[arg(long, default_value_t = crate::bootstrap::DEFAULT_CI_LEVEL)]
    pub ci: f64,
    /// Interval construction: `normal` (estimate ± z·se) or `percentile`.
    #[arg(long, default_value = "normal")]
    pub ci_method: String,
    /// Run the coverage experiment over this many simulated datasets per scenario.
    #[arg(long, value_name = "DATASETS")]
    pub coverage: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    /// Fitted-parameter report as written by `estimate`.
    #[arg(long)]
    pub config: PathBuf,
    /// Admissible probability of linking a non-match.
    #[arg(long)]
    pub mu: f64,
    /// Admissible probability of not linking a match.
    #[arg(long)]
    pub lambda: f64,
}

/// Parses `args` (including the program name) and runs the subcommand.
/// Returns the process exit status.
pub fn run<I, T>(args: I, stdin: &mut dyn BufRead, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let config = match RunConfig::try_parse_from(args) {
        Ok(config) => config,
        Err(e) => {
            let _ = write!(stderr, "{e}");
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&config, stdin, stdout, stderr) {
        Ok(status) => status,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            match e {
                Error::InvalidConfig(_) => 2,
                _ => 1,
            }
        }
    }
}

fn execute(config: &RunConfig, stdin: &mut dyn BufRead, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<i32> {
    let threads = match config.threads {
        Some(0) => return Err(Error::InvalidConfig("--threads must be at least 1".into())),
        Some(t) => t,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot start worker pool: {e}")))?;

    // Worker output is buffered and written from this thread.
    let mut buffer = Vec::new();
    let mut diagnostics = Vec::new();
    let status = match &config.command {
        Command::Classify(args) => cmd_classify(args, stdin, &mut buffer, &mut diagnostics),
        command => pool.install(|| match command {
            Command::Simulate(args) => cmd_simulate(args, config.seed, threads, &mut buffer, &mut diagnostics),
            Command::Estimate(args) => cmd_estimate(args, &mut buffer, &mut diagnostics),
            Command::Bootstrap(args) => cmd_bootstrap(args, config.seed, &mut buffer, &mut diagnostics),
            Command::Classify(_) => unreachable!(),
        }),
    };
    let _ = stderr.write_all(&diagnostics);
    let status = status?;
    emit(config.out.as_deref(), &buffer, stdout)?;
    Ok(status)
}

fn emit(out: Option<&Path>, bytes: &[u8], stdout: &mut dyn Write) -> Result<()> {
    match out {
        Some(path) => fs::write(path, bytes).map_err(|e| Error::io(path, e)),
        None => stdout.write_all(bytes).map_err(|e| Error::io("<stdout>", e)),
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn preset(name: &str, reps: usize, seed: u64) -> Result<Vec<Scenario>> {
    match name {
        "paper60" => Ok(paper60(reps, seed)),
        "table2" => Ok(table2(reps, seed)),
        other => Err(Error::InvalidConfig(format!(
            "unknown preset {other:?} (expected paper60 or table2)"
        ))),
    }
}

fn load_scenarios(preset_name: Option<&str>, config: Option<&Path>, reps: Option<usize>, seed: u64) -> Result<Vec<Scenario>> {
    let mut scenarios = match (preset_name, config) {
        (Some(name), _) => preset(name, reps.unwrap_or(DEFAULT_REPS), seed)?,
        (None, Some(path)) => parse_scenarios(&read(path)?, &path.display().to_string(), DEFAULT_REPS, seed)?,
        (None, None) => {
            return Err(Error::InvalidConfig(
                "no scenarios: pass --preset <name> or --config <file>".into(),
            ))
        }
    };
    if let Some(reps) = reps {
        if reps == 0 {
            return Err(Error::InvalidConfig("--reps must be at least 1".into()));
        }
        for s in &mut scenarios {
            s.reps = reps;
        }
    }
    Ok(scenarios)
}

pub fn cmd_simulate(args: &SimulateArgs, seed: u64, threads: usize, out: &mut dyn Write, stderr: &mut dyn Write) -> Result<i32> {
    let scenarios = load_scenarios(args.preset.as_deref(), args.config.as_deref(), args.reps, seed)?;
    let rows = run_suite(&scenarios, threads)?;
    write_metrics_csv(&mut *out, &scenarios, &rows)?;
    let mut status = 0;
    for row in &rows {
        if let Err(e) = row {
            let _ = writeln!(stderr, "error: {e}");
            status = 1;
        }
    }
    Ok(status)
}

fn load_counts(path: &Path, n1: u64, n2: u64) -> Result<PatternCounts> {
    let counts = parse_pattern_counts(&read(path)?, &path.display().to_string())?;
    if counts.is_empty() {
        return Err(Error::EmptyInput(format!("{} contains no record pairs", path.display())));
    }
    if n1.checked_mul(n2) != Some(counts.total()) {
        return Err(Error::InconsistentInput(format!(
            "pattern counts total {} but n1 x n2 = {n1} x {n2}",
            counts.total()
        )));
    }
    Ok(counts)
}

fn estimate_report(counts: &PatternCounts, n1: u64, n2: u64, stderr: &mut dyn Write) -> Result<(Report, crate::em::EmFit)> {
    let fit = fit_em(counts, &EmConfig::default_for(counts.k(), counts.total())?)?;
    if !fit.converged {
        let _ = writeln!(stderr, "warning: EM stopped after {} iterations without converging", fit.iterations);
    }
    let mut report = fit_report(&fit);
    report
        .push("n1", n1)
        .push("n2", n2)
        .push("omega", counts.total())
        .push("n11_hat", estimated_matches(fit.params.p, counts.total())?)
        .push("n_hat_l", lfdse(fit.params.p)?.value);
    Ok((report, fit))
}

pub fn cmd_estimate(args: &EstimateArgs, out: &mut dyn Write, stderr: &mut dyn Write) -> Result<i32> {
    let counts = load_counts(&args.config, args.n1, args.n2)?;
    let (report, _) = estimate_report(&counts, args.n1, args.n2, stderr)?;
    write!(out, "{report}").map_err(|e| Error::io("<output>", e))?;
    Ok(0)
}

pub fn cmd_bootstrap(args: &BootstrapArgs, seed: u64, out: &mut dyn Write, stderr: &mut dyn Write) -> Result<i32> {
    let config = BootstrapConfig {
        ci_method: args.ci_method.parse()?,
        ..BootstrapConfig::new(args.replicates, args.ci, seed)?
    };
    if let Some(outer) = args.coverage {
        let scenarios = load_scenarios(args.preset.as_deref(), args.config.as_deref(), None, seed)?;
        let mut rows = Vec::new();
        let mut status = 0;
        for s in scenarios {
            match coverage_experiment(&s, outer, &config) {
                Ok(r) => rows.push((s, r)),
                Err(e) => {
                    let _ = writeln!(stderr, "error: {e}");
                    status = 1;
                }
            }
        }
        write_coverage_csv(&mut *out, &rows)?;
        return Ok(status);
    }

    let path = args
        .config
        .as_deref()
        .ok_or_else(|| Error::InvalidConfig("bootstrap needs --config <pattern-count file>".into()))?;
    let (n1, n2) = match (args.n1, args.n2) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::InvalidConfig("bootstrap needs --n1 and --n2".into())),
    };
    let counts = load_counts(path, n1, n2)?;
    let (mut report, fit) = estimate_report(&counts, n1, n2, stderr)?;
    let boot = bootstrap_variance(&counts, n1, n2, &fit, &config)?;
    report
        .push("replicates", config.replicates)
        .push("ci_level", config.ci_level)
        .push("ci_method", &args.ci_method)
        .push("se", boot.se)
        .push("rse", boot.rse)
        .push("ci_low", boot.ci_low)
        .push("ci_high", boot.ci_high)
        .push("degenerate_count", boot.degenerate_count);
    write!(out, "{report}").map_err(|e| Error::io("<output>", e))?;
    Ok(0)
}

pub fn cmd_classify(args: &ClassifyArgs, stdin: &mut dyn BufRead, out: &mut dyn Write, stderr: &mut dyn Write) -> Result<i32> {
    let report = Report::parse(&read(&args.config)?, &args.config.display().to_string())?;
    let params = report.linkage_params()?;
    let thresholds = derive_thresholds(&params, args.mu, args.lambda)?;
    let mut status = 0;
    for (i, line) in stdin.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<stdin>", e))?;
        let text = line.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        let classified = text.parse::<ComparisonPattern>().and_then(|g| {
            let lw = log_match_weight(&params, &g)?;
            Ok((g, lw.exp(), classify_log(lw, &thresholds)))
        });
        match classified {
            Ok((g, w, d)) => writeln!(out, "{g},{w},{d}").map_err(|e| Error::io("<output>", e))?,
            Err(e) => {
                let _ = writeln!(stderr, "error: <stdin>:{}: {e}", i + 1);
                status = 1;
            }
        }
    }
    Ok(status)
}
