//! Command-line front end: cubature validation, KLV solves, convergence
//! sweeps, Monte Carlo references and the flow/tensor gap study.
//!
//! [`run`] is the whole program; `main` only forwards `argv` and the exit
//! code. Exit codes: 0 success, 1 validation or numerical failure,
//! 2 usage error. Failures print one `klv: <kind>: <reason>` line on stderr.

pub mod config;
pub mod experiments;
pub mod reference;
pub mod slope;

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use klv_core::cubature::DEFAULT_VALIDATION_TOL;
use klv_core::{brownian_expected_signature, CubatureFormula};
use serde::Serialize;

use crate::config::{builtin, Experiment};

pub const THREADS_ENV: &str = "KLV_THREADS";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Failure(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Failure(_) => 1,
            CliError::Usage(_) => 2,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Failure(_) => "failure",
            CliError::Usage(_) => "usage",
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "klv", version, about = "Cubature on Wiener space: validation, KLV solves and rate studies")]
struct Cli {
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for CSV/JSON artifacts.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: $KLV_THREADS, else all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Tolerance for validation.
    #[arg(long, global = true)]
    tol: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a cubature formula against the Brownian expected signature.
    ValidateCubature {
        /// A formula file, or `builtin:degree3:<d>` / `builtin:degree5_d1`.
        source: String,
        /// Graded degree to check (default: the formula's own degree).
        #[arg(long)]
        degree: Option<usize>,
    },
    /// Print the truncated expected signature of Brownian motion.
    ExpectedSignature {
        #[arg(long)]
        dimension: usize,
        #[arg(long)]
        degree: usize,
        #[arg(long, default_value_t = 1.0)]
        horizon: f64,
    },
    /// One KLV run from a configuration.
    Solve {
        /// Number of steps (default: the first entry of k_list).
        #[arg(long)]
        k: Option<usize>,
    },
    /// Sweep k_list, write convergence.csv and summary.json.
    Converge,
    /// Euler–Maruyama estimate of E[f(X_T)].
    McReference,
    /// Flow versus tensor approximation gap on a random affine system.
    LemmaGap {
        #[arg(long, default_value_t = 3)]
        degree: usize,
        #[arg(long, default_value_t = 1024)]
        substeps: usize,
    },
}

/// Runs the CLI on `argv` (including the program name) and returns the
/// exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let msg = e.to_string();
            let line = msg.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            eprintln!("klv: usage: {line}");
            return 2;
        }
    };
    match with_threads(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("klv: {}: {}", e.kind(), e.to_string().replace('\n', " "));
            e.exit_code()
        }
    }
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>, CliError> {
    if let Some(n) = flag {
        return Ok(Some(n));
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::Usage(format!("{THREADS_ENV}='{v}' is not a thread count"))),
        Err(_) => Ok(None),
    }
}

fn with_threads(cli: &Cli) -> Result<(), CliError> {
    match thread_count(cli.threads)? {
        Some(0) => Err(CliError::Usage("thread count must be positive".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Failure(e.to_string()))?
            .install(|| dispatch(cli)),
        None => dispatch(cli),
    }
}

fn load_experiment(cli: &Cli) -> Result<Experiment, CliError> {
    let path = cli.config.as_ref().ok_or_else(|| CliError::Usage("this command needs --config".into()))?;
    Experiment::load(path)
}

fn write_artifact(out: Option<&Path>, name: &str, contents: &str) -> Result<(), CliError> {
    match out {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| CliError::Failure(format!("{}: {e}", dir.display())))?;
            let p = dir.join(name);
            fs::write(&p, contents).map_err(|e| CliError::Failure(format!("{}: {e}", p.display())))
        }
        None => {
            println!("{contents}");
            Ok(())
        }
    }
}

fn to_json<T: Serialize>(v: &T) -> Result<String, CliError> {
    serde_json::to_string_pretty(v).map_err(|e| CliError::Failure(e.to_string()))
}

fn load_formula(source: &str) -> Result<CubatureFormula, CliError> {
    if let Some(rest) = source.strip_prefix("builtin:") {
        let mut parts = rest.split(':');
        let name = parts.next().unwrap_or_default();
        let d = match parts.next() {
            Some(d) => d.parse().map_err(|_| CliError::Usage(format!("bad dimension in '{source}'")))?,
            None => 1,
        };
        return builtin(name, d);
    }
    CubatureFormula::from_file(source).map_err(|e| CliError::Usage(e.to_string()))
}

fn dispatch(cli: &Cli) -> Result<(), CliError> {
    let out = cli.out.as_deref();
    match &cli.command {
        Command::ValidateCubature { source, degree } => {
            let q = load_formula(source)?;
            let degree = degree.unwrap_or(q.degree());
            let tol = cli.tol.unwrap_or(DEFAULT_VALIDATION_TOL);
            let report = q.validate(degree, tol).map_err(|e| CliError::Usage(e.to_string()))?;
            write_artifact(out, "validation.json", &to_json(&report)?)?;
            if report.passed {
                Ok(())
            } else {
                Err(CliError::Failure(format!(
                    "cubature fails at degree {degree}: word {} has defect {:.3e} > {tol:e}",
                    report.worst_word, report.max_defect
                )))
            }
        }
        Command::ExpectedSignature { dimension, degree, horizon } => {
            let t = brownian_expected_signature(*dimension, *degree, *horizon)
                .map_err(|e| CliError::Usage(e.to_string()))?;
            write_artifact(out, "expected_signature.json", &to_json(&t.to_json())?)
        }
        Command::Solve { k } => {
            let exp = load_experiment(cli)?;
            let k = k.unwrap_or(exp.config.partition.k_list[0]);
            let seed = cli.seed.unwrap_or(exp.config.seed);
            let result = experiments::solve(&exp, k, seed)?;
            let reference = reference::reference(&exp, seed)?;
            #[derive(Serialize)]
            struct SolveOutput<'a> {
                k: usize,
                gamma: f64,
                result: &'a klv_core::solver::SolverResult,
                reference: reference::Reference,
                abs_error: f64,
            }
            let abs_error = (result.value - reference.value).abs();
            let body = SolveOutput { k, gamma: exp.gamma, result: &result, reference, abs_error };
            write_artifact(out, "solve.json", &to_json(&body)?)
        }
        Command::Converge => {
            let exp = load_experiment(cli)?;
            let seed = cli.seed.unwrap_or(exp.config.seed);
            let reference = reference::reference(&exp, seed)?;
            let summary = experiments::converge(&exp, reference, seed)?;
            let dir = out.unwrap_or(Path::new("."));
            write_artifact(Some(dir), "convergence.csv", &experiments::convergence_csv(&summary))?;
            write_artifact(Some(dir), "summary.json", &to_json(&summary)?)?;
            match &summary.fit {
                Some(f) => println!(
                    "slope {:.4} ± {:.4} (expected {:.1}), reference {:?}",
                    f.slope, f.stderr, summary.expected_slope, summary.reference.source
                ),
                None => println!("no slope: {}", summary.fit_error.as_deref().unwrap_or("")),
            }
            Ok(())
        }
        Command::McReference => {
            let exp = load_experiment(cli)?;
            let seed = cli.seed.unwrap_or(exp.config.seed);
            let r = reference::euler_reference(&exp, seed)?;
            write_artifact(out, "mc_reference.json", &to_json(&r)?)
        }
        Command::LemmaGap { degree, substeps } => {
            let seed = cli.seed.unwrap_or(0);
            let report = experiments::lemma_gap(*degree, seed, &[0.4, 0.2, 0.1, 0.05], *substeps)?;
            write_artifact(out, "lemma_gap.json", &to_json(&report)?)?;
            if report.fit.slope < report.expected_slope - 0.3 {
                return Err(CliError::Failure(format!(
                    "gap slope {:.3} below {:.2}",
                    report.fit.slope,
                    report.expected_slope - 0.3
                )));
            }
            Ok(())
        }
    }
}
