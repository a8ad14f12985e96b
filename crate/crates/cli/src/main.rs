use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use xdiff_core::config::{ExperimentConfig, StudyKind};
use xdiff_core::harness::{run_study, EnsembleResult, Threads};
use xdiff_core::model::{
    eigenvalue_real_parts, eigenvalues_have_positive_real_part, find_detailed_balance_weights, CoefficientMatrix,
};
use xdiff_core::report::write_outputs;
use xdiff_core::Error;

const EXIT_VALIDATION: u8 = 1;
const EXIT_RUNTIME: u8 = 2;

#[derive(Parser)]
#[command(name = "xdiff", version, about = "Stochastic segregation cross-diffusion simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one sample path and write its diagnostics series.
    Simulate(RunArgs),
    /// Strong convergence in time against a fine reference step.
    ConvergenceTime(RunArgs),
    /// Strong convergence in space against a fine reference grid.
    ConvergenceSpace(RunArgs),
    /// Ensemble-mean entropies over a long horizon.
    Longtime(RunArgs),
    /// Report eigenvalues and detailed balance of a coefficient matrix.
    CheckModel(CheckArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `ensemble.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `ensemble.samples`.
    #[arg(long)]
    samples: Option<usize>,
    /// Overrides `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads: a positive integer or `auto`.
    #[arg(long, env = "XDIFF_THREADS", default_value = "auto")]
    threads: String,
}

#[derive(Args)]
struct CheckArgs {
    /// Read `model.A` from this configuration.
    #[arg(long, conflicts_with = "matrix", required_unless_present = "matrix")]
    config: Option<PathBuf>,
    /// Coefficient matrix as JSON rows, e.g. `[[2,1],[1,2]]`.
    #[arg(long)]
    matrix: Option<String>,
}

enum Failure {
    Validation(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config { .. } | Error::InvalidParameter { .. } | Error::DimensionMismatch { .. } => {
                Failure::Validation(e.to_string())
            }
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

fn configure(kind: StudyKind, args: &RunArgs) -> Result<(ExperimentConfig, Threads), Failure> {
    let threads = Threads::parse(&args.threads)?;
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg = cfg.with_seed(seed);
    }
    if let Some(samples) = args.samples {
        cfg = cfg.with_samples(samples)?;
    }
    if let Some(out) = &args.out {
        cfg = cfg.with_output_dir(out.clone());
    }
    Ok((cfg.with_study_kind(kind)?, threads))
}

fn summarize(result: &EnsembleResult) {
    for level in &result.levels {
        println!(
            "h = {:e}: mean error {:e} ± {:e} ({} valid, {} aborted{})",
            level.h,
            level.error.mean,
            level.error.std_error,
            level.n_valid,
            level.n_aborted,
            if level.used { "" } else { ", excluded from fit" }
        );
    }
    if let Some(f) = &result.fit {
        println!("fitted order {:.4} (r² = {:.4})", f.slope, f.r_squared);
    }
    if let Some(f) = &result.decay_fit {
        println!("relative entropy decay rate {:.4} (r² = {:.4})", f.slope, f.r_squared);
    }
    if let Some(reason) = &result.fit_error {
        println!("fit unavailable: {reason}");
    }
    let aborted = result.n_aborted();
    if aborted > 0 {
        println!("{aborted} of {} samples aborted", result.samples.len());
    }
}

fn run(kind: StudyKind, args: &RunArgs) -> Result<(), Failure> {
    let (cfg, threads) = configure(kind, args)?;
    let result = run_study(&cfg, threads)?;
    summarize(&result);
    for path in write_outputs(cfg.output_dir(), &cfg, &result)? {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn check_model(args: &CheckArgs) -> Result<(), Failure> {
    let a = match (&args.config, &args.matrix) {
        (Some(path), _) => ExperimentConfig::load(path)?.params.a,
        (None, Some(text)) => {
            let rows: Vec<Vec<f64>> =
                serde_json::from_str(text).map_err(|e| Failure::Validation(format!("--matrix: {e}")))?;
            CoefficientMatrix::from_rows(&rows)?
        }
        (None, None) => unreachable!("clap requires one source"),
    };
    match eigenvalue_real_parts(&a) {
        Some(re) => println!("eigenvalue real parts: {re:?}"),
        None => println!("eigenvalue real parts: not computed (Lyapunov test used)"),
    }
    let positive = eigenvalues_have_positive_real_part(&a);
    println!("eigenvalues in the right half-plane: {}", if positive { "yes" } else { "NO" });
    match find_detailed_balance_weights(&a) {
        Ok(pi) => println!("detailed balance: satisfied, pi = {:?}", pi.as_slice()),
        Err(Error::NotReversible(reason)) => println!("detailed balance: NOT satisfied ({reason})"),
        Err(e) => return Err(e.into()),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match &cli.command {
        Command::Simulate(a) => run(StudyKind::Simulate, a),
        Command::ConvergenceTime(a) => run(StudyKind::ConvergenceTime, a),
        Command::ConvergenceSpace(a) => run(StudyKind::ConvergenceSpace, a),
        Command::Longtime(a) => run(StudyKind::Longtime, a),
        Command::CheckModel(a) => check_model(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_VALIDATION)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
