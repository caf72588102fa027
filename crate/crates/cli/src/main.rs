use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qbo_cli::config::{resolve, ConfigSources};
use qbo_cli::gradcheck::{gradcheck, DEFAULT_TRIALS};
use qbo_cli::oracle::oracle;
use qbo_cli::surface::{surface, SURFACE_HEADER};
use qbo_cli::{run, write_csv, write_json, CliError, EXIT_OK, EXIT_VALIDATION};
use qbo_core::acquisition::Family;
use qbo_core::par::Parallelism;

#[derive(Parser)]
#[command(name = "qbo", version, about = "Parallel Bayesian optimization benchmarks and estimator checks")]
struct Cli {
    /// Cap on worker threads (1 runs everything sequentially).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the optimizer comparison benchmark.
    Run(RunArgs),
    /// Compare pathwise gradients with finite differences.
    Gradcheck(GradcheckArgs),
    /// Compare Monte Carlo estimates with closed forms and quadrature.
    Oracle(OracleArgs),
    /// Write a q = 2 acquisition surface over a 1-d domain.
    Surface(SurfaceArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config field, e.g. `--set optimizer.eval_budget=256`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Output directory (overrides `output_dir`).
    #[arg(long)]
    output: Option<PathBuf>,
    /// d = 8, q = 8, 256 evaluations, 16 tasks.
    #[arg(long)]
    full_scale: bool,
    /// Master seed (overrides `master_seed`).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Comma-separated families; all by default.
    #[arg(long, value_delimiter = ',')]
    families: Vec<Family>,
    #[arg(long, default_value_t = DEFAULT_TRIALS)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "results")]
    output: PathBuf,
    /// Multiplies the analytic gradient; for testing the checker.
    #[arg(long, default_value_t = 1.0, hide = true)]
    grad_scale: f64,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long, value_delimiter = ',')]
    families: Vec<Family>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "results")]
    output: PathBuf,
}

#[derive(Args)]
struct SurfaceArgs {
    #[arg(long)]
    family: Family,
    #[arg(long, default_value_t = 64)]
    grid: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "results")]
    output: PathBuf,
}

fn families_or_all(f: Vec<Family>) -> Vec<Family> {
    if f.is_empty() {
        Family::ALL.to_vec()
    } else {
        f
    }
}

fn parallelism(threads: Option<usize>) -> Result<Parallelism, CliError> {
    match threads {
        Some(0) => Err(CliError::Config("--threads must be at least 1".into())),
        Some(1) => Ok(Parallelism::Sequential),
        Some(_n) => {
            #[cfg(feature = "parallel")]
            rayon::ThreadPoolBuilder::new()
                .num_threads(_n)
                .build_global()
                .map_err(|e| CliError::Runtime(e.to_string()))?;
            Ok(Parallelism::default())
        }
        None => Ok(Parallelism::default()),
    }
}

fn execute(cli: Cli) -> Result<u8, CliError> {
    let par = parallelism(cli.threads)?;
    match cli.command {
        Command::Run(a) => {
            let config = resolve(&ConfigSources {
                path: a.config,
                full_scale: a.full_scale,
                sets: a.sets,
                seed: a.seed,
                output: a.output,
            })?;
            let outcome = run::run(&config, par)?;
            println!("{} cells written to {}", outcome.cells, outcome.output_dir.display());
            for s in &outcome.summary {
                println!(
                    "{:<8} {:<6} median {:>8.3}  iqr {:>6.3}  (n = {})",
                    s.family, s.optimizer, s.median, s.iqr, s.n
                );
            }
            for t in &outcome.refined_tasks {
                eprintln!("warning: task {t} maximum was re-estimated after an observation exceeded it");
            }
            Ok(EXIT_OK)
        }
        Command::Gradcheck(a) => {
            let report = gradcheck(&families_or_all(a.families), a.trials, a.seed, a.grad_scale, par);
            let path = a.output.join("report.json");
            write_json(&path, &report)?;
            let failed = report.trials.iter().filter(|t| !t.passed).count();
            println!("gradcheck: {} draws, {failed} failed; report at {}", report.trials.len(), path.display());
            Ok(if report.passed { EXIT_OK } else { EXIT_VALIDATION })
        }
        Command::Oracle(a) => {
            let report = oracle(&families_or_all(a.families), a.seed, par);
            let path = a.output.join("report.json");
            write_json(&path, &report)?;
            let failed = report.entries.iter().filter(|e| !e.passed).count();
            println!("oracle: {} entries, {failed} failed; report at {}", report.entries.len(), path.display());
            Ok(if report.passed { EXIT_OK } else { EXIT_VALIDATION })
        }
        Command::Surface(a) => {
            let rows = surface(a.family, a.grid, a.seed, par)?;
            let path = a.output.join(format!("surface_{}.csv", a.family.name()));
            write_csv(&path, &SURFACE_HEADER, &rows)?;
            println!("{} rows written to {}", rows.len(), path.display());
            Ok(EXIT_OK)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("qbo: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
