use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use saem_core::experiment::{
    exit_code, load_config, run_experiment, validate_config, RunOptions, RunSummary, EXIT_ALL_DIVERGED, OUTPUT_ROOT_ENV,
};
use saem_core::Error;

/// Batch runner for SAEM experiments.
#[derive(Parser)]
#[command(name = "saem", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write its traces and summaries.
    Run {
        config: PathBuf,
        /// Output root (overrides the environment variable).
        #[arg(long)]
        output_root: Option<PathBuf>,
    },
    /// Check a config: unknown fields, constraint violations, effective defaults.
    Validate { config: PathBuf },
    /// Run an experiment over a list of Langevin stepsizes.
    Sweep {
        config: PathBuf,
        /// Comma-separated stepsizes, e.g. `1e-3,1e-2,1e-1`.
        #[arg(long, value_delimiter = ',', required = true, num_args = 1..)]
        eta: Vec<f64>,
        #[arg(long)]
        output_root: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run { config, output_root } => run(&config, RunOptions { output_root, ..Default::default() }),
        Command::Sweep { config, eta, output_root } => {
            run(&config, RunOptions { etas: Some(eta), sweep: true, output_root })
        }
        Command::Validate { config } => validate(&config),
    };
    ExitCode::from(code as u8)
}

fn fail(e: &Error) -> i32 {
    eprintln!("error: {e}");
    exit_code(e)
}

fn run(config: &PathBuf, opts: RunOptions) -> i32 {
    let loaded = match load_config(config) {
        Ok(l) => l,
        Err(e) => return fail(&e),
    };
    match run_experiment(&loaded, &opts) {
        Ok(summary) => {
            print_summary(&summary);
            if summary.all_diverged() {
                eprintln!("error: every replicate diverged");
                EXIT_ALL_DIVERGED
            } else {
                0
            }
        }
        Err(e) => fail(&e),
    }
}

fn print_summary(s: &RunSummary) {
    println!("{} -> {} (config {})", s.experiment, s.out_dir.display(), &s.meta.config_hash[..12]);
    for c in &s.cells {
        let lpd = match (c.lpd_mean, c.lpd_ci) {
            (Some(m), Some((lo, hi))) => format!("  lpd {m:.4} [{lo:.4}, {hi:.4}]"),
            _ => String::new(),
        };
        println!(
            "  {:<4} eta={:<8e} diverged {}/{}  accept {:.3}{lpd}",
            c.kernel.name(),
            c.eta,
            c.n_diverged,
            c.n_replicates,
            c.mean_accept_rate
        );
    }
    for b in &s.bias {
        println!(
            "  {} bias floor: monotone on {}/{} seeds -> {}",
            b.kernel.name(),
            b.report.monotone_seeds,
            b.report.seeds.len(),
            if b.report.monotone { "monotone" } else { "not monotone" }
        );
        for r in &b.report.rows {
            println!("    eta={:<8e} plateau {:.4e} (se {:.2e})", r.eta, r.plateau, r.plateau_se);
        }
    }
}

fn validate(config: &PathBuf) -> i32 {
    let loaded = match load_config(config) {
        Ok(l) => l,
        Err(e) => return fail(&e),
    };
    let report = validate_config(&loaded, None);
    for f in &report.unknown_fields {
        println!("unknown field: {f}");
    }
    for v in &report.violations {
        println!("violation: {v}");
    }
    for m in &report.missing_files {
        println!("missing data: {m}");
    }
    match report.effective.to_toml() {
        Ok(t) => println!("# effective configuration (output root: ${OUTPUT_ROOT_ENV} or the working directory)\n{t}"),
        Err(e) => return fail(&e),
    }
    if report.is_runnable() {
        println!("ok: runnable");
        0
    } else {
        1
    }
}
