use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use firefit_cli::{cmd_fit, cmd_gen_case, cmd_ignition, cmd_init, CliError, RunConfig};

#[derive(Parser)]
#[command(name = "firefit", version, about = "Fit fire arrival times to perimeters and detections")]
struct Cli {
    /// TOML run configuration; defaults describe the concentric-circles case.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for synthetic detection sampling (overrides `seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the concentric-circles case with its exact solution.
    GenCase,
    /// Compute initial fields for every exponent in `smoother.alphas`.
    Init,
    /// Initialize and run the multiscale fit.
    Fit,
    /// Rank candidate ignitions by detection log-likelihood.
    Ignition,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(out) = cli.out {
        cfg.output_dir = out;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    match cli.command {
        Command::GenCase => {
            let case = cmd_gen_case(&cfg)?;
            println!("wrote case to {}", case.config_path.display());
        }
        Command::Init => {
            for r in cmd_init(&cfg)? {
                println!("alpha {:.2}: funnel {:.6e}, {}", r.alpha, r.funnel, r.path.display());
            }
        }
        Command::Fit => {
            let fit = cmd_fit(&cfg)?;
            println!(
                "objective {:.6e} -> {:.6e} in {} line searches; wrote {}",
                fit.report.initial_objective,
                fit.report.final_objective(),
                fit.report.records.len(),
                fit.field_path.display()
            );
        }
        Command::Ignition => {
            let ranked = cmd_ignition(&cfg)?;
            if let Some(best) = ranked.first() {
                let c = best.candidate;
                println!("best ignition ({}, {}) at t = {}: loglik {:.6e}", c.x, c.y, c.t, best.loglik);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
