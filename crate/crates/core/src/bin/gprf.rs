use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};

use gprf::cli::{cmd_eval, cmd_fit, cmd_generate, cmd_verify};
use gprf::config::ExperimentConfig;
use gprf::objective::AssemblyFault;
use gprf::GprfError;

#[derive(Parser)]
#[command(name = "gprf", version, about = "Gaussian process random field experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset and its metadata sidecar.
    Generate {
        #[arg(short, long)]
        config: PathBuf,
    },
    /// Fit latent locations with the configured method.
    Fit {
        #[arg(short, long)]
        config: PathBuf,
    },
    /// Recompute metrics from a saved X_hat.
    Eval {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(long)]
        x_hat: Option<PathBuf>,
    },
    /// Run the built-in exactness checks.
    Verify {
        /// Corrupt the precision assembly to confirm the checks catch it.
        #[arg(long, value_enum)]
        inject_fault: Option<Fault>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Fault {
    FlipQ12Sign,
}

fn run(cli: Cli, origin: Instant) -> Result<bool, GprfError> {
    match cli.command {
        Command::Generate { config } => {
            let cfg = ExperimentConfig::from_file(&config)?;
            let path = cmd_generate(&cfg)?;
            println!("dataset={}", path.display());
        }
        Command::Fit { config } => {
            let cfg = ExperimentConfig::from_file(&config)?;
            let s = cmd_fit(&cfg, origin)?;
            println!("method={}", s.method.name());
            println!("blocks={} max_block_size={} edges={}", s.n_blocks, s.max_block_size, s.n_edges);
            println!("initial_mean_error={}", s.initial_mean_error);
            println!("final_mean_error={}", s.final_mean_error);
            println!("final_objective={}", s.final_objective);
            println!("iterations={} termination={}", s.iterations, s.termination);
            println!("wall_time_s={:.3}", s.wall_time_s);
            println!("output_dir={}", s.output_dir.display());
        }
        Command::Eval { config, x_hat } => {
            let cfg = ExperimentConfig::from_file(&config)?;
            let s = cmd_eval(&cfg, x_hat.as_deref())?;
            println!("objective={}", s.objective);
            println!("initial_mean_error={}", s.initial_mean_error);
            println!("mean_error={}", s.mean_error);
        }
        Command::Verify { inject_fault } => {
            let fault = match inject_fault {
                Some(Fault::FlipQ12Sign) => AssemblyFault::FlipOffDiagonalSign,
                None => AssemblyFault::None,
            };
            let report = cmd_verify(fault)?;
            for c in &report.checks {
                println!(
                    "{} {:<34} residual={:.3e} tolerance={:.1e}",
                    if c.passed() { "PASS" } else { "FAIL" },
                    c.name,
                    c.residual,
                    c.tolerance
                );
            }
            return Ok(report.all_passed());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let origin = Instant::now();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse(), origin) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
