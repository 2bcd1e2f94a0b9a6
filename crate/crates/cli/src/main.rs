use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mixreg_cli::{load_config, resolve_output_dir, run, Command, OUTPUT_DIR_ENV};

#[derive(Parser)]
#[command(name = "mixreg", version, about = "Mixed local-nonlocal boundary regularity experiments")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides the environment and the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Grid spacing overriding `grid.h`.
    #[arg(long, global = true)]
    grid_h: Option<f64>,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Solve the configured problem.
    Solve,
    /// Solve and run the boundary regularity measurements.
    Regularity,
    /// Verify the barrier inequalities.
    Barriers,
    /// Solve the overdetermined problem and test for symmetry.
    Serrin,
    /// Check kernel hypotheses and closed forms.
    CheckKernel,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn execute(cli: &Cli) -> anyhow::Result<()> {
    let Some(path) = &cli.config else {
        anyhow::bail!("--config is required");
    };
    let mut config = load_config(path)?;
    if let Some(h) = cli.grid_h {
        if !(h > 0.0) {
            anyhow::bail!("--grid-h must be positive");
        }
        config.grid.h = h;
    }
    if let Some(n) = cli.workers {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let command = match cli.command {
        Cmd::Solve => Command::Solve,
        Cmd::Regularity => Command::Regularity,
        Cmd::Barriers => Command::Barriers,
        Cmd::Serrin => Command::Serrin,
        Cmd::CheckKernel => Command::CheckKernel,
    };
    let out = resolve_output_dir(cli.out.as_deref(), std::env::var(OUTPUT_DIR_ENV).ok(), &config);
    let started = std::time::Instant::now();
    let summary = run(&config, command, &out)?;
    for (name, state) in &summary.flags {
        eprintln!("{name}: {state}");
    }
    eprintln!("wrote {} in {:.1}s", out.display(), started.elapsed().as_secs_f64());
    Ok(())
}
