use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use reslogit::{cli, Error, Result};

/// Residual logit discrete choice models.
#[derive(Parser)]
#[command(name = "reslogit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model and write the report, coefficients and learning curve.
    Train(RunArgs),
    /// Score a dataset with a trained model.
    Evaluate(RunArgs),
    /// Point and arc elasticities for a trained model.
    Elasticity(RunArgs),
    /// Reproduce the red/blue bus table and check it.
    DemoRedbus(DemoArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DemoArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Also write the table to `redbus.txt` here.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var("RESLOGIT_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::InvalidArgument(format!("RESLOGIT_THREADS must be a positive integer, got `{v}`")))?;
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    #[cfg(not(feature = "parallel"))]
    let _ = n;
    Ok(())
}

fn run(cli: Cli) -> Result<String> {
    configure_threads()?;
    match cli.command {
        Command::Train(a) => cli::cmd_train(&cli::load_run_config(&a.config, a.seed, a.out.as_deref())?),
        Command::Evaluate(a) => cli::cmd_evaluate(&cli::load_run_config(&a.config, a.seed, a.out.as_deref())?),
        Command::Elasticity(a) => cli::cmd_elasticity(&cli::load_run_config(&a.config, a.seed, a.out.as_deref())?),
        Command::DemoRedbus(a) => {
            let text = cli::cmd_demo_redbus()?;
            if let Some(dir) = a.out {
                reslogit::io::write_atomic(&dir.join("redbus.txt"), &text)?;
            }
            Ok(text)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            eprint!("{}", e.render());
            let first = e.to_string();
            let first = first.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error: usage: {first}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            let message = e.to_string().replace('\n', " ");
            eprintln!("error: {}: {}", e.code(), message);
            ExitCode::FAILURE
        }
    }
}
