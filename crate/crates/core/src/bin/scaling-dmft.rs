use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use scaling_dmft::experiment::{self, ExperimentConfig};
use scaling_dmft::Error;

#[derive(Parser)]
#[command(version, about = "Run and inspect scaling-law experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute the sweep described by a config.
    Run(Common),
    /// Check a config and estimate memory without running it.
    Validate(Common),
    /// Pretty-print the fits of a finished run.
    Report(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory (overrides `output_dir`).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[arg(long, value_name = "K", default_value_t = 0)]
    threads: usize,
    /// Base seed (overrides `base_seed`).
    #[arg(long, value_name = "S")]
    seed: Option<u64>,
}

const EXIT_PARTIAL: u8 = 1;
const EXIT_CONFIG: u8 = 2;

fn load(args: &Common) -> Result<ExperimentConfig, Error> {
    let path = args.config.as_ref().ok_or_else(|| Error::Config {
        location: "--config".into(),
        message: "a config file is required".into(),
    })?;
    let mut config = ExperimentConfig::from_path(path)?;
    if let Some(seed) = args.seed {
        config.base_seed = seed;
    }
    Ok(config)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => load(args).and_then(|config| {
            let out = experiment::resolve_output(&config, args.out.as_deref())?;
            let manifest = experiment::run(&config, &out, args.threads)?;
            let failed = manifest.failed();
            println!(
                "{} points in {:.1}s, {failed} failed; outputs in {}",
                manifest.points.len(),
                manifest.wall_clock_seconds,
                out.display()
            );
            for p in manifest.points.iter().filter(|p| !p.ok) {
                eprintln!("{}: {}", p.label, p.error.as_deref().unwrap_or("failed"));
            }
            Ok(if failed > 0 { EXIT_PARTIAL } else { 0 })
        }),
        Command::Validate(args) => load(args).and_then(|config| {
            let report = experiment::validate(&config)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(0)
        }),
        Command::Report(args) => {
            let out = match (&args.out, &args.config) {
                (Some(out), _) => Ok(out.clone()),
                (None, Some(_)) => load(args).and_then(|c| experiment::resolve_output(&c, None)),
                (None, None) => Err(Error::Config {
                    location: "--out".into(),
                    message: "give the run directory with --out or --config".into(),
                }),
            };
            out.and_then(|dir| experiment::report(&dir)).map(|text| {
                print!("{text}");
                0
            })
        }
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_CONFIG)
        }
    }
}
