use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use turbsim::{read_manifest, replay_check, run_pipeline, validate_method, MethodName, PipelineConfig};

#[derive(Parser)]
#[command(name = "turbsim", version, about = "Turbulence-degraded image dataset generator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Degrade a corpus of clean images as described by a TOML config.
    Generate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Regenerate one manifest entry and compare it with the stored output.
    Replay {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        index: usize,
    },
    /// Run the statistical checks for a method and print a JSON report.
    Validate {
        #[arg(long, value_enum)]
        method: MethodName,
        #[arg(long)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 128)]
        size: usize,
    },
}

fn run(command: Command) -> Result<bool, Box<dyn std::error::Error>> {
    match command {
        Command::Generate { config } => {
            let cfg = PipelineConfig::load(&config)?;
            let records = run_pipeline(&cfg)?;
            eprintln!("wrote {} images to {}", records.len(), cfg.output_dir.display());
            Ok(true)
        }
        Command::Replay { manifest, index } => {
            let records = read_manifest(&manifest)?;
            let record = records
                .iter()
                .find(|r| r.index == index)
                .ok_or_else(|| format!("no record with index {index} in {}", manifest.display()))?;
            let base = manifest.parent().unwrap_or(std::path::Path::new(""));
            let check = replay_check(record, base)?;
            println!("{}", serde_json::to_string_pretty(&check)?);
            Ok(check.matches_record && check.matches_file)
        }
        Command::Validate { method, samples, seed, size } => {
            let report = validate_method(method, samples, seed, size)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("replayed output does not match the stored image");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
