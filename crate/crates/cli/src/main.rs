use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use lpgf_core::pipeline::{run_pipeline, run_synth, PipelineConfig, PRIOR_FILE};
use lpgf_core::prior::parse_lpsp;

#[derive(Parser)]
#[command(name = "lpgf", version, about = "Location prior generation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline from a TOML config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Override the region radius in meters.
        #[arg(long)]
        radius: Option<f64>,
        /// Skip shadow estimation and use the structured fallback.
        #[arg(long)]
        force_fallback: bool,
        /// Override the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render a synthetic scene spec (JSON) into an image fixture.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check that a file is a valid LPSP-v0 prior.
    Validate { path: PathBuf },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Run {
            config,
            radius,
            force_fallback,
            out,
        } => {
            let mut cfg = PipelineConfig::load(&config)
                .with_context(|| format!("loading {}", config.display()))?;
            if let Some(r) = radius {
                cfg.region_radius_m = r;
            }
            if force_fallback {
                cfg.force_fallback = true;
            }
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            let outcome = run_pipeline(&cfg)?;
            let s = &outcome.report.summary;
            println!("strategy: {} ({})", s.strategy, s.reason);
            if !s.failed_criteria.is_empty() {
                println!("failed criteria: {}", s.failed_criteria.join(", "));
            }
            println!("buildings: {} ({} occluders), lanes: {}", s.buildings, s.occluders, s.lanes.len());
            println!("prior: {}", cfg.output_dir.join(PRIOR_FILE).display());
        }
        Command::Synth { spec, out } => {
            for path in run_synth(&spec, &out)? {
                println!("wrote {}", path.display());
            }
        }
        Command::Validate { path } => {
            let text = std::fs::read_to_string(&path)
                .map_err(|e| lpgf_core::Error::Malformed(format!("{}: {e}", path.display())))?;
            let prior = parse_lpsp(&text).with_context(|| format!("validating {}", path.display()))?;
            println!(
                "valid LPSP-v0: {} buildings, {} road vertices",
                prior.buildings.len(),
                prior.road_graph.vertices.len()
            );
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<lpgf_core::Error>() {
        Some(e) if e.is_input_error() => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
