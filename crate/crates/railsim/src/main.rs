//! Command-line experiment runner.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use railsim::config::{write_preset, ExperimentConfig, PRESET_NAMES};
use railsim::runner::run_experiment;

/// Flow-level all-to-all simulator for rail-optimized topologies.
#[derive(Parser)]
#[command(name = "railsim", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config and write results.csv + manifest.json.
    Run {
        /// Path to the experiment config (JSON).
        config: PathBuf,
        /// Output directory; defaults to the config's `output` field.
        /// The RAILSIM_OUT_DIR environment variable overrides both.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Distribute independent runs over a thread pool.
        #[arg(long)]
        parallel: bool,
    },
    /// Validate a config without running it.
    Validate {
        config: PathBuf,
    },
    /// Write a ready-made config for a named scenario.
    Preset {
        /// One of: uniform, sparse-0.6, sparse-0.4, sparse-0.2, sparse-0,
        /// sender_skewed, receiver_skewed, mixtral_dense, mixtral_sparse.
        name: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<(), String> {
    match cli.command {
        Command::Run {
            config,
            out,
            parallel,
        } => {
            let cfg = ExperimentConfig::load(&config).map_err(|e| e.to_string())?;
            cfg.validate().map_err(|e| e.to_string())?;
            let out_dir = std::env::var_os("RAILSIM_OUT_DIR")
                .map(PathBuf::from)
                .or(out)
                .unwrap_or_else(|| cfg.output.clone());
            let summary = run_experiment(&cfg, &out_dir, parallel).map_err(|e| e.to_string())?;
            println!(
                "wrote {} rows to {}",
                summary.records.len(),
                summary.csv_path.display()
            );
            println!("manifest: {}", summary.manifest_path.display());
            Ok(())
        }
        Command::Validate { config } => {
            let cfg = ExperimentConfig::load(&config).map_err(|e| e.to_string())?;
            let (tc, topo) = cfg.validate().map_err(|e| e.to_string())?;
            println!("ok: {}", config.display());
            println!(
                "  topology: M={} N={} r1={:.3e} B/s r2={:.3e} B/s spines={} leaf-spine={:.3e} B/s",
                tc.domains,
                tc.rails,
                topo.r1(),
                topo.r2(),
                topo.spine_count(),
                topo.leaf_spine_capacity(),
            );
            println!(
                "  workload: {:?}, policies: [{}], seeds: {:?}",
                cfg.workload.family,
                cfg.policies
                    .iter()
                    .map(|p| p.kind.name())
                    .collect::<Vec<_>>()
                    .join(", "),
                cfg.seeds,
            );
            Ok(())
        }
        Command::Preset { name, out } => {
            if !PRESET_NAMES.contains(&name.as_str()) {
                return Err(format!(
                    "unknown preset {name:?}; available: {}",
                    PRESET_NAMES.join(", ")
                ));
            }
            let cfg = write_preset(&name, &out).map_err(|e| e.to_string())?;
            println!("wrote {} ({})", out.display(), cfg.preset);
            if let Some(trace) = &cfg.workload.trace_path {
                println!("trace: {}", trace.display());
            }
            Ok(())
        }
    }
}
