//! `calovae`: dataset generation, training, sampling, calibration and
//! evaluation from the command line. Every command writes its artifacts and a
//! `manifest.txt` into `--out`.

mod commands;
mod config;
mod manifest;

use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use calovae_core::{Error, Result};
use clap::{Parser, Subcommand};
use serde_json::Value;

use commands::{Run, SampleArgs};
use config::Sampler;

#[derive(Parser)]
#[command(name = "calovae", version, about = "Discrete VAE with an RBM prior for calorimeter showers")]
struct Cli {
    /// JSON configuration; flags take precedence over its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Override a config value, e.g. `--set model.batch_size=32`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic shower dataset.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        events: Option<usize>,
    },
    /// Transform voxels and binarize incident energies.
    Preprocess {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build, import or check a latent topology.
    Topology {
        #[command(subcommand)]
        action: TopologyCommand,
    },
    /// Train the model on a dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Edge list with a partition block; generated from the config if absent.
        #[arg(long)]
        topology: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Total epochs.
        #[arg(long)]
        epochs: Option<usize>,
        /// Print one line per epoch to stderr.
        #[arg(long)]
        verbose: bool,
    },
    /// Generate showers from a trained model.
    Sample {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        events: Option<usize>,
        #[arg(long, value_enum)]
        sampler: Option<Sampler>,
        #[arg(long)]
        beta_hat: Option<f64>,
        /// `beta_hat.json` written by `calibrate`.
        #[arg(long)]
        calibration: Option<PathBuf>,
        /// Dataset whose incident energies condition the samples.
        #[arg(long)]
        incident: Option<PathBuf>,
    },
    /// Estimate the simulated device's effective inverse temperature.
    Calibrate {
        /// Calibrate against this model's prior; otherwise a random RBM.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        topology: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        beta_star: Option<f64>,
    },
    /// Prior log-likelihood of a dataset's posterior codes.
    Loglik {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare two datasets.
    Evaluate {
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        candidate: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum TopologyCommand {
    Gen {
        #[arg(long)]
        out: PathBuf,
    },
    Import {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Use the file's partition block instead of coloring.
        #[arg(long)]
        partition_supplied: bool,
    },
    Check {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn set(value: &mut Value, key: &str, v: impl serde::Serialize) -> Result<()> {
    config::assign(value, key, serde_json::to_value(v).expect("flag serializes"))
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    let mut value = config::resolve(cli.config.as_deref(), &cli.sets)?;
    if let Some(seed) = cli.seed {
        set(&mut value, "seed", seed)?;
    }
    match &cli.command {
        Command::GenData { events: Some(n), .. } => set(&mut value, "data.events", n)?,
        Command::Train { epochs: Some(n), .. } => set(&mut value, "model.total_epochs", n)?,
        Command::Sample {
            events,
            sampler,
            beta_hat,
            ..
        } => {
            if let Some(n) = events {
                set(&mut value, "sample.events", n)?;
            }
            if let Some(s) = sampler {
                set(&mut value, "sample.sampler", s)?;
            }
            if let Some(b) = beta_hat {
                set(&mut value, "sample.beta_hat", b)?;
            }
        }
        Command::Calibrate { beta_star: Some(b), .. } => set(&mut value, "calibration.beta_star", b)?,
        _ => {}
    }
    let cfg = config::finish(value)?;
    match cli.command {
        Command::GenData { out, .. } => commands::gen_data(Run::new("gen-data", cfg, out)?),
        Command::Preprocess { data, out } => commands::preprocess(Run::new("preprocess", cfg, out)?, &data),
        Command::Topology { action } => match action {
            TopologyCommand::Gen { out } => commands::topology_gen(Run::new("topology gen", cfg, out)?),
            TopologyCommand::Import {
                input,
                out,
                partition_supplied,
            } => commands::topology_import(Run::new("topology import", cfg, out)?, &input, partition_supplied),
            TopologyCommand::Check { input, out } => {
                commands::topology_check(Run::new("topology check", cfg, out)?, &input)
            }
        },
        Command::Train {
            data,
            topology,
            out,
            verbose,
            ..
        } => commands::train(Run::new("train", cfg, out)?, &data, topology.as_deref(), verbose),
        Command::Sample {
            model,
            out,
            calibration,
            incident,
            ..
        } => commands::sample(
            Run::new("sample", cfg, out)?,
            SampleArgs {
                model: &model,
                calibration: calibration.as_deref(),
                incident: incident.as_deref(),
            },
        ),
        Command::Calibrate {
            model, topology, out, ..
        } => commands::calibrate(Run::new("calibrate", cfg, out)?, model.as_deref(), topology.as_deref()),
        Command::Loglik { model, data, out } => commands::loglik(Run::new("loglik", cfg, out)?, &model, &data),
        Command::Evaluate {
            reference,
            candidate,
            out,
        } => commands::evaluate(Run::new("evaluate", cfg, out)?, &reference, &candidate),
    }
}

/// One line: `error code=<TAG> exit=<N> msg=<json string>`.
fn report(code: &str, exit: u8, msg: &str) {
    let msg = serde_json::to_string(msg).expect("string serializes");
    let _ = writeln!(std::io::stderr(), "error code={code} exit={exit} msg={msg}");
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            ) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let first = e.to_string();
            let first = first.lines().next().unwrap_or("usage error").trim_start_matches("error: ");
            report("USAGE", 2, first);
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let exit = e.exit_code() as u8;
            report(e.code(), exit, &e.to_string());
            ExitCode::from(exit)
        }
    }
}
