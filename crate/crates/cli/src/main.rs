//! `tnoise`: fit, simulate and compare transmon noise models.

mod commands;
mod manifest;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use transmon_noise::Error;

/// Environment variable holding the default worker count.
pub const WORKERS_ENV: &str = "TNOISE_WORKERS";

#[derive(Parser, Debug)]
#[command(name = "tnoise", version, about = "Transmon noise-model simulation and fitting")]
struct Cli {
    /// Worker threads; defaults to $TNOISE_WORKERS or all cores.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Device preset (quito, lima) or device TOML file.
    #[arg(long, default_value = "quito")]
    pub device: String,
    /// Output directory.
    #[arg(long, short, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// Count file, or the name of a file `data/<name>.csv`.
    #[arg(long)]
    pub dataset: String,
    /// Bootstrap resamples per curve.
    #[arg(long, default_value_t = 10)]
    pub bootstrap: usize,
    /// SPAM correction: additive, multiplicative or none.
    #[arg(long, default_value = "additive")]
    pub spam: String,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Three-step fit of the bath parameters.
    Fit {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        /// full, sm1 or sm2.
        #[arg(long, default_value = "full")]
        model: String,
        /// Fit configuration TOML; flags below override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        resolution: Option<usize>,
        #[arg(long)]
        trajectories: Option<usize>,
    },
    /// Simulated decay curve of one prepared state.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Noise preset, parameter file or fit report; defaults to the device preset.
        #[arg(long)]
        noise: Option<String>,
        /// U3 angles in degrees, `theta,phi,lambda`.
        #[arg(long, default_value = "90,0,0")]
        state: String,
        /// free or dd.
        #[arg(long, default_value = "free")]
        kind: String,
        #[arg(long, default_value_t = 70)]
        instants: usize,
        #[arg(long, default_value_t = 19_600.0)]
        total_ns: f64,
        #[arg(long, default_value_t = 600)]
        trajectories: usize,
        /// full, sm1 or sm2.
        #[arg(long, default_value = "full")]
        model: String,
    },
    /// Predicts every curve of a dataset and reports relative errors.
    Predict {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        noise: Option<String>,
        #[arg(long, default_value = "full")]
        model: String,
        #[arg(long, default_value_t = 600)]
        trajectories: usize,
    },
    /// Closed-system gate analysis: envelope spectrum, fidelity, leakage.
    Gate {
        #[command(flatten)]
        common: Common,
        /// Gate time, ns.
        #[arg(long, default_value_t = 70.0)]
        tg: f64,
        /// DRAG coefficient.
        #[arg(long, default_value_t = 1.0)]
        drag: f64,
        #[arg(long, default_value_t = 6.0)]
        sigma_ratio: f64,
    },
    /// Fits the full model, SM1 and SM2 and compares their predictions.
    CompareModels {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        /// Reuse fit reports instead of fitting: `--full f.toml` etc.
        #[arg(long)]
        full: Option<String>,
        #[arg(long)]
        sm1: Option<String>,
        #[arg(long)]
        sm2: Option<String>,
        #[arg(long)]
        resolution: Option<usize>,
        #[arg(long, default_value_t = 600)]
        trajectories: usize,
    },
    /// Draws shot-sampled count records from a noise model.
    Synthesize {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        noise: Option<String>,
        #[arg(long, default_value_t = 70)]
        instants: usize,
        #[arg(long, default_value_t = 19_600.0)]
        total_ns: f64,
        #[arg(long, default_value_t = 8192)]
        shots: u64,
        #[arg(long, default_value_t = 600)]
        trajectories: usize,
        /// `fit` for the curves the fit needs, `all` for the 16 prediction states.
        #[arg(long, default_value = "all")]
        states: String,
    },
    /// Renders a CSV written by another subcommand to SVG.
    Plot {
        #[arg(long)]
        input: PathBuf,
        /// Output file; defaults to the input with an `.svg` extension.
        #[arg(long, short)]
        out: Option<PathBuf>,
        #[arg(long)]
        title: Option<String>,
    },
}

/// Errors caused by the invocation rather than the computation.
fn is_usage_error(e: &Error) -> bool {
    match e {
        Error::Config(_) | Error::MissingData(_) | Error::Parse { .. } => true,
        Error::Io(io) => io.kind() == std::io::ErrorKind::NotFound,
        _ => false,
    }
}

fn configure_workers(flag: Option<usize>) -> Result<(), Error> {
    let n = match flag {
        Some(n) => Some(n),
        None => match std::env::var(WORKERS_ENV) {
            Ok(v) => Some(v.trim().parse().map_err(|_| Error::Config(format!("{WORKERS_ENV}={v:?} is not a count")))?),
            Err(_) => None,
        },
    };
    if let Some(n) = n {
        if n == 0 {
            return Err(Error::Config("worker count must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    Ok(())
}

fn dispatch(command: Command) -> Result<(), Error> {
    match command {
        Command::Fit { common, data, model, config, resolution, trajectories } => {
            commands::fit(&common, &data, &model, config.as_deref(), resolution, trajectories)
        }
        Command::Simulate { common, noise, state, kind, instants, total_ns, trajectories, model } => {
            commands::simulate(&common, noise.as_deref(), &state, &kind, instants, total_ns, trajectories, &model)
        }
        Command::Predict { common, data, noise, model, trajectories } => {
            commands::predict(&common, &data, noise.as_deref(), &model, trajectories)
        }
        Command::Gate { common, tg, drag, sigma_ratio } => commands::gate(&common, tg, drag, sigma_ratio),
        Command::CompareModels { common, data, full, sm1, sm2, resolution, trajectories } => {
            commands::compare_models(&common, &data, [full, sm1, sm2], resolution, trajectories)
        }
        Command::Synthesize { common, noise, instants, total_ns, shots, trajectories, states } => {
            commands::synthesize(&common, noise.as_deref(), instants, total_ns, shots, trajectories, &states)
        }
        Command::Plot { input, out, title } => {
            let out = out.unwrap_or_else(|| input.with_extension("svg"));
            plot::render_csv(&input, &out, title.as_deref())?;
            println!("{}", out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_workers(cli.workers).and_then(|_| dispatch(cli.command));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if is_usage_error(&e) {
                eprintln!("run `tnoise --help` for usage");
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
