use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use autorecon_cli::commands::{self, ReconstructOptions};
use autorecon_cli::files::sibling;
use autorecon_cli::{gradcheck, CliError, CliResult, Config};
use clap::{Parser, Subcommand};

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

/// Reconstruct completely missing features of a multivariate time series
/// with a frozen LSTM autoencoder.
#[derive(Debug, Parser)]
#[command(name = "autorecon", version)]
struct Cli {
    /// More log output (-v debug, -vv trace).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    /// Only warnings and errors.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate the nonlinear filter and write six training sets, the test
    /// set and a manifest.
    Simulate {
        /// TOML run configuration; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the configured seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the autoencoder on every train_<k>.csv of a directory.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Model file to write (JSON).
        #[arg(long)]
        model: PathBuf,
        /// Loss history CSV; defaults to <model stem>.loss.csv next to the model.
        #[arg(long)]
        history: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Optimize the missing features of a dataset against a trained model.
    Reconstruct {
        #[arg(long)]
        model: PathBuf,
        /// Dataset CSV; missing feature columns may be absent.
        #[arg(long)]
        data: PathBuf,
        /// Missing features, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        missing: Vec<String>,
        /// Defaults to 300 with one missing feature, 3000 with more.
        #[arg(long)]
        epochs: Option<usize>,
        /// Defaults to 0.005.
        #[arg(long)]
        lr: Option<f64>,
        /// Loss weights of available features, e.g. `u2=2,i2=0.5`.
        #[arg(long, value_delimiter = ',', value_parser = parse_weight)]
        weights: Vec<(String, f64)>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Result CSV to write.
        #[arg(long)]
        out: PathBuf,
        /// Loss history CSV; defaults to <out stem>.loss.csv.
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Compare a result (or any dataset) with ground truth: RMSE report and
    /// amplitude spectra.
    Evaluate {
        #[arg(long)]
        result: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// Directory for report.csv and spectrum_*.csv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Verify every autodiff gradient against central finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn parse_weight(s: &str) -> Result<(String, f64), String> {
    let (name, value) = s
        .split_once('=')
        .ok_or_else(|| format!("expected name=value, got `{s}`"))?;
    let w: f64 = value.parse().map_err(|_| format!("`{value}` is not a number"))?;
    if !(w >= 0.0 && w.is_finite()) {
        return Err(format!("weight for `{name}` must be finite and >= 0"));
    }
    Ok((name.to_string(), w))
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> CliResult<Config> {
    let mut config = Config::load(path)?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    Ok(config)
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Simulate { config, out, seed } => {
            let config = load_config(config.as_deref(), seed)?;
            commands::simulate(&config, &out)?;
        }
        Command::Train {
            data,
            config,
            model,
            history,
            epochs,
            lr,
            seed,
        } => {
            let mut config = load_config(config.as_deref(), seed)?;
            if let Some(e) = epochs {
                config.training.epochs = e;
            }
            if let Some(lr) = lr {
                config.training.lr = lr;
            }
            let history = history.unwrap_or_else(|| sibling(&model, "loss.csv"));
            commands::train_model(&config, &data, &model, &history)?;
        }
        Command::Reconstruct {
            model,
            data,
            missing,
            epochs,
            lr,
            weights,
            config,
            out,
            history,
        } => {
            let config = load_config(config.as_deref(), None)?;
            let mut map = BTreeMap::new();
            for (name, w) in weights {
                if map.insert(name.clone(), w).is_some() {
                    return Err(CliError::Usage(format!("weight for `{name}` given twice")));
                }
            }
            let options = ReconstructOptions {
                missing,
                epochs,
                lr,
                weights: map,
            };
            let history = history.unwrap_or_else(|| sibling(&out, "loss.csv"));
            let r = commands::reconstruct_series(&config, &model, &data, &options, &out, &history)?;
            println!("initial L_red {:e}, final L_red {:e}", r.initial_loss, r.final_loss);
        }
        Command::Evaluate { result, truth, out } => {
            let reports = commands::evaluate(&result, &truth, &out)?;
            println!("column,feature,rmse,relative_rmse");
            for r in reports {
                println!(
                    "{},{},{:e},{:.4}",
                    r.column, r.report.feature, r.report.rmse, r.report.relative_rmse
                );
            }
        }
        Command::Gradcheck { seed } => {
            let report = commands::grad_check(seed)?;
            for c in &report.checks {
                let verdict = if c.max_relative_error < gradcheck::TOLERANCE {
                    "ok"
                } else {
                    "FAIL"
                };
                println!(
                    "{verdict:4} {:.3e}  step {:e}  {}",
                    c.max_relative_error, c.step, c.name
                );
            }
            println!(
                "max relative error {:.3e} (tolerance {:e})",
                report.max_error(),
                gradcheck::TOLERANCE
            );
            if !report.passed() {
                return Err(CliError::GradCheckFailed {
                    max_error: report.max_error(),
                    tolerance: gradcheck::TOLERANCE,
                });
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => log::LevelFilter::Warn,
        (false, 0) => log::LevelFilter::Info,
        (false, 1) => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    env_logger::Builder::new().filter_level(level).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
