//! Command-line front end: data generation, training, reporting and
//! covariance checks driven by a TOML experiment file.

pub mod commands;
pub mod config;
pub mod error;
pub mod model_file;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

pub use config::{Experiment, ExperimentConfig};
pub use error::{CliError, CliResult};
pub use model_file::ModelFile;

#[derive(Debug, Parser)]
#[command(name = "invpde", version, about = "Discover PDEs with invariance-constrained symbolic networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the experiment's equation from random initial conditions.
    GenData {
        /// Experiment TOML file; built-in defaults when absent.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Overwrite a non-empty output directory.
        #[arg(long)]
        force: bool,
        /// Overrides the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a network on a generated dataset.
    Train {
        /// Experiment TOML file; built-in defaults when absent.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset directory holding a manifest.
        #[arg(long)]
        data: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Overwrite a non-empty output directory.
        #[arg(long)]
        force: bool,
        /// Overrides the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Coefficients below this magnitude are left out of the report.
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Compare coefficients and remaining-term counts of trained models.
    Report {
        /// Model files to compare, one column each.
        #[arg(required = true)]
        models: Vec<PathBuf>,
        /// Directory for the CSV tables; printed to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overwrite a non-empty output directory.
        #[arg(long)]
        force: bool,
        /// Coefficients below this magnitude count as removed.
        #[arg(long, default_value_t = 1e-6)]
        threshold: f64,
    },
    /// Check frame covariance of a model or of the generating equation.
    VerifyInvariance {
        /// Experiment TOML file; built-in defaults when absent.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset directory holding a manifest.
        #[arg(long)]
        data: PathBuf,
        /// Model file; the experiment's own equation is checked when absent.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Covariance CSV path; printed to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Model terms below this magnitude are not checked.
        #[arg(long, default_value_t = 1e-6)]
        threshold: f64,
    },
    /// Print the candidate-term expansion of a model file as JSON.
    Expand {
        /// Model file.
        model: PathBuf,
        /// Coefficients below this magnitude are omitted.
        #[arg(long, default_value_t = 0.0)]
        threshold: f64,
        /// JSON output path; printed to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> CliResult<ExperimentConfig> {
    let cfg = match path {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::from_toml("")?,
    };
    Ok(match seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

fn emit(text: &str, out: Option<&Path>) -> CliResult<()> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| error::runtime(format!("cannot write {}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn execute(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::GenData { config, out, force, seed } => {
            let cfg = load_config(config.as_deref(), seed)?;
            let m = commands::gen_data(&cfg, &out, force)?;
            println!("wrote {} trajectories to {}", m.files.len(), out.display());
        }
        Command::Train {
            config,
            data,
            out,
            force,
            seed,
            threshold,
        } => {
            let cfg = load_config(config.as_deref(), seed)?;
            let thr = threshold.unwrap_or(cfg.report_threshold);
            let pde = commands::train(&cfg, &data, &out, force, thr)?;
            print!("{}", commands::coefficient_csv(&pde));
            println!("remaining terms at {thr:e}: {}", pde.remaining_count);
        }
        Command::Report {
            models,
            out,
            force,
            threshold,
        } => {
            let cmp = commands::report(&models, out.as_deref(), force, threshold)?;
            print!("{}\n{}", cmp.coefficients, cmp.counts);
        }
        Command::VerifyInvariance {
            config,
            data,
            model,
            out,
            threshold,
        } => {
            let cfg = load_config(config.as_deref(), None)?;
            let rep = commands::verify_invariance(&cfg, &data, model.as_deref(), threshold)?;
            if let Some(w) = &rep.warning {
                eprintln!("warning: {w}");
            }
            emit(&rep.to_csv(), out.as_deref())?;
            eprintln!("covariance {}", if rep.all_pass() { "pass" } else { "FAIL" });
        }
        Command::Expand { model, threshold, out } => {
            let pde = commands::expand(&model, threshold)?;
            emit(&(pde.to_json() + "\n"), out.as_deref())?;
        }
    }
    Ok(())
}

/// Parses `args` (program name first) and runs the command, returning the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}
