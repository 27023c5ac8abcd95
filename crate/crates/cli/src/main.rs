use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use qnd_squeeze::master_eq::DephasingForm;
use qnd_squeeze_cli::config::{ExperimentConfig, OutcomeSpec, Overrides, ValidationTolerances};
use qnd_squeeze_cli::output::Header;
use qnd_squeeze_cli::run::{self, QSourceKind, Suite};

/// Exit status for a validation run with failing reports.
const EXIT_VALIDATION_FAILED: u8 = 3;

#[derive(Parser)]
#[command(name = "qnd-squeeze", version, about = "QND measurement and spin squeezing in a double-well condensate")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML experiment description.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides [output] dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Detected photon numbers as "n_c,n_d", or "auto" for the most probable pair.
    #[arg(long)]
    outcome: Option<OutcomeSpec>,
    /// Dephasing term: lindblad or literal.
    #[arg(long)]
    dephasing: Option<DephasingForm>,
    /// Accepted for reproducibility scripts; the simulator draws no random numbers.
    #[arg(long)]
    seedless: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Instantaneous measurement: conditional pmf and detection grid.
    Pure(Common),
    /// Master-equation time series of conditional moments.
    Master(Common),
    /// Husimi Q function on a (theta, phi) grid.
    Qfunc {
        #[command(flatten)]
        common: Common,
        /// initial, pure or master.
        #[arg(long, default_value = "pure")]
        source: QSourceKind,
    },
    /// Summary over the [sweep] values.
    Sweep(Common),
    /// Run validation suites; exits 3 if any report fails.
    Validate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Comma-separated subset of oracle, crosscheck, stirling, sweep.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        suites: Option<Vec<String>>,
        /// Add an integration case whose step violates the stability bound.
        #[arg(long)]
        inject_fault: bool,
    },
}

fn resolve(common: &Common) -> Result<qnd_squeeze_cli::config::Resolved> {
    let cfg = ExperimentConfig::load(&common.config)?;
    cfg.resolve(&Overrides {
        outcome: common.outcome,
        dephasing: common.dephasing,
        out_dir: common.out.clone(),
    })
}

fn report(files: &[PathBuf]) {
    for f in files {
        println!("wrote {}", f.display());
    }
}

fn execute(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Pure(c) => {
            let r = resolve(&c)?;
            report(&run::run_pure(&r, &run::header("pure", &r, c.seedless))?);
        }
        Command::Master(c) => {
            let r = resolve(&c)?;
            report(&run::run_master(&r, &run::header("master", &r, c.seedless))?);
        }
        Command::Qfunc { common, source } => {
            let r = resolve(&common)?;
            report(&run::run_qfunc(&r, &run::header("qfunc", &r, common.seedless), source)?);
        }
        Command::Sweep(c) => {
            let r = resolve(&c)?;
            report(&run::run_sweep(&r, &run::header("sweep", &r, c.seedless))?);
        }
        Command::Validate { config, out, suites, inject_fault } => {
            let (tol, echo) = match &config {
                Some(path) => {
                    let r = ExperimentConfig::load(path)?.resolve(&Overrides::default())?;
                    (r.tolerances, r.echo())
                }
                None => (
                    ValidationTolerances {
                        sweep: Default::default(),
                        oracle: 1e-8,
                        crosscheck: 1e-8,
                        stirling: 0.05,
                    },
                    Vec::new(),
                ),
            };
            let selected: Vec<Suite> = match suites {
                None => Suite::ALL.to_vec(),
                Some(names) => names
                    .iter()
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| s.trim().parse())
                    .collect::<Result<_>>()?,
            };
            let summary = run::validate(&selected, &tol, inject_fault)?;
            let header = Header::new("validate", &echo, &[]);
            for r in &summary.reports {
                println!("{}", r.line());
            }
            report(&run::write_validation(&summary, &out, &header)?);
            if !summary.passed {
                return Ok(EXIT_VALIDATION_FAILED);
            }
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
