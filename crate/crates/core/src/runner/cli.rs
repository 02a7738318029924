//! Command-line interface.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::discrimination::Coordinate;
use crate::error::{Error, Result};

use super::config::RunConfig;
use super::output::OutputSet;
use super::scenarios;

#[derive(Debug, Parser)]
#[command(
    name = "prompt-gamma",
    version,
    about = "Prompt-gamma range verification experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Forward model only: dose, emission density, detection probabilities, hits.
    Simulate(RunArgs),
    /// Sequential Monte Carlo posterior run.
    Infer(RunArgs),
    /// Required-observation table over detector bins and standoffs.
    Discriminate(RunArgs),
    /// Divergence curve as one parameter varies around the truth.
    Scan {
        #[command(flatten)]
        run: RunArgs,
        /// R, sigma or epsilon
        #[arg(long)]
        param: Coordinate,
        /// lo:hi:steps
        #[arg(long)]
        range: String,
    },
    /// Print a bundled configuration as TOML.
    Config {
        /// One of water_b1, water_b6, lung_b1, lung_b6.
        name: String,
    },
}

#[derive(Debug, clap::Args)]
pub struct RunArgs {
    /// Run configuration (TOML).
    #[arg(long, short)]
    pub config: PathBuf,
    /// Output directory; overrides the config and the environment.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

impl clap::ValueEnum for Coordinate {
    fn value_variants<'a>() -> &'a [Self] {
        &[Coordinate::Range, Coordinate::Sigma, Coordinate::Epsilon]
    }

    fn to_possible_value(&self) -> Option<clap::builder::PossibleValue> {
        Some(clap::builder::PossibleValue::new(self.name()))
    }
}

/// Machine-readable failure report, printed as one JSON line on stderr.
pub fn error_report(e: &Error) -> String {
    serde_json::json!({
        "error": e.kind(),
        "message": e.to_string(),
        "exit_code": e.exit_code(),
    })
    .to_string()
}

fn load(args: &RunArgs) -> Result<(RunConfig, String, PathBuf)> {
    let text = std::fs::read_to_string(&args.config).map_err(|e| Error::io(&args.config, e))?;
    let cfg = RunConfig::from_toml(&text, &args.config.display().to_string())?;
    let dir = super::resolve_output_dir(args.output.as_deref(), &cfg);
    Ok((cfg, text, dir))
}

fn run_command(command: &Command) -> Result<()> {
    match command {
        Command::Config { name } => {
            let cfg = scenarios::by_name(name).ok_or_else(|| {
                Error::config(
                    "name",
                    format!(
                        "unknown scenario {name:?}; expected one of {}",
                        scenarios::NAMES.join(", ")
                    ),
                )
            })??;
            print!("{}", cfg.to_toml()?);
            Ok(())
        }
        Command::Simulate(args) => with_outputs(args, "simulate", super::simulate),
        Command::Infer(args) => with_outputs(args, "infer", |cfg, out| {
            let o = super::infer(cfg, out)?;
            if let Some(last) = o.trace.records.last() {
                eprintln!(
                    "{} iterations, final mean KL {:.4e}, acceptance {:.3}",
                    o.trace.records.len(),
                    last.mean_kl,
                    last.acceptance_rate
                );
            }
            Ok(())
        }),
        Command::Discriminate(args) => with_outputs(args, "discriminate", |cfg, out| {
            for r in super::discriminate(cfg, out)? {
                eprintln!("b={} h={} KL={:.4e} k={}", r.bins, r.h, r.kl, r.k_required);
            }
            Ok(())
        }),
        Command::Scan { run, param, range } => {
            let range = super::parse_range(range)?;
            with_outputs(run, "scan", |cfg, out| {
                super::scan(cfg, *param, range, out).map(|_| ())
            })
        }
    }
}

fn with_outputs<F>(args: &RunArgs, name: &str, body: F) -> Result<()>
where
    F: FnOnce(&RunConfig, &mut OutputSet) -> Result<()>,
{
    let (cfg, text, dir) = load(args)?;
    let mut out = OutputSet::create(&dir)?;
    body(&cfg, &mut out)?;
    out.finish(name, &text, cfg.master_seed)?;
    eprintln!("outputs written to {}", display(&dir));
    Ok(())
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

/// Parses `argv` and runs the command; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match run_command(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", error_report(&e));
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_subcommand_is_usage_error() {
        assert_eq!(run(["prompt-gamma", "frobnicate"]), 2);
        assert_eq!(run(["prompt-gamma"]), 2);
    }

    #[test]
    fn missing_config_is_io_error() {
        assert_eq!(
            run(["prompt-gamma", "simulate", "--config", "/nonexistent/run.toml"]),
            4
        );
    }

    #[test]
    fn report_is_json() {
        let v: serde_json::Value = serde_json::from_str(&error_report(&Error::ZeroMass)).unwrap();
        assert_eq!(v["error"], "zero_mass");
        assert_eq!(v["exit_code"], 3);
    }
}
