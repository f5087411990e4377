//! `vreg`: batch runner for the vreg-core experiments.

mod config;
mod output;
mod presets;
mod run;
mod setup;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::Config;
use run::RunError;

#[derive(Parser)]
#[command(name = "vreg", version, about = "Numerical regularity experiments for (p,q)-growth functionals")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Experiment {
    /// Config file with `[section]` headers and `key = value` lines.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in configuration (see `vreg presets`).
    #[arg(long)]
    preset: Option<String>,
    /// Overrides: `--section.key value`, `--key value` or `--key=value`.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "OVERRIDES")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Minimise the regularised functional along the ε-schedule.
    Solve(Experiment),
    /// Measure Besov decay of the solution or of V(Du).
    Besov(Experiment),
    /// Closed-form exponents and the bootstrap recursion.
    Exponents(Experiment),
    /// Excess-decay profile at one point.
    Excess(Experiment),
    /// ε-regularity classification on a sample lattice.
    Classify(Experiment),
    /// Lavrentiev gap probe.
    Gap(Experiment),
    /// Sampled checks of the growth hypotheses.
    VerifyIntegrand(Experiment),
    /// Run a config file, taking the experiment from its `kind` field.
    Run {
        config: PathBuf,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "OVERRIDES")]
        overrides: Vec<String>,
    },
    /// List built-in presets.
    Presets,
}

fn load(path: Option<&PathBuf>, preset: Option<&str>) -> Result<Config, RunError> {
    if let Some(name) = preset {
        let text = presets::find(name).ok_or_else(|| {
            let names: Vec<&str> = presets::PRESETS.iter().map(|(n, _)| *n).collect();
            RunError::Config(format!("unknown preset `{name}`, available: {}", names.join(", ")))
        })?;
        return Ok(Config::parse(text, &format!("preset {name}"))?);
    }
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| RunError::Config(format!("cannot read {}: {e}", p.display())))?;
            Ok(Config::parse(&text, &p.display().to_string())?)
        }
        None => Ok(Config::default()),
    }
}

fn execute(cli: Cli) -> Result<(String, Option<PathBuf>), RunError> {
    let (kind, exp) = match cli.command {
        Command::Presets => {
            return Ok((presets::PRESETS.iter().map(|(n, _)| format!("{n}\n")).collect(), None));
        }
        Command::Run { config, overrides } => {
            let mut cfg = load(Some(&config), None)?;
            let kind: String = cfg.require("", "kind")?;
            cfg.apply_overrides(&overrides, &run::preferred_sections(&kind))?;
            let out = run::run(&cfg)?;
            return Ok((out.stdout, Some(out.manifest)));
        }
        Command::Solve(e) => ("solve", e),
        Command::Besov(e) => ("besov", e),
        Command::Exponents(e) => ("exponents", e),
        Command::Excess(e) => ("excess", e),
        Command::Classify(e) => ("classify", e),
        Command::Gap(e) => ("gap", e),
        Command::VerifyIntegrand(e) => ("verify-integrand", e),
    };
    let mut cfg = load(exp.config.as_ref(), exp.preset.as_deref())?;
    cfg.set("", "kind", kind)?;
    cfg.apply_overrides(&exp.overrides, &run::preferred_sections(kind))?;
    let out = run::run(&cfg)?;
    Ok((out.stdout, Some(out.manifest)))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok((out, manifest)) => {
            print!("{out}");
            if let Some(m) = manifest {
                eprintln!("artifacts listed in {}", m.display());
            }
            ExitCode::SUCCESS
        }
        Err(RunError::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(2)
        }
        Err(RunError::Numerical(msg)) => {
            eprintln!("numerical failure: {msg}");
            ExitCode::from(3)
        }
        Err(RunError::Io(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
