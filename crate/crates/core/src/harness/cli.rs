//! Command-line front end. Exit codes: 0 success, 1 runtime failure,
//! 2 usage or configuration error.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

use super::{
    compare_heuristics, describe_run, generate, profile_depth_benefit, sweep_degree_threshold, sweep_depth,
    sweep_homophily, sweep_lambda, theory_validate, train_command, CompareHeuristicsConfig, CsbmConfig,
    OutputFormat, ProfileDepthBenefitConfig, SweepDegreeThresholdConfig, SweepDepthConfig, SweepHomophilyConfig,
    SweepLambdaConfig, Table, TheoryValidateConfig, TrainCommandConfig,
};
use crate::error::{Error, Result};
use crate::train::TrainConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "adgnn", version, about = "Adaptive-depth GNN experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON config file; omitted fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output file (a directory for `generate`); stdout if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Data-generation (or oracle) seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated training seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long, value_enum, default_value_t = OutputFormat::Csv)]
    format: OutputFormat,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample a CSBM and write it as a dataset directory.
    Generate(Common),
    /// Train one model over several seeds.
    Train(Common),
    /// Compare closed-form aggregation statistics with Monte-Carlo estimates.
    TheoryValidate(Common),
    /// Plain-backbone accuracy across homophily levels.
    SweepHomophily(Common),
    /// Accuracy when low-degree nodes skip aggregation.
    SweepDegreeThreshold(Common),
    /// Plain versus adaptive accuracy across depths.
    SweepDepth(Common),
    /// Adaptive accuracy across threshold floors.
    SweepLambda(Common),
    /// Mean log depth benefit per degree.
    ProfileDepthBenefit(Common),
    /// Adaptive accuracy and scoring cost per edge-similarity heuristic.
    CompareHeuristics(Common),
}

/// Errors caused by the user's input rather than by the computation.
pub fn is_usage_error(e: &Error) -> bool {
    matches!(e, Error::Config(_) | Error::InvalidParameter(_) | Error::Infeasible(_))
}

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config file {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn apply_seeds(train: &mut TrainConfig, c: &Common) {
    if let Some(s) = &c.seeds {
        train.seeds = s.clone();
    }
}

fn apply_seed(csbm: &mut CsbmConfig, c: &Common) {
    if let Some(s) = c.seed {
        csbm.seed = s;
    }
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            fs::write(p, text)?;
            Ok(())
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn emit_table(t: &Table, c: &Common) -> Result<()> {
    emit(&t.render(c.format)?, c.out.as_deref())
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Generate(c) => {
            let mut cfg: CsbmConfig = load_config(c.config.as_deref())?;
            apply_seed(&mut cfg, &c);
            let out = c
                .out
                .as_deref()
                .ok_or_else(|| Error::Config("generate needs --out <dir>".into()))?;
            let summary = generate(&cfg, out)?;
            eprintln!("wrote {}: {summary}", out.display());
            Ok(())
        }
        Command::Train(c) => {
            let mut cfg: TrainCommandConfig = load_config(c.config.as_deref())?;
            apply_seed(&mut cfg.data.csbm, &c);
            apply_seeds(&mut cfg.train, &c);
            let r = train_command(&cfg)?;
            eprint!("{}", describe_run(&r));
            let text = match c.format {
                OutputFormat::Json => r.to_json()? + "\n",
                OutputFormat::Csv => {
                    let mut buf = Vec::new();
                    r.write_csv(&mut buf)?;
                    String::from_utf8(buf).expect("csv output is utf-8")
                }
            };
            emit(&text, c.out.as_deref())
        }
        Command::TheoryValidate(c) => {
            let mut cfg: TheoryValidateConfig = load_config(c.config.as_deref())?;
            if let Some(s) = c.seed {
                cfg.seed = s;
            }
            emit_table(&theory_validate(&cfg)?, &c)
        }
        Command::SweepHomophily(c) => {
            let mut cfg: SweepHomophilyConfig = load_config(c.config.as_deref())?;
            apply_seed(&mut cfg.csbm, &c);
            apply_seeds(&mut cfg.train, &c);
            emit_table(&sweep_homophily(&cfg)?, &c)
        }
        Command::SweepDegreeThreshold(c) => {
            let mut cfg: SweepDegreeThresholdConfig = load_config(c.config.as_deref())?;
            apply_seed(&mut cfg.data.csbm, &c);
            apply_seeds(&mut cfg.train, &c);
            emit_table(&sweep_degree_threshold(&cfg)?, &c)
        }
        Command::SweepDepth(c) => {
            let mut cfg: SweepDepthConfig = load_config(c.config.as_deref())?;
            apply_seed(&mut cfg.data.csbm, &c);
            apply_seeds(&mut cfg.train, &c);
            emit_table(&sweep_depth(&cfg)?, &c)
        }
        Command::SweepLambda(c) => {
            let mut cfg: SweepLambdaConfig = load_config(c.config.as_deref())?;
            apply_seed(&mut cfg.data.csbm, &c);
            apply_seeds(&mut cfg.train, &c);
            emit_table(&sweep_lambda(&cfg)?, &c)
        }
        Command::ProfileDepthBenefit(c) => {
            let mut cfg: ProfileDepthBenefitConfig = load_config(c.config.as_deref())?;
            apply_seed(&mut cfg.data.csbm, &c);
            apply_seeds(&mut cfg.train, &c);
            emit_table(&profile_depth_benefit(&cfg)?, &c)
        }
        Command::CompareHeuristics(c) => {
            let mut cfg: CompareHeuristicsConfig = load_config(c.config.as_deref())?;
            apply_seed(&mut cfg.data.csbm, &c);
            apply_seeds(&mut cfg.train, &c);
            emit_table(&compare_heuristics(&cfg)?, &c)
        }
    }
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code.
pub fn cli_main<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if is_usage_error(&e) {
                EXIT_USAGE
            } else {
                EXIT_FAILURE
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_subcommand_and_missing_config_are_usage_errors() {
        assert_eq!(cli_main(["adgnn", "frobnicate"]), EXIT_USAGE);
        assert_eq!(cli_main(["adgnn"]), EXIT_USAGE);
        assert_eq!(
            cli_main(["adgnn", "sweep-lambda", "--config", "/nonexistent/cfg.json"]),
            EXIT_USAGE
        );
        assert_eq!(cli_main(["adgnn", "--help"]), EXIT_OK);
    }
}
