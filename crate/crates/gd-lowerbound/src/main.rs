//! Command-line driver for gap trials and the invariant suite.
//!
//! Trials run on the rayon pool; set `RAYON_NUM_THREADS` to bound it.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use gd_lowerbound::experiment::{export_report, run_gap_trials, run_invariant_suite, EtaPreset, ExperimentConfig, Mode, SuiteConfig};
use gd_lowerbound::instance::BlockRule;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    OracleDirect,
    FullReduction,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum RuleArg {
    Literal,
    Fitted,
}

#[derive(Debug, Parser)]
#[command(version, about = "Generalization-gap trials for full-batch gradient descent on hard instances")]
struct Cli {
    /// JSON file with an experiment config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long = "T")]
    horizon: Option<usize>,
    #[arg(long, conflicts_with = "eta_preset")]
    eta: Option<f64>,
    #[arg(long, value_parser = ["sqrtT"])]
    eta_preset: Option<String>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    code_size: Option<usize>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Average only the iterates after step `s`.
    #[arg(long)]
    suffix: Option<usize>,
    #[arg(long, value_enum)]
    block_rule: Option<RuleArg>,
    /// Override for the inclusion probability.
    #[arg(long)]
    epsilon: Option<f64>,
    /// CSV path; the JSON summary goes next to it.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run every module's invariant checks instead of a single trial batch.
    #[arg(long)]
    suite: bool,
}

fn build_config(cli: &Cli) -> gd_lowerbound::Result<ExperimentConfig> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::from_json_file(path)?,
        None => ExperimentConfig::default(),
    };
    config.d = cli.d.unwrap_or(config.d);
    config.m = cli.m.unwrap_or(config.m);
    config.horizon = cli.horizon.unwrap_or(config.horizon);
    if let Some(eta) = cli.eta {
        config.eta = Some(eta);
        config.eta_preset = None;
    }
    if cli.eta_preset.is_some() {
        config.eta = None;
        config.eta_preset = Some(EtaPreset::SqrtT);
    }
    config.trials = cli.trials.unwrap_or(config.trials);
    config.seed = cli.seed.unwrap_or(config.seed);
    config.code_size = cli.code_size.unwrap_or(config.code_size);
    if let Some(mode) = cli.mode {
        config.mode = match mode {
            ModeArg::OracleDirect => Mode::OracleDirect,
            ModeArg::FullReduction => Mode::FullReduction,
        };
    }
    if cli.suffix.is_some() {
        config.suffix = cli.suffix;
    }
    if let Some(rule) = cli.block_rule {
        config.block_rule = match rule {
            RuleArg::Literal => BlockRule::Literal,
            RuleArg::Fitted => BlockRule::Fitted,
        };
    }
    if cli.epsilon.is_some() {
        config.epsilon = cli.epsilon;
    }
    if cli.out.is_some() {
        config.out.clone_from(&cli.out);
    }
    Ok(config)
}

fn run(cli: &Cli) -> gd_lowerbound::Result<bool> {
    let config = build_config(cli)?;
    if cli.suite {
        let ledger = run_invariant_suite(&SuiteConfig { gap: config, ..SuiteConfig::default() });
        for c in &ledger.checks {
            let status = if c.pass { "PASS" } else { "FAIL" };
            let kind = if c.asserted { "asserted" } else { "reported" };
            println!("{status} [{kind}] {}: {}", c.name, c.detail);
        }
        return Ok(ledger.all_asserted_pass());
    }
    let report = run_gap_trials(&config)?;
    if let Some(path) = &config.out {
        export_report(&report, path)?;
    }
    println!("{}", serde_json::to_string_pretty(&report.summary)?);
    Ok(report.summary.all_asserted_pass)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
