use anyhow::{bail, Context, Result};
use balwalk::harness::{
    output_root, run_experiment, validate_config, ExperimentConfig, ExperimentId, Severity, ToleranceProfile,
};
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "balwalk", version, about = "Long-range random walks in balanced random environments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// TOML configuration; built-in defaults for the experiment when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the environment master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on this.
    #[arg(long)]
    workers: Option<usize>,
    /// Output root [default: $BALWALK_OUT or ./balwalk-out].
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    tolerance_profile: Option<ToleranceProfile>,
}

#[derive(Subcommand)]
enum Command {
    /// Small-time exit probabilities from balls of growing radius.
    ExitTail(RunArgs),
    /// Discrete generator against its limit on a smooth test function.
    GeneratorSweep(RunArgs),
    /// Characteristic functions of the scaled walk against the stable law.
    StableLimit(RunArgs),
    /// Covariance of the scaled walk against the Brownian limit (alpha = 2).
    DiffusiveLimit(RunArgs),
    /// Plateau sums, moment thresholds, matrix limit and drift.
    AuditSuite(RunArgs),
    /// Chi-square test of the jump sampler on a finite window.
    SamplerGof(RunArgs),
    /// Reports violations and hypothesis warnings without running.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Prints the built-in configuration of an experiment as TOML.
    Defaults { experiment: String },
}

fn load(id: ExperimentId, args: &RunArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let cfg = ExperimentConfig::from_toml(&text).with_context(|| format!("parsing {}", path.display()))?;
            if cfg.experiment != id {
                bail!("{} configures '{}', not '{id}'", path.display(), cfg.experiment);
            }
            cfg
        }
        None => ExperimentConfig::default_for(id),
    };
    if let Some(seed) = args.seed {
        cfg.environment.master_seed = seed;
    }
    if let Some(w) = args.workers {
        cfg.workers = Some(w);
    }
    if let Some(out) = &args.out {
        cfg.out_dir = Some(out.clone());
    }
    if let Some(p) = args.tolerance_profile {
        cfg.tolerance_profile = p;
        cfg.tolerances = None;
    }
    Ok(cfg)
}

fn run(id: ExperimentId, args: &RunArgs) -> Result<ExitCode> {
    let cfg = load(id, args)?;
    let root = output_root(&cfg);
    let outcome = run_experiment(&cfg, &root)?;
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    for c in &outcome.checks {
        println!(
            "{} {}: {} {} {}",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            c.value,
            c.relation,
            c.threshold
        );
    }
    println!("results in {}", outcome.dir.display());
    if outcome.partial {
        println!("partial: the event budget was reached in some runs");
    }
    Ok(if outcome.passed() { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn main() -> Result<ExitCode> {
    let cli = Cli::parse();
    let id = match &cli.command {
        Command::ExitTail(a) => (ExperimentId::ExitTail, a),
        Command::GeneratorSweep(a) => (ExperimentId::GeneratorSweep, a),
        Command::StableLimit(a) => (ExperimentId::StableLimit, a),
        Command::DiffusiveLimit(a) => (ExperimentId::DiffusiveLimit, a),
        Command::AuditSuite(a) => (ExperimentId::AuditSuite, a),
        Command::SamplerGof(a) => (ExperimentId::SamplerGof, a),
        Command::Validate { config } => {
            let text = std::fs::read_to_string(config).with_context(|| format!("reading {}", config.display()))?;
            let cfg = ExperimentConfig::from_toml(&text).with_context(|| format!("parsing {}", config.display()))?;
            let findings = validate_config(&cfg);
            if findings.is_empty() {
                println!("ok");
            }
            let mut bad = false;
            for f in &findings {
                let tag = match f.severity {
                    Severity::Violation => {
                        bad = true;
                        "violation"
                    }
                    Severity::Warning => "warning",
                };
                println!("{tag}: {}", f.message);
            }
            return Ok(if bad { ExitCode::from(2) } else { ExitCode::SUCCESS });
        }
        Command::Defaults { experiment } => {
            let id: ExperimentId = experiment.parse().map_err(anyhow::Error::msg)?;
            print!("{}", ExperimentConfig::default_for(id).to_toml());
            return Ok(ExitCode::SUCCESS);
        }
    };
    run(id.0, id.1)
}
