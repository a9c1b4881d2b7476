//! Named, reproducible experiments: configuration, validation, orchestration
//! and output.

mod config;
mod experiments;
mod output;

pub use config::{
    has_violations, validate_config, AuditSettings, ExitParams, ExperimentConfig, ExperimentId, Finding, GofParams,
    KernelParams, Severity, SweepParams, ToleranceProfile, Tolerances,
};
pub use experiments::{dispatch, parameter_echo, sampler_for, Check, ExperimentOutput};
pub use output::{
    emit_results, format_float, write_atomic, Cell, Counters, ManifestContent, OutputError, RunInfo, RunManifest,
    RunStatus, Table,
};

use crate::env::{EnvError, KappaField};
use crate::genlab::GenError;
use crate::audit::AuditError;
use crate::kernel::KernelError;
use crate::limitref::LimitError;
use crate::par::Workers;
use crate::walker::WalkError;
use std::path::{Path, PathBuf};
use std::time::Instant;
use thiserror::Error;

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "BALWALK_OUT";
pub const DEFAULT_OUT: &str = "balwalk-out";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {}", .0.join("; "))]
    Invalid(Vec<String>),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Walk(#[from] WalkError),
    #[error(transparent)]
    Generator(#[from] GenError),
    #[error(transparent)]
    Audit(#[from] AuditError),
    #[error(transparent)]
    Limit(#[from] LimitError),
    #[error(transparent)]
    Output(#[from] OutputError),
}

/// Output root: the config value, else `$BALWALK_OUT`, else `balwalk-out`.
pub fn output_root(cfg: &ExperimentConfig) -> PathBuf {
    cfg.out_dir
        .clone()
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub manifest_hash: String,
    pub checks: Vec<Check>,
    pub warnings: Vec<String>,
    pub partial: bool,
    pub files: Vec<PathBuf>,
}

impl RunOutcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

pub fn code_version() -> String {
    format!("{} {}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION"))
}

fn checks_table(checks: &[Check]) -> Table {
    let mut t = Table::new("checks", &["name", "value", "relation", "threshold", "pass"]);
    for c in checks {
        t.push(vec![
            c.name.clone().into(),
            c.value.into(),
            c.relation.clone().into(),
            c.threshold.into(),
            c.pass.into(),
        ]);
    }
    t
}

fn summary_text(cfg: &ExperimentConfig, hash: &str, out: &ExperimentOutput, warnings: &[String]) -> String {
    let mut s = String::new();
    s.push_str(&format!("experiment: {}\n", cfg.experiment));
    s.push_str(&format!("manifest: {hash}\n"));
    s.push_str(&format!(
        "environment: d={} alpha={} balanced={} seed={}\n",
        cfg.environment.dimension, cfg.environment.alpha, cfg.environment.balanced, cfg.environment.master_seed
    ));
    s.push_str(&format!("tolerance profile: {:?}\n", cfg.tolerance_profile).to_lowercase());
    if out.partial {
        s.push_str("status: PARTIAL (event budget reached in some runs)\n");
    }
    for w in warnings {
        s.push_str(&format!("warning: {w}\n"));
    }
    s.push('\n');
    for c in &out.checks {
        s.push_str(&format!(
            "{} {}: {} {} {}\n",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            format_float(c.value),
            c.relation,
            format_float(c.threshold)
        ));
    }
    if !out.notes.is_empty() {
        s.push('\n');
        for n in &out.notes {
            s.push_str(&format!("note: {n}\n"));
        }
    }
    let pass = out.checks.iter().all(|c| c.pass);
    s.push_str(&format!("\noverall: {}\n", if pass { "PASS" } else { "FAIL" }));
    s
}

/// Validates, writes the manifest, runs the experiment and writes result
/// tables plus `summary.txt` under `<root>/<experiment id>/`.
pub fn run_experiment(cfg: &ExperimentConfig, root: &Path) -> Result<RunOutcome, HarnessError> {
    let findings = validate_config(cfg);
    if has_violations(&findings) {
        return Err(HarnessError::Invalid(
            findings
                .iter()
                .filter(|f| f.severity == Severity::Violation)
                .map(|f| f.message.clone())
                .collect(),
        ));
    }
    let warnings: Vec<String> = findings.into_iter().map(|f| f.message).collect();
    let field = KappaField::new(cfg.environment.clone())?;
    let content = ManifestContent {
        code_version: code_version(),
        config: serde_json::to_value(cfg.result_relevant()).expect("config serializes"),
        parameters: parameter_echo(cfg)?,
    };
    let hash = content.hash();
    let dir = root.join(cfg.experiment.as_str());
    let mut manifest = RunManifest {
        content_hash: hash.clone(),
        content,
        run: RunInfo {
            status: RunStatus::Running,
            workers: cfg.workers,
            wall_clock_seconds: 0.0,
            counters: Counters::default(),
            warnings: warnings.clone(),
            files: Vec::new(),
            error: None,
        },
    };
    manifest.write(&dir)?;

    let start = Instant::now();
    let out = match dispatch(cfg, &field, Workers(cfg.workers)) {
        Ok(out) => out,
        Err(e) => {
            manifest.run.status = RunStatus::Failed;
            manifest.run.error = Some(e.to_string());
            manifest.run.wall_clock_seconds = start.elapsed().as_secs_f64();
            manifest.write(&dir)?;
            return Err(e);
        }
    };
    let mut tables = out.tables.clone();
    tables.push(checks_table(&out.checks));
    let mut files = emit_results(&dir, &tables, &hash)?;
    let summary = dir.join("summary.txt");
    write_atomic(&summary, summary_text(cfg, &hash, &out, &warnings).as_bytes())?;
    files.push(summary);

    manifest.run.status = if out.partial { RunStatus::Partial } else { RunStatus::Complete };
    manifest.run.wall_clock_seconds = start.elapsed().as_secs_f64();
    manifest.run.counters = out.counters.clone();
    manifest.run.files = files
        .iter()
        .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
        .collect();
    manifest.write(&dir)?;
    Ok(RunOutcome {
        dir,
        manifest_hash: hash,
        checks: out.checks,
        warnings,
        partial: out.partial,
        files,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::KernelMode;

    fn small_gof() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default_for(ExperimentId::SamplerGof);
        cfg.environment = crate::env::EnvironmentSpec::unit(1, 1.0);
        cfg.kernel.mode = KernelMode::Truncated { r_max: 2.0 };
        cfg.gof.draws = 200_000;
        cfg
    }

    #[test]
    fn two_shell_gof_passes_with_ratio_four() {
        let dir = tempfile::tempdir().unwrap();
        let out = run_experiment(&small_gof(), dir.path()).unwrap();
        assert!(out.passed(), "{:?}", out.checks);
        let text = std::fs::read_to_string(out.dir.join("cells.csv")).unwrap();
        let mut shell = [0.0f64; 2];
        for line in text.lines().skip(1) {
            let f: Vec<&str> = line.split(',').collect();
            let z: i64 = f[1].parse().unwrap();
            shell[(z.abs() - 1) as usize] += f[3].parse::<f64>().unwrap();
        }
        let ratio = shell[0] / shell[1];
        assert!((ratio - 4.0).abs() < 0.1, "{ratio}");
    }

    #[test]
    fn manifest_exists_and_results_reference_it() {
        let dir = tempfile::tempdir().unwrap();
        let out = run_experiment(&small_gof(), dir.path()).unwrap();
        let manifest: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(out.dir.join("manifest.json")).unwrap()).unwrap();
        assert_eq!(manifest["content_hash"], out.manifest_hash.as_str());
        assert_eq!(manifest["run"]["status"], "complete");
        let line = std::fs::read_to_string(out.dir.join("cells.jsonl")).unwrap();
        let first: serde_json::Value = serde_json::from_str(line.lines().next().unwrap()).unwrap();
        assert_eq!(first["manifest"], out.manifest_hash.as_str());
    }

    #[test]
    fn invalid_config_is_rejected_before_any_output() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small_gof();
        cfg.environment.alpha = 2.5;
        let err = run_experiment(&cfg, dir.path()).unwrap_err();
        assert!(matches!(err, HarnessError::Invalid(_)));
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
    }

    #[test]
    fn output_root_prefers_the_config() {
        let mut cfg = small_gof();
        cfg.out_dir = Some(PathBuf::from("here"));
        assert_eq!(output_root(&cfg), PathBuf::from("here"));
    }
}
