//! Experiment configuration, tolerance profiles and validation.

use crate::audit::{moment_threshold, Regime};
use crate::env::{EnvironmentSpec, Fluctuation, MeanField};
use crate::kernel::KernelMode;
use crate::testfn::BumpShape;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentId {
    ExitTail,
    GeneratorSweep,
    StableLimit,
    DiffusiveLimit,
    AuditSuite,
    SamplerGof,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 6] = [
        ExperimentId::ExitTail,
        ExperimentId::GeneratorSweep,
        ExperimentId::StableLimit,
        ExperimentId::DiffusiveLimit,
        ExperimentId::AuditSuite,
        ExperimentId::SamplerGof,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentId::ExitTail => "exit-tail",
            ExperimentId::GeneratorSweep => "generator-sweep",
            ExperimentId::StableLimit => "stable-limit",
            ExperimentId::DiffusiveLimit => "diffusive-limit",
            ExperimentId::AuditSuite => "audit-suite",
            ExperimentId::SamplerGof => "sampler-gof",
        }
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| format!("unknown experiment id '{s}'"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ToleranceProfile {
    Strict,
    #[default]
    Default,
    Exploratory,
}

/// Pass thresholds. Each default is the bound used by the matching
/// acceptance check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    /// sampler-gof: minimum chi-square p-value.
    pub gof_significance: f64,
    /// exit-tail: allowed `|fitted r-exponent - alpha|`.
    pub exit_exponent_band: f64,
    /// generator-sweep: final probe discrepancy relative to `sup |limit|`.
    pub sweep_final_ratio: f64,
    /// generator-sweep: quadrature depth-doubling gap.
    pub quadrature_gap: f64,
    /// generator-sweep: allowed `|decay exponent - alpha|`.
    pub far_exponent_band: f64,
    /// stable-limit: max CF deviation at the largest n.
    pub cf_max_deviation: f64,
    /// stable-limit: mismatched-model deviation must exceed this multiple.
    pub mismatch_factor: f64,
    /// diffusive-limit: relative error of the covariance diagonal.
    pub covariance_diagonal: f64,
    /// diffusive-limit: absolute off-diagonal bound.
    pub covariance_off_diagonal: f64,
    /// diffusive-limit: KS slack added to the 95% critical value.
    pub ks_slack: f64,
    /// audit-suite: plateau `max / median` bound.
    pub plateau_factor: f64,
    /// audit-suite: matrix-sum diagonal relative error at the largest n.
    pub matrix_diagonal: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            gof_significance: 0.01,
            exit_exponent_band: 0.15,
            sweep_final_ratio: 0.05,
            quadrature_gap: 1e-6,
            far_exponent_band: 0.2,
            cf_max_deviation: 0.05,
            mismatch_factor: 3.0,
            covariance_diagonal: 0.15,
            covariance_off_diagonal: 0.1,
            ks_slack: 0.02,
            plateau_factor: 2.0,
            matrix_diagonal: 0.05,
        }
    }
}

impl Tolerances {
    /// Strict halves every band, exploratory doubles it. Significance levels
    /// and factors move so that strict is always harder to pass.
    pub fn for_profile(profile: ToleranceProfile) -> Self {
        let base = Self::default();
        let k = match profile {
            ToleranceProfile::Strict => 0.5,
            ToleranceProfile::Default => return base,
            ToleranceProfile::Exploratory => 2.0,
        };
        Self {
            gof_significance: base.gof_significance / k,
            exit_exponent_band: base.exit_exponent_band * k,
            sweep_final_ratio: base.sweep_final_ratio * k,
            quadrature_gap: base.quadrature_gap * k,
            far_exponent_band: base.far_exponent_band * k,
            cf_max_deviation: base.cf_max_deviation * k,
            mismatch_factor: base.mismatch_factor / k,
            covariance_diagonal: base.covariance_diagonal * k,
            covariance_off_diagonal: base.covariance_off_diagonal * k,
            ks_slack: base.ks_slack * k,
            plateau_factor: 1.0 + (base.plateau_factor - 1.0) * k,
            matrix_diagonal: base.matrix_diagonal * k,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KernelParams {
    pub mode: KernelMode,
    /// Alias-table radius; dimension default when absent.
    pub inner_radius: Option<f64>,
    /// When set, a run at scale `n` truncates jumps at `factor * n`,
    /// overriding `mode`.
    pub scale_truncation: Option<f64>,
}

impl Default for KernelParams {
    fn default() -> Self {
        Self {
            mode: KernelMode::ExactInfinite,
            inner_radius: None,
            scale_truncation: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExitParams {
    pub radii: Vec<f64>,
    /// Checked times `t = frac * r^alpha`.
    pub time_fractions: Vec<f64>,
    /// Exit probability at which the `r`-exponent of the time quantile is fitted.
    pub probe_probability: f64,
}

impl Default for ExitParams {
    fn default() -> Self {
        Self {
            radii: vec![8.0, 16.0, 32.0, 64.0],
            time_fractions: vec![0.025, 0.05, 0.1],
            probe_probability: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepParams {
    pub shape: BumpShape,
    pub support_radius: f64,
    /// Probe grid covers `dilation * N0` with spacing `N0 / per_radius`,
    /// unless explicit probes are given.
    pub dilation: f64,
    pub per_radius: usize,
    pub far_inner: f64,
    pub far_outer: f64,
    pub far_points: usize,
    /// Scale at which the far-field exponent is checked; largest n when absent.
    pub far_field_n: Option<u32>,
    pub cutoff_factor: f64,
    pub cutoff_tolerance: f64,
}

impl Default for SweepParams {
    fn default() -> Self {
        Self {
            shape: BumpShape::Radial,
            support_radius: 1.0,
            dilation: 4.0,
            per_radius: 8,
            far_inner: 4.0,
            far_outer: 32.0,
            far_points: 8,
            far_field_n: Some(32),
            cutoff_factor: 64.0,
            cutoff_tolerance: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AuditSettings {
    pub outer_radius: f64,
    pub r_grid: Vec<f64>,
    pub site_samples: usize,
    /// Scales of the second-moment matrix sums (alpha = 2).
    pub matrix_n_grid: Vec<u32>,
}

impl Default for AuditSettings {
    fn default() -> Self {
        Self {
            outer_radius: 256.0,
            r_grid: vec![16.0, 32.0, 64.0, 128.0, 256.0],
            site_samples: 32,
            matrix_n_grid: vec![100, 1000, 10000],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GofParams {
    pub draws: u64,
    /// Cells are the lattice points with `0 < |z| <= window`.
    pub window: f64,
}

impl Default for GofParams {
    fn default() -> Self {
        Self {
            draws: 1_000_000,
            window: 8.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentId,
    pub environment: EnvironmentSpec,
    #[serde(default)]
    pub kernel: KernelParams,
    #[serde(default)]
    pub n_grid: Vec<u32>,
    #[serde(default)]
    pub trajectories: usize,
    #[serde(default)]
    pub sample_times: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xi_grid: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probes: Option<Vec<Vec<f64>>>,
    /// Reference kernel of the limit law; the environment mean field when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limit_kernel: Option<MeanField>,
    /// stable-limit: alpha of a deliberately wrong reference model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mismatch_alpha: Option<f64>,
    /// stable-limit: further environment seeds run at the largest `n`; their
    /// spread is reported, not tested.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cross_seeds: Vec<u64>,
    /// Event budget per trajectory; runs that hit it are marked partial.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_events: Option<u64>,
    #[serde(default = "default_replicates")]
    pub bootstrap_replicates: usize,
    #[serde(default)]
    pub exit: ExitParams,
    #[serde(default)]
    pub sweep: SweepParams,
    #[serde(default)]
    pub audit: AuditSettings,
    #[serde(default)]
    pub gof: GofParams,
    #[serde(default)]
    pub tolerance_profile: ToleranceProfile,
    /// Overrides the profile when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerances: Option<Tolerances>,
    /// Worker count; all cores when absent. Never affects results.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Built-in configuration for each experiment id.
    pub fn default_for(id: ExperimentId) -> Self {
        let base = |environment: EnvironmentSpec| Self {
            experiment: id,
            environment,
            kernel: KernelParams::default(),
            n_grid: Vec::new(),
            trajectories: 0,
            sample_times: Vec::new(),
            xi_grid: None,
            probes: None,
            limit_kernel: None,
            mismatch_alpha: None,
            cross_seeds: Vec::new(),
            max_events: None,
            bootstrap_replicates: 200,
            exit: ExitParams::default(),
            sweep: SweepParams::default(),
            audit: AuditSettings::default(),
            gof: GofParams::default(),
            tolerance_profile: ToleranceProfile::Default,
            tolerances: None,
            workers: None,
            out_dir: None,
        };
        match id {
            ExperimentId::ExitTail => Self {
                trajectories: 10_000,
                ..base(EnvironmentSpec::unit(2, 1.0))
            },
            ExperimentId::GeneratorSweep => Self {
                n_grid: vec![8, 16, 32, 64],
                ..base(EnvironmentSpec::unit(1, 1.5))
            },
            ExperimentId::StableLimit => Self {
                n_grid: vec![16, 32, 64],
                trajectories: 10_000,
                sample_times: vec![1.0],
                mismatch_alpha: Some(1.5),
                cross_seeds: vec![2025, 2026],
                ..base(EnvironmentSpec::uniform(2, 1.0, 0.5, 1.5, 2024))
            },
            ExperimentId::DiffusiveLimit => Self {
                kernel: KernelParams {
                    scale_truncation: Some(1.0),
                    ..KernelParams::default()
                },
                n_grid: vec![128],
                trajectories: 10_000,
                sample_times: vec![1.0],
                ..base(EnvironmentSpec::uniform(2, 2.0, 0.5, 1.5, 2024))
            },
            ExperimentId::AuditSuite => base(EnvironmentSpec::unit(2, 1.0)),
            ExperimentId::SamplerGof => base(EnvironmentSpec::unit(2, 1.5)),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn tolerances(&self) -> Tolerances {
        self.tolerances
            .clone()
            .unwrap_or_else(|| Tolerances::for_profile(self.tolerance_profile))
    }

    pub fn limit_kernel(&self) -> MeanField {
        self.limit_kernel
            .clone()
            .unwrap_or_else(|| self.environment.mean_field.clone())
    }

    /// Copy without the fields that may not influence results.
    pub fn result_relevant(&self) -> Self {
        Self {
            workers: None,
            out_dir: None,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Severity {
    /// Blocks the run.
    Violation,
    /// Outside the convergence hypotheses; the run proceeds.
    Warning,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Finding {
    pub severity: Severity,
    pub message: String,
}

impl Finding {
    fn violation(message: impl Into<String>) -> Self {
        Self {
            severity: Severity::Violation,
            message: message.into(),
        }
    }

    fn warning(message: impl Into<String>) -> Self {
        Self {
            severity: Severity::Warning,
            message: message.into(),
        }
    }
}

pub fn has_violations(findings: &[Finding]) -> bool {
    findings.iter().any(|f| f.severity == Severity::Violation)
}

/// Hard violations and hypothesis warnings for a configuration.
pub fn validate_config(cfg: &ExperimentConfig) -> Vec<Finding> {
    let mut out = Vec::new();
    let env = &cfg.environment;
    let alpha = env.alpha;
    if !(alpha > 0.0 && alpha <= 2.0) {
        out.push(Finding::violation(format!("alpha = {alpha} is outside (0, 2]")));
        return out;
    }
    if let Err(e) = env.validate() {
        out.push(Finding::violation(e.to_string()));
        return out;
    }
    if let KernelMode::Truncated { r_max } = cfg.kernel.mode {
        if !(r_max >= 1.0) {
            out.push(Finding::violation(format!(
                "truncation radius {r_max} leaves no jumps (z = 0 is never a jump)"
            )));
        }
    }
    if let Some(r0) = cfg.kernel.inner_radius {
        if !(r0 >= 1.0) {
            out.push(Finding::violation(format!("inner radius {r0} must be at least 1")));
        }
    }
    if let Some(f) = cfg.kernel.scale_truncation {
        if !(f > 0.0 && f.is_finite()) {
            out.push(Finding::violation(format!("scale truncation factor {f} must be positive")));
        }
    }
    if let Some(w) = cfg.workers {
        if w == 0 {
            out.push(Finding::violation("workers must be at least 1"));
        }
    }
    if cfg.n_grid.contains(&0) {
        out.push(Finding::violation("n_grid entries must be positive"));
    }
    if cfg.sample_times.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
        out.push(Finding::violation("sample times must be positive and finite"));
    }
    if let Some(a) = cfg.mismatch_alpha {
        if !(a > 0.0 && a < 2.0) {
            out.push(Finding::violation(format!("mismatch alpha {a} is outside (0, 2)")));
        }
    }
    let d = env.dimension;
    let needs_reference = matches!(cfg.experiment, ExperimentId::StableLimit | ExperimentId::DiffusiveLimit)
        || (cfg.experiment == ExperimentId::GeneratorSweep && alpha == 2.0);

    match cfg.experiment {
        ExperimentId::SamplerGof => {
            if !(cfg.gof.window >= 1.0) {
                out.push(Finding::violation("gof window must contain a lattice point (window >= 1)"));
            }
            if cfg.gof.draws == 0 {
                out.push(Finding::violation("gof draws must be positive"));
            }
        }
        ExperimentId::ExitTail => {
            if cfg.exit.radii.is_empty() || cfg.exit.radii.iter().any(|r| !(*r > 0.0)) {
                out.push(Finding::violation("exit radii must be positive and nonempty"));
            }
            if cfg.exit.time_fractions.is_empty() || cfg.exit.time_fractions.iter().any(|t| !(*t > 0.0)) {
                out.push(Finding::violation("exit time fractions must be positive and nonempty"));
            }
            if !(cfg.exit.probe_probability > 0.0 && cfg.exit.probe_probability < 1.0) {
                out.push(Finding::violation("probe probability must lie in (0, 1)"));
            }
            if cfg.trajectories == 0 {
                out.push(Finding::violation("trajectories must be positive"));
            }
        }
        ExperimentId::GeneratorSweep => {
            if cfg.n_grid.is_empty() {
                out.push(Finding::violation("n_grid is empty"));
            }
            if !(1..=3).contains(&d) {
                out.push(Finding::violation(format!("limit quadrature covers d = 1, 2, 3 only, got {d}")));
            }
            if !(cfg.sweep.support_radius > 0.0) {
                out.push(Finding::violation("support radius must be positive"));
            }
        }
        ExperimentId::StableLimit => {
            if alpha == 2.0 {
                out.push(Finding::violation("stable-limit needs alpha < 2; use diffusive-limit"));
            }
            if cfg.n_grid.is_empty() || cfg.sample_times.is_empty() {
                out.push(Finding::violation("n_grid and sample_times must be nonempty"));
            }
            if cfg.trajectories < crate::limitref::MIN_CF_SAMPLES {
                out.push(Finding::violation(format!(
                    "at least {} trajectories are needed",
                    crate::limitref::MIN_CF_SAMPLES
                )));
            }
        }
        ExperimentId::DiffusiveLimit => {
            if alpha != 2.0 {
                out.push(Finding::violation(format!("diffusive-limit requires alpha = 2, got {alpha}")));
            }
            if cfg.n_grid.is_empty() || cfg.sample_times.is_empty() {
                out.push(Finding::violation("n_grid and sample_times must be nonempty"));
            }
            if cfg.trajectories < crate::limitref::MIN_COV_SAMPLES {
                out.push(Finding::violation(format!(
                    "at least {} trajectories are needed",
                    crate::limitref::MIN_COV_SAMPLES
                )));
            }
        }
        ExperimentId::AuditSuite => {
            if !(cfg.audit.outer_radius > 1.0) {
                out.push(Finding::violation("audit outer radius must exceed 1"));
            }
            if cfg.audit.r_grid.is_empty() || cfg.audit.r_grid.iter().any(|r| !(*r >= 1.0)) {
                out.push(Finding::violation("audit r_grid must be nonempty with r >= 1"));
            }
        }
    }
    if needs_reference {
        let kernel = cfg.limit_kernel();
        if !(1..=3).contains(&d) {
            out.push(Finding::violation(format!("reference laws cover d = 1, 2, 3 only, got {d}")));
        }
        if !kernel.is_x_independent() {
            out.push(Finding::violation("reference laws need an x-independent limit kernel"));
        }
    }

    // hypothesis checks never block the run
    let regime = if env.balanced { Regime::Balanced } else { Regime::NonBalanced };
    if let Ok(v) = moment_threshold(d, alpha, regime) {
        if let Some(w) = v.warning {
            out.push(Finding::warning(w));
        }
    }
    if !env.balanced && alpha >= 1.0 && cfg.experiment != ExperimentId::SamplerGof {
        out.push(Finding::warning("non-balanced field with alpha >= 1: no limit theorem applies"));
    }
    if alpha == 2.0 && unbounded_fluctuation(&env.fluctuation) {
        out.push(Finding::warning("alpha = 2 needs exponential moments of kappa"));
    }
    if let Some(k) = &cfg.limit_kernel {
        if *k != env.mean_field && env.balanced {
            out.push(Finding::warning("limit kernel differs from the environment mean field"));
        }
    }
    out
}

fn default_replicates() -> usize {
    200
}

fn unbounded_fluctuation(f: &Fluctuation) -> bool {
    matches!(f, Fluctuation::BoundedPareto { .. })
}
