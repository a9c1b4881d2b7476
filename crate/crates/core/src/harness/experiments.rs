//! The named experiments. Each returns result tables and pass/fail checks.

use super::config::{ExperimentConfig, ExperimentId, Tolerances};
use super::output::{format_float, Cell, Counters, Table};
use super::HarnessError;
use crate::audit::{
    audit_B1, audit_B1star, audit_C1, audit_matrix_limit, drift_sum, matrix_probes, moment_threshold, AuditParams,
    AuditReport, Regime,
};
use crate::env::KappaField;
use crate::genlab::{
    convergence_sweep, default_probe_grid, CutoffPolicy, LimitKernel, LimitOperator, QuadDepth, SweepConfig,
};
use crate::kernel::{default_inner_radius, JumpDraw, JumpKernelSampler, KernelMode};
use crate::lattice::{for_each_in_ball, LatticePoint};
use crate::limitref::{
    aij_quadrature, compare_cf, compare_covariance, default_xi_grid, exit_tail_report, BootstrapConfig, ExitSamples,
    LimitModel, StableLaw,
};
use crate::par::{map_indexed, Workers};
use crate::rng::{stream, Domain};
use crate::stats::chi_square;
use crate::testfn::TestFunction;
use crate::walker::{ensemble, exit_ensemble, EnsembleConfig};
use serde::Serialize;
use serde_json::{json, Value};
use std::collections::HashMap;

/// Depth used for the `a_ij` reference matrix.
const AIJ_DEPTH: usize = 8;
const AIJ_TOLERANCE: f64 = 1e-10;
/// Draws per sampler-gof chunk; chunk `c` uses its own keyed stream.
const GOF_CHUNK: u64 = 1 << 16;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    /// `<=`, `>=` or `<`.
    pub relation: String,
    pub threshold: f64,
    pub pass: bool,
}

impl Check {
    pub fn at_most(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            value,
            relation: "<=".into(),
            threshold,
            pass: value <= threshold,
        }
    }

    pub fn at_least(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            value,
            relation: ">=".into(),
            threshold,
            pass: value >= threshold,
        }
    }

    pub fn below(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            value,
            relation: "<".into(),
            threshold,
            pass: value < threshold,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ExperimentOutput {
    pub tables: Vec<Table>,
    pub checks: Vec<Check>,
    pub counters: Counters,
    pub partial: bool,
    pub notes: Vec<String>,
}

/// Kernel sampler for a run at scale `n` (`None` when the experiment has no scale).
pub fn sampler_for(cfg: &ExperimentConfig, n: Option<u32>) -> Result<JumpKernelSampler, HarnessError> {
    let d = cfg.environment.dimension;
    let mode = match (cfg.kernel.scale_truncation, n) {
        (Some(f), Some(n)) => KernelMode::Truncated { r_max: f * n as f64 },
        _ => cfg.kernel.mode,
    };
    let r0 = cfg.kernel.inner_radius.unwrap_or_else(|| default_inner_radius(d));
    Ok(JumpKernelSampler::build(d, cfg.environment.alpha, mode, r0)?)
}

fn sweep_test_function(cfg: &ExperimentConfig) -> TestFunction {
    TestFunction::new(cfg.sweep.shape, cfg.environment.dimension, cfg.sweep.support_radius)
}

fn sweep_limit(cfg: &ExperimentConfig) -> Result<LimitOperator, HarnessError> {
    if cfg.environment.alpha < 2.0 {
        Ok(LimitOperator::Stable {
            kernel: LimitKernel(cfg.limit_kernel()),
            depth: QuadDepth::default(),
        })
    } else {
        let a = aij_quadrature(&cfg.limit_kernel(), cfg.environment.dimension, AIJ_DEPTH, AIJ_TOLERANCE)?;
        Ok(LimitOperator::Diffusive { matrix: a.matrix })
    }
}

fn sweep_probes(cfg: &ExperimentConfig, f: &TestFunction) -> Vec<Vec<f64>> {
    cfg.probes
        .clone()
        .unwrap_or_else(|| default_probe_grid(f, cfg.sweep.dilation, cfg.sweep.per_radius))
}

fn audit_params(cfg: &ExperimentConfig, tol: &Tolerances) -> AuditParams {
    AuditParams {
        site_samples: cfg.audit.site_samples,
        plateau_factor: tol.plateau_factor,
        ..AuditParams::new(cfg.audit.outer_radius, cfg.audit.r_grid.clone())
    }
}

/// Module parameters echoed into the manifest before the run starts.
pub fn parameter_echo(cfg: &ExperimentConfig) -> Result<Value, HarnessError> {
    let tol = cfg.tolerances();
    let kernels = |grid: &[u32]| -> Result<Value, HarnessError> {
        if cfg.kernel.scale_truncation.is_some() {
            let mut m = serde_json::Map::new();
            for &n in grid {
                m.insert(n.to_string(), sampler_for(cfg, Some(n))?.describe());
            }
            Ok(Value::Object(m))
        } else {
            Ok(sampler_for(cfg, None)?.describe())
        }
    };
    let mut v = json!({ "tolerances": tol });
    match cfg.experiment {
        ExperimentId::SamplerGof | ExperimentId::ExitTail => {
            v["kernel"] = sampler_for(cfg, None)?.describe();
        }
        ExperimentId::StableLimit | ExperimentId::DiffusiveLimit => {
            v["kernel"] = kernels(&cfg.n_grid)?;
            v["xi_grid"] = json!(cfg.xi_grid.clone().unwrap_or_else(|| default_xi_grid(cfg.environment.dimension)));
            if cfg.experiment == ExperimentId::DiffusiveLimit {
                v["aij_depth"] = json!(AIJ_DEPTH);
            }
        }
        ExperimentId::GeneratorSweep => {
            let f = sweep_test_function(cfg);
            v["test_function"] = json!(f.id());
            v["probes"] = json!(sweep_probes(cfg, &f).len());
            v["cutoff"] = json!(CutoffPolicy {
                factor: cfg.sweep.cutoff_factor,
                tolerance: cfg.sweep.cutoff_tolerance,
            });
            v["limit_operator"] = serde_json::to_value(sweep_limit(cfg)?).expect("serializes");
        }
        ExperimentId::AuditSuite => {
            v["audit"] = serde_json::to_value(audit_params(cfg, &tol)).expect("serializes");
        }
    }
    Ok(v)
}

fn coord_columns(prefix: &str, d: usize) -> Vec<String> {
    (1..=d).map(|i| format!("{prefix}{i}")).collect()
}

fn table_with(name: &str, lead: &[&str], coords: &[String], tail: &[&str]) -> Table {
    let mut cols: Vec<&str> = lead.to_vec();
    cols.extend(coords.iter().map(String::as_str));
    cols.extend_from_slice(tail);
    Table::new(name, &cols)
}

fn cells(v: &[f64]) -> Vec<Cell> {
    v.iter().map(|x| Cell::Float(*x)).collect()
}

fn lattice_cells(z: &LatticePoint) -> Vec<Cell> {
    z.coords().iter().map(|&c| Cell::Int(c)).collect()
}

pub fn dispatch(cfg: &ExperimentConfig, field: &KappaField, workers: Workers) -> Result<ExperimentOutput, HarnessError> {
    match cfg.experiment {
        ExperimentId::SamplerGof => sampler_gof(cfg, workers),
        ExperimentId::ExitTail => exit_tail(cfg, field, workers),
        ExperimentId::GeneratorSweep => generator_sweep(cfg, field, workers),
        ExperimentId::StableLimit => stable_limit(cfg, field, workers),
        ExperimentId::DiffusiveLimit => diffusive_limit(cfg, field, workers),
        ExperimentId::AuditSuite => audit_suite(cfg, field, workers),
    }
}

fn sampler_gof(cfg: &ExperimentConfig, workers: Workers) -> Result<ExperimentOutput, HarnessError> {
    let tol = cfg.tolerances();
    let sampler = sampler_for(cfg, None)?;
    let d = sampler.dim();
    let reach = match sampler.mode() {
        KernelMode::Truncated { r_max } => cfg.gof.window.min(r_max),
        KernelMode::ExactInfinite => cfg.gof.window,
    };
    let mut window = Vec::new();
    for_each_in_ball(d, reach, |z| window.push(*z));
    let index: HashMap<LatticePoint, usize> = window.iter().enumerate().map(|(i, z)| (*z, i)).collect();
    let weights: Vec<f64> = window.iter().map(|z| sampler.weight(z)).collect();
    let total: f64 = weights.iter().sum();
    let probs: Vec<f64> = weights.iter().map(|w| w / total).collect();

    let draws = cfg.gof.draws;
    let chunks = draws.div_ceil(GOF_CHUNK) as usize;
    let seed = cfg.environment.master_seed;
    let per_chunk = map_indexed(chunks, workers, |c| {
        let mut rng = stream(seed, Domain::Sampler, c as u64);
        let count = GOF_CHUNK.min(draws - c as u64 * GOF_CHUNK);
        let mut hits = vec![0u64; window.len()];
        let mut phantoms = 0u64;
        for _ in 0..count {
            match sampler.sample_jump(&mut rng) {
                JumpDraw::Jump(z) => {
                    if let Some(&i) = index.get(&z) {
                        hits[i] += 1;
                    }
                }
                JumpDraw::Phantom => phantoms += 1,
            }
        }
        (hits, phantoms)
    });
    let mut observed = vec![0u64; window.len()];
    let mut counters = Counters::default();
    for (hits, ph) in per_chunk {
        for (o, h) in observed.iter_mut().zip(hits) {
            *o += h;
        }
        counters.phantoms += ph;
    }
    let in_window: u64 = observed.iter().sum();
    counters.jumps = draws - counters.phantoms;

    let coords = coord_columns("z", d);
    let mut table = table_with("cells", &[], &coords, &["norm", "observed", "probability", "expected"]);
    for (i, z) in window.iter().enumerate() {
        let mut row = lattice_cells(z);
        row.extend([
            z.norm().into(),
            observed[i].into(),
            probs[i].into(),
            (probs[i] * in_window as f64).into(),
        ]);
        table.push(row);
    }
    let mut checks = Vec::new();
    let mut notes = Vec::new();
    if window.len() < 2 || in_window == 0 {
        notes.push("fewer than two window cells or no draws in the window; no test".into());
    } else {
        let chi = chi_square(&observed, &probs);
        notes.push(format!(
            "chi-square {} on {} degrees of freedom from {in_window} draws in the window",
            chi.statistic, chi.dof
        ));
        checks.push(Check::at_least("chi-square p-value", chi.p_value, tol.gof_significance));
    }
    Ok(ExperimentOutput {
        tables: vec![table],
        checks,
        counters,
        partial: false,
        notes,
    })
}

fn exit_tail(cfg: &ExperimentConfig, field: &KappaField, workers: Workers) -> Result<ExperimentOutput, HarnessError> {
    let tol = cfg.tolerances();
    let sampler = sampler_for(cfg, None)?;
    let alpha = field.alpha();
    let last = cfg.exit.time_fractions.iter().copied().fold(0.0, f64::max);
    let mut samples = Vec::new();
    for (i, &r) in cfg.exit.radii.iter().enumerate() {
        let t_max = last * r.powf(alpha);
        let outcomes = exit_ensemble(field, &sampler, r, t_max, cfg.trajectories, i as u64, workers)?;
        samples.push(ExitSamples {
            radius: r,
            t_max,
            taus: outcomes.iter().map(|o| o.tau()).collect(),
        });
    }
    let rep = exit_tail_report(&samples, alpha, &cfg.exit.time_fractions, cfg.exit.probe_probability)?;

    let mut cells_t = Table::new(
        "exit_cells",
        &[
            "radius",
            "t",
            "exits",
            "trials",
            "probability",
            "wilson_low",
            "wilson_high",
            "implied_c",
            "excluded",
        ],
    );
    for c in &rep.cells {
        cells_t.push(vec![
            c.radius.into(),
            c.t.into(),
            c.exits.into(),
            c.trials.into(),
            c.probability.into(),
            c.wilson_low.into(),
            c.wilson_high.into(),
            c.implied_c.into(),
            c.excluded.into(),
        ]);
    }
    let mut q = Table::new("exit_quantiles", &["radius", "probability", "tau_quantile"]);
    for (r, tau) in &rep.quantiles {
        q.push(vec![(*r).into(), rep.probe_probability.into(), (*tau).into()]);
    }
    let mut checks = vec![Check::at_least(
        "constant c_hat bounds all Wilson upper limits",
        f64::from(u8::from(rep.bound_consistent)),
        1.0,
    )];
    checks.push(Check::at_most(
        "|r-exponent - alpha|",
        (rep.r_exponent - alpha).abs(),
        tol.exit_exponent_band,
    ));
    let mut notes = rep.notes.clone();
    notes.push(format!(
        "c_hat = {}, time slope = {}, r-exponent = {}",
        rep.c_hat, rep.slope, rep.r_exponent
    ));
    Ok(ExperimentOutput {
        tables: vec![cells_t, q],
        checks,
        counters: Counters::default(),
        partial: false,
        notes,
    })
}

fn generator_sweep(
    cfg: &ExperimentConfig,
    field: &KappaField,
    workers: Workers,
) -> Result<ExperimentOutput, HarnessError> {
    let tol = cfg.tolerances();
    let alpha = field.alpha();
    let d = field.dimension();
    let f = sweep_test_function(cfg);
    let limit = sweep_limit(cfg)?;
    let sweep = SweepConfig {
        n_grid: cfg.n_grid.clone(),
        probes: sweep_probes(cfg, &f),
        far_inner: cfg.sweep.far_inner,
        far_outer: cfg.sweep.far_outer,
        far_points: cfg.sweep.far_points,
        cutoff: CutoffPolicy {
            factor: cfg.sweep.cutoff_factor,
            tolerance: cfg.sweep.cutoff_tolerance,
        },
    };
    let rep = convergence_sweep(field, &limit, &f, &sweep, workers)?;

    let coords = coord_columns("x", d);
    let mut rows = table_with(
        "sweep_rows",
        &["n"],
        &coords,
        &["discrete", "limit", "abs_error", "cutoff_bound", "quadrature_error"],
    );
    for r in &rep.rows {
        let mut row = vec![r.n.into()];
        row.extend(cells(&r.probe));
        row.extend([
            r.value.into(),
            r.limit.into(),
            r.abs_error.into(),
            r.cutoff_error.into(),
            r.quad_error.into(),
        ]);
        rows.push(row);
    }
    let mut far = Table::new("far_field", &["n", "radius", "max_abs_value"]);
    for r in &rep.far_field {
        far.push(vec![r.n.into(), r.radius.into(), r.max_abs_value.into()]);
    }
    let mut summary = Table::new(
        "sweep_summary",
        &[
            "n",
            "probe_sup",
            "relative_to_limit",
            "far_max",
            "decay_exponent",
            "cutoff_bound",
            "cutoff_relative",
            "cutoff_limited",
        ],
    );
    for s in &rep.summaries {
        summary.push(vec![
            s.n.into(),
            s.probe_sup.into(),
            (s.probe_sup / rep.limit_sup).into(),
            s.far_max.into(),
            s.decay_exponent.into(),
            s.max_cutoff_error.into(),
            (s.max_cutoff_error / s.probe_sup).into(),
            s.cutoff_limited.into(),
        ]);
    }

    let mut checks = Vec::new();
    let sups: Vec<f64> = rep.summaries.iter().map(|s| s.probe_sup).collect();
    if sups.len() >= 2 {
        let worst = sups.windows(2).map(|w| w[1] / w[0]).fold(0.0, f64::max);
        checks.push(Check::below("largest ratio of consecutive probe discrepancies", worst, 1.0));
    }
    if let Some(last) = sups.last() {
        checks.push(Check::below(
            "final probe discrepancy / sup|limit|",
            last / rep.limit_sup,
            tol.sweep_final_ratio,
        ));
    }
    if alpha < 2.0 {
        let gap = rep.rows.iter().map(|r| r.quad_error).fold(0.0, f64::max);
        checks.push(Check::at_most("quadrature depth-doubling gap", gap, tol.quadrature_gap));
    }
    let target_n = cfg.sweep.far_field_n.filter(|n| cfg.n_grid.contains(n));
    let far_summary = match target_n {
        Some(n) => rep.summaries.iter().find(|s| s.n == n),
        None => rep.summaries.last(),
    };
    if let Some(s) = far_summary {
        checks.push(Check::at_most(
            format!("|far-field decay exponent - alpha| at n={}", s.n),
            (s.decay_exponent - alpha).abs(),
            tol.far_exponent_band,
        ));
    }
    let notes = vec![format!("sup |limit| over probes = {}", rep.limit_sup)];
    Ok(ExperimentOutput {
        tables: vec![rows, far, summary],
        checks,
        counters: Counters::default(),
        partial: false,
        notes,
    })
}

struct Ensembles {
    /// `(n, positions per sample time)`.
    runs: Vec<(u32, Vec<Vec<Vec<f64>>>)>,
    counters: Counters,
    partial: bool,
    table: Table,
}

/// One ensemble per `n`, all on the same trajectory label so that the
/// streams are shared across scales.
fn run_ensembles(cfg: &ExperimentConfig, field: &KappaField, workers: Workers) -> Result<Ensembles, HarnessError> {
    let mut runs = Vec::new();
    let mut counters = Counters::default();
    let mut partial = false;
    let mut table = Table::new(
        "ensemble_counters",
        &["n", "trajectories", "jumps", "phantoms", "truncated_runs"],
    );
    for &n in &cfg.n_grid {
        let sampler = sampler_for(cfg, Some(n))?;
        let out = ensemble(
            field,
            &sampler,
            &EnsembleConfig {
                n,
                sample_times: cfg.sample_times.clone(),
                trajectories: cfg.trajectories,
                label: 0,
                max_events: cfg.max_events,
            },
            workers,
        )?;
        let truncated = out.records.iter().filter(|r| r.truncated).count() as u64;
        let c = Counters {
            jumps: out.total_jumps,
            phantoms: out.total_phantoms,
            cap_exceedances: out.cap_exceedances,
            truncated_runs: truncated,
        };
        table.push(vec![
            n.into(),
            cfg.trajectories.into(),
            c.jumps.into(),
            c.phantoms.into(),
            truncated.into(),
        ]);
        counters.add(&c);
        partial |= out.partial;
        let positions = (0..cfg.sample_times.len()).map(|k| out.positions_at(k)).collect();
        runs.push((n, positions));
    }
    Ok(Ensembles {
        runs,
        counters,
        partial,
        table,
    })
}

fn stable_limit(cfg: &ExperimentConfig, field: &KappaField, workers: Workers) -> Result<ExperimentOutput, HarnessError> {
    let tol = cfg.tolerances();
    let d = field.dimension();
    let model = LimitModel::Stable(StableLaw::new(d, field.alpha(), cfg.limit_kernel())?);
    let grid = cfg.xi_grid.clone().unwrap_or_else(|| default_xi_grid(d));
    let cache = model.cache(&grid);
    let boot = BootstrapConfig {
        replicates: cfg.bootstrap_replicates,
        seed: cfg.environment.master_seed,
    };
    let ens = run_ensembles(cfg, field, workers)?;

    let coords = coord_columns("xi", d);
    let mut cf = table_with(
        "cf",
        &["n", "t"],
        &coords,
        &["empirical_re", "empirical_im", "model", "deviation", "ci_low", "ci_high"],
    );
    let mut summary = Table::new("cf_summary", &["n", "t", "model_alpha", "max_deviation"]);
    // per sample time: max deviation for each n
    let mut by_time: Vec<Vec<f64>> = vec![Vec::new(); cfg.sample_times.len()];
    for (n, positions) in &ens.runs {
        for (k, &t) in cfg.sample_times.iter().enumerate() {
            let rep = compare_cf(&positions[k], &cache, t, boot, workers)?;
            for r in &rep.rows {
                let mut row = vec![(*n).into(), t.into()];
                row.extend(cells(&r.xi));
                row.extend([
                    r.empirical_re.into(),
                    r.empirical_im.into(),
                    r.model.into(),
                    r.deviation.into(),
                    r.ci_low.into(),
                    r.ci_high.into(),
                ]);
                cf.push(row);
            }
            summary.push(vec![(*n).into(), t.into(), field.alpha().into(), rep.max_deviation.into()]);
            by_time[k].push(rep.max_deviation);
        }
    }

    let mut checks = Vec::new();
    for (k, &t) in cfg.sample_times.iter().enumerate() {
        let devs = &by_time[k];
        if devs.len() >= 2 {
            let worst = devs.windows(2).map(|w| w[1] / w[0]).fold(0.0, f64::max);
            checks.push(Check::below(
                format!("largest ratio of consecutive CF deviations (t={t})"),
                worst,
                1.0,
            ));
        }
        if let (Some(last), Some(n)) = (devs.last(), cfg.n_grid.last()) {
            checks.push(Check::below(
                format!("max CF deviation at n={n} (t={t})"),
                *last,
                tol.cf_max_deviation,
            ));
        }
    }
    if let (Some(wrong), Some((n, positions))) = (cfg.mismatch_alpha, ens.runs.last()) {
        let other = LimitModel::Stable(StableLaw::new(d, wrong, cfg.limit_kernel())?).cache(&grid);
        for (k, &t) in cfg.sample_times.iter().enumerate() {
            let rep = compare_cf(&positions[k], &other, t, boot, workers)?;
            summary.push(vec![(*n).into(), t.into(), wrong.into(), rep.max_deviation.into()]);
            let matched = by_time[k].last().copied().unwrap_or(f64::NAN);
            checks.push(Check::at_least(
                format!("mismatched-model deviation / matched at n={n} (t={t}, alpha={wrong})"),
                rep.max_deviation / matched,
                tol.mismatch_factor,
            ));
        }
    }
    let mut counters = ens.counters;
    let mut partial = ens.partial;
    let mut notes = Vec::new();
    let mut spread = Table::new("cross_seed", &["seed", "n", "t", "max_deviation"]);
    if let (false, Some(&n)) = (cfg.cross_seeds.is_empty(), cfg.n_grid.last()) {
        let sampler = sampler_for(cfg, Some(n))?;
        let mut by_seed: Vec<Vec<f64>> = vec![Vec::new(); cfg.sample_times.len()];
        for (k, dev) in by_time.iter().enumerate() {
            if let Some(&last) = dev.last() {
                by_seed[k].push(last);
                spread.push(vec![cfg.environment.master_seed.into(), n.into(), cfg.sample_times[k].into(), last.into()]);
            }
        }
        for &seed in &cfg.cross_seeds {
            let mut spec = cfg.environment.clone();
            spec.master_seed = seed;
            let other = KappaField::new(spec)?;
            let ens_cfg = EnsembleConfig {
                n,
                sample_times: cfg.sample_times.clone(),
                trajectories: cfg.trajectories,
                label: 0,
                max_events: cfg.max_events,
            };
            let out = ensemble(&other, &sampler, &ens_cfg, workers)?;
            counters.add(&Counters {
                jumps: out.total_jumps,
                phantoms: out.total_phantoms,
                cap_exceedances: out.cap_exceedances,
                truncated_runs: out.records.iter().filter(|r| r.truncated).count() as u64,
            });
            partial |= out.partial;
            for (k, &t) in cfg.sample_times.iter().enumerate() {
                let rep = compare_cf(&out.positions_at(k), &cache, t, boot, workers)?;
                spread.push(vec![seed.into(), n.into(), t.into(), rep.max_deviation.into()]);
                by_seed[k].push(rep.max_deviation);
            }
        }
        for (k, devs) in by_seed.iter().enumerate() {
            let lo = devs.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = devs.iter().copied().fold(0.0, f64::max);
            notes.push(format!(
                "cross-seed CF deviation at n={n}, t={}: {} seeds, min {} max {}",
                cfg.sample_times[k],
                devs.len(),
                format_float(lo),
                format_float(hi)
            ));
        }
    }
    Ok(ExperimentOutput {
        tables: vec![cf, summary, ens.table, spread],
        checks,
        counters,
        partial,
        notes,
    })
}

fn diffusive_limit(
    cfg: &ExperimentConfig,
    field: &KappaField,
    workers: Workers,
) -> Result<ExperimentOutput, HarnessError> {
    let tol = cfg.tolerances();
    let d = field.dimension();
    let aij = aij_quadrature(&cfg.limit_kernel(), d, AIJ_DEPTH, AIJ_TOLERANCE)?;
    let a = aij.matrix.clone();
    let ens = run_ensembles(cfg, field, workers)?;

    let mut entries = Table::new("covariance", &["n", "t", "i", "j", "per_time", "target"]);
    let mut summary = Table::new(
        "covariance_summary",
        &[
            "n",
            "t",
            "relative_deviation",
            "jackknife_se",
            "max_abs_diagonal_relative",
            "max_off_diagonal",
            "max_ks",
            "ks_critical",
            "singular",
        ],
    );
    let mut checks = Vec::new();
    let last_n = cfg.n_grid.last().copied();
    for (n, positions) in &ens.runs {
        for (k, &t) in cfg.sample_times.iter().enumerate() {
            let rep = compare_covariance(&positions[k], &a, t)?;
            for i in 0..d {
                for j in 0..d {
                    entries.push(vec![
                        (*n).into(),
                        t.into(),
                        i.into(),
                        j.into(),
                        rep.per_time.get(i, j).into(),
                        a.get(i, j).into(),
                    ]);
                }
            }
            let diag = rep.diagonal_relative.iter().map(|v| v.abs()).fold(0.0, f64::max);
            let ks = rep.ks.iter().copied().fold(0.0, f64::max);
            summary.push(vec![
                (*n).into(),
                t.into(),
                rep.relative_deviation.into(),
                rep.jackknife_se.into(),
                diag.into(),
                rep.max_off_diagonal.into(),
                ks.into(),
                rep.ks_critical.into(),
                rep.singular.into(),
            ]);
            if Some(*n) == last_n {
                checks.push(Check::at_most(
                    format!("max |Cov_ii / (t A_ii) - 1| at n={n} (t={t})"),
                    diag,
                    tol.covariance_diagonal,
                ));
                checks.push(Check::below(
                    format!("max |Cov_ij| / t off the diagonal at n={n} (t={t})"),
                    rep.max_off_diagonal,
                    tol.covariance_off_diagonal,
                ));
                checks.push(Check::below(
                    format!("max marginal KS distance at n={n} (t={t})"),
                    ks,
                    rep.ks_critical + tol.ks_slack,
                ));
            }
        }
    }
    let notes = vec![format!(
        "reference matrix from sphere quadrature, depth-doubling gap {}",
        aij.error_estimate
    )];
    Ok(ExperimentOutput {
        tables: vec![entries, summary, ens.table],
        checks,
        counters: ens.counters,
        partial: ens.partial,
        notes,
    })
}

fn push_audit(rep: &AuditReport, plateau: &mut Table, summary: &mut Table, checks: &mut Vec<Check>) {
    for r in &rep.rows {
        plateau.push(vec![
            rep.assumption.clone().into(),
            r.r.into(),
            r.inner_sup.into(),
            r.tail_sup.into(),
            r.inner_constant.into(),
            r.tail_constant.into(),
        ]);
    }
    summary.push(vec![
        rep.assumption.clone().into(),
        rep.fitted_c1.into(),
        rep.inner_spread.into(),
        rep.tail_spread.into(),
        rep.inner_exponent.into(),
        rep.sites_checked.into(),
        rep.sites_total.into(),
        rep.complete.into(),
        rep.remainder_share.into(),
        rep.remainder_error.into(),
        rep.pass.into(),
        rep.flags.join("; ").into(),
    ]);
    checks.push(Check::at_least(
        format!("{} plateau constants stable", rep.assumption),
        f64::from(u8::from(rep.pass)),
        1.0,
    ));
}

fn audit_suite(cfg: &ExperimentConfig, field: &KappaField, workers: Workers) -> Result<ExperimentOutput, HarnessError> {
    let tol = cfg.tolerances();
    let params = audit_params(cfg, &tol);
    let alpha = field.alpha();
    let d = field.dimension();
    let mut plateau = Table::new(
        "plateau",
        &["assumption", "r", "inner_sup", "tail_sup", "inner_constant", "tail_constant"],
    );
    let mut summary = Table::new(
        "audit_summary",
        &[
            "assumption",
            "fitted_c1",
            "inner_spread",
            "tail_spread",
            "inner_exponent",
            "sites_checked",
            "sites_total",
            "complete",
            "remainder_share",
            "remainder_error",
            "pass",
            "flags",
        ],
    );
    let mut checks = Vec::new();
    let mut tables = Vec::new();
    let mut notes = Vec::new();
    if alpha < 2.0 {
        push_audit(&audit_B1(field, &params, workers)?, &mut plateau, &mut summary, &mut checks);
        if alpha < 1.0 {
            push_audit(&audit_B1star(field, &params, workers)?, &mut plateau, &mut summary, &mut checks);
        }
    } else {
        push_audit(&audit_C1(field, &params, workers)?, &mut plateau, &mut summary, &mut checks);
        let kernel = &field.spec().mean_field;
        if kernel.is_x_independent() && (1..=3).contains(&d) {
            let target = aij_quadrature(kernel, d, AIJ_DEPTH, AIJ_TOLERANCE)?.matrix;
            let rep = audit_matrix_limit(
                field,
                &cfg.audit.matrix_n_grid,
                &matrix_probes(d, 1.0),
                &target,
                workers,
            )?;
            let coords: Vec<String> = (0..d)
                .flat_map(|i| (0..d).map(move |j| format!("m{}{}", i + 1, j + 1)))
                .collect();
            let mut m = table_with("matrix_limit", &["n"], &coords, &["deviation", "min_eigenvalue"]);
            let mut diag_rel = 0.0f64;
            let mut off = 0.0f64;
            for r in &rep.rows {
                let mut row = vec![r.n.into()];
                row.extend(cells(&r.matrix.entries));
                row.extend([r.deviation.into(), r.min_eigenvalue.into()]);
                m.push(row);
                if Some(&r.n) == cfg.audit.matrix_n_grid.last() {
                    for i in 0..d {
                        diag_rel = diag_rel.max((r.matrix.get(i, i) / target.get(i, i) - 1.0).abs());
                        for j in 0..d {
                            if i != j {
                                off = off.max(r.matrix.get(i, j).abs());
                            }
                        }
                    }
                }
            }
            tables.push(m);
            let n_max = cfg.audit.matrix_n_grid.last().copied().unwrap_or(0);
            checks.push(Check::at_least(
                "matrix deviations decrease in n",
                f64::from(u8::from(rep.decreasing)),
                1.0,
            ));
            checks.push(Check::at_least(
                "matrix sums non-negative definite",
                f64::from(u8::from(rep.eigen_floor_ok)),
                1.0,
            ));
            checks.push(Check::at_most(
                format!("max |M_ii / A_ii - 1| at n={n_max}"),
                diag_rel,
                tol.matrix_diagonal,
            ));
            // built-in x-independent kernels are even in each coordinate
            checks.push(Check::below(format!("max |M_ij| off the diagonal at n={n_max}"), off, 1e-12));
        } else {
            notes.push("matrix limit skipped: it needs an x-independent kernel in d <= 3".into());
        }
    }
    tables.insert(0, summary);
    tables.insert(0, plateau);

    let regime = if field.is_balanced() { Regime::Balanced } else { Regime::NonBalanced };
    let v = moment_threshold(d, alpha, regime)?;
    let mut th = Table::new(
        "moment_threshold",
        &["regime", "dimension_bound", "dimension_ok", "requirement", "warning"],
    );
    th.push(vec![
        format!("{regime:?}").to_lowercase().into(),
        v.dimension_bound.into(),
        v.dimension_ok.into(),
        serde_json::to_string(&v.requirement).expect("serializes").into(),
        v.warning.clone().unwrap_or_default().into(),
    ]);
    tables.push(th);

    let origin = LatticePoint::zero(d);
    let mut drift = table_with("drift", &["r"], &coord_columns("drift", d), &["norm"]);
    let mut worst = 0.0f64;
    for &r in &cfg.audit.r_grid {
        let v = drift_sum(field, &origin, r);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        worst = worst.max(norm);
        let mut row = vec![r.into()];
        row.extend(cells(&v));
        row.push(norm.into());
        drift.push(row);
    }
    tables.push(drift);
    if field.is_balanced() {
        checks.push(Check::at_most("drift sum norm at the origin", worst, 0.0));
    }
    Ok(ExperimentOutput {
        tables,
        checks,
        counters: Counters::default(),
        partial: false,
        notes,
    })
}
