//! Exact continuous-time simulation of the walk by uniformization.
//!
//! A single Poisson clock runs at `Lambda = kappa_max * D`. At every tick the
//! kernel proposes `z` with probability `|z|^{-(d+alpha)} / D` (or a phantom),
//! and the move `x -> x + z` is accepted with probability `kappa(x,z) / kappa_max`.
//! The accepted jump rate is then exactly `kappa(x,z) |z|^{-(d+alpha)}`.

use crate::env::KappaField;
use crate::kernel::{JumpDraw, JumpKernelSampler, KernelError};
use crate::lattice::LatticePoint;
use crate::par::{map_indexed, Workers};
use crate::rng::{labeled_stream, Domain};
use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};
use std::ops::ControlFlow;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WalkError {
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("field dimension {field} differs from kernel dimension {kernel}")]
    DimensionMismatch { field: usize, kernel: usize },
    #[error("field alpha {field} differs from kernel alpha {kernel}")]
    AlphaMismatch { field: f64, kernel: f64 },
    #[error("acceptance ratio {ratio} > 1 at kappa = {kappa}: rate cap violated")]
    CapViolated { ratio: f64, kappa: f64 },
    #[error("non-finite uniformization rate {0}")]
    NonFiniteRate(f64),
    #[error("horizon must be positive and finite, got {0}")]
    InvalidHorizon(f64),
    #[error("trajectory horizon {horizon} is shorter than the needed {needed}")]
    HorizonTooShort { needed: f64, horizon: f64 },
}

/// Raw-time multiplier of the scaled process: `n^alpha` for `alpha < 2`,
/// `n^2 / log(1 + n)` for `alpha = 2`.
pub fn time_scale(n: u32, alpha: f64) -> f64 {
    let n = n as f64;
    if alpha == 2.0 {
        n * n / n.ln_1p()
    } else {
        n.powf(alpha)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Event {
    pub time: f64,
    pub position: LatticePoint,
}

/// Sparse piecewise-constant right-continuous path.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub start: LatticePoint,
    pub events: Vec<Event>,
    pub horizon: f64,
    pub jump_count: u64,
    pub phantom_count: u64,
}

impl Trajectory {
    pub fn position_at(&self, t: f64) -> LatticePoint {
        let k = self.events.partition_point(|e| e.time <= t);
        if k == 0 {
            self.start
        } else {
            self.events[k - 1].position
        }
    }

    pub fn end_position(&self) -> LatticePoint {
        self.events.last().map_or(self.start, |e| e.position)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScaledPath {
    pub n: u32,
    pub alpha: f64,
    pub samples: Vec<(f64, Vec<f64>)>,
}

/// Reads `n^{-1} X` at rescaled times off a raw trajectory.
pub fn scale_path(
    traj: &Trajectory,
    n: u32,
    alpha: f64,
    sample_times: &[f64],
) -> Result<ScaledPath, WalkError> {
    let mult = time_scale(n, alpha);
    let t_max = sample_times.iter().copied().fold(0.0, f64::max);
    let needed = mult * t_max;
    if needed > traj.horizon * (1.0 + 1e-12) {
        return Err(WalkError::HorizonTooShort {
            needed,
            horizon: traj.horizon,
        });
    }
    let samples = sample_times
        .iter()
        .map(|&t| (t, traj.position_at(mult * t).scaled(n as f64)))
        .collect();
    Ok(ScaledPath { n, alpha, samples })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSummary {
    pub end: LatticePoint,
    pub end_time: f64,
    pub jumps: u64,
    pub phantoms: u64,
    pub stopped: bool,
    pub event_limit_hit: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "outcome", rename_all = "kebab-case")]
pub enum ExitOutcome {
    Exited { tau: f64, position: LatticePoint },
    Survived,
}

impl ExitOutcome {
    pub fn tau(&self) -> Option<f64> {
        match self {
            ExitOutcome::Exited { tau, .. } => Some(*tau),
            ExitOutcome::Survived => None,
        }
    }
}

/// A field paired with a kernel and its uniformization rate.
#[derive(Debug, Clone, Copy)]
pub struct Walker<'a> {
    field: &'a KappaField,
    sampler: &'a JumpKernelSampler,
    rate: f64,
    kappa_max: f64,
}

impl<'a> Walker<'a> {
    pub fn new(field: &'a KappaField, sampler: &'a JumpKernelSampler) -> Result<Self, WalkError> {
        if field.dimension() != sampler.dim() {
            return Err(WalkError::DimensionMismatch {
                field: field.dimension(),
                kernel: sampler.dim(),
            });
        }
        if field.alpha() != sampler.alpha() {
            return Err(WalkError::AlphaMismatch {
                field: field.alpha(),
                kernel: sampler.alpha(),
            });
        }
        let kappa_max = field.kappa_max();
        let rate = sampler.lambda_upper(kappa_max)?;
        if !rate.is_finite() {
            return Err(WalkError::NonFiniteRate(rate));
        }
        Ok(Self {
            field,
            sampler,
            rate,
            kappa_max,
        })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn field(&self) -> &KappaField {
        self.field
    }

    pub fn sampler(&self) -> &JumpKernelSampler {
        self.sampler
    }

    /// Core event loop. `on_jump(t, new_position)` runs after each accepted
    /// jump and may stop the run.
    pub fn run<R, F>(
        &self,
        x0: LatticePoint,
        horizon: f64,
        rng: &mut R,
        max_events: Option<u64>,
        mut on_jump: F,
    ) -> Result<RunSummary, WalkError>
    where
        R: Rng + ?Sized,
        F: FnMut(f64, &LatticePoint) -> ControlFlow<()>,
    {
        if !(horizon > 0.0) || horizon.is_nan() {
            return Err(WalkError::InvalidHorizon(horizon));
        }
        let mut summary = RunSummary {
            end: x0,
            end_time: 0.0,
            jumps: 0,
            phantoms: 0,
            stopped: false,
            event_limit_hit: false,
        };
        if self.rate == 0.0 {
            return Ok(summary);
        }
        let mut x = x0;
        let mut t = 0.0;
        loop {
            let gap: f64 = rng.sample(Exp1);
            t += gap / self.rate;
            if t > horizon {
                break;
            }
            if let Some(limit) = max_events {
                if summary.jumps + summary.phantoms >= limit {
                    summary.event_limit_hit = true;
                    break;
                }
            }
            match self.sampler.sample_jump(rng) {
                JumpDraw::Phantom => summary.phantoms += 1,
                JumpDraw::Jump(z) => {
                    let kappa = self.field.kappa(&x, &z);
                    let ratio = kappa / self.kappa_max;
                    if ratio > 1.0 {
                        return Err(WalkError::CapViolated { ratio, kappa });
                    }
                    if rng.random::<f64>() < ratio {
                        x = x + z;
                        summary.jumps += 1;
                        summary.end_time = t;
                        if on_jump(t, &x).is_break() {
                            summary.stopped = true;
                            break;
                        }
                    } else {
                        summary.phantoms += 1;
                    }
                }
            }
        }
        summary.end = x;
        Ok(summary)
    }

    /// Full trajectory on `[0, horizon]`.
    pub fn simulate<R: Rng + ?Sized>(
        &self,
        x0: LatticePoint,
        horizon: f64,
        rng: &mut R,
    ) -> Result<Trajectory, WalkError> {
        let mut events = Vec::new();
        let s = self.run(x0, horizon, rng, None, |t, x| {
            events.push(Event {
                time: t,
                position: *x,
            });
            ControlFlow::Continue(())
        })?;
        Ok(Trajectory {
            start: x0,
            events,
            horizon,
            jump_count: s.jumps,
            phantom_count: s.phantoms,
        })
    }

    /// First exit time from the closed ball `B(x, r)`, or survival up to `t_max`.
    pub fn exit_time<R: Rng + ?Sized>(
        &self,
        x: LatticePoint,
        r: f64,
        t_max: f64,
        rng: &mut R,
    ) -> Result<ExitOutcome, WalkError> {
        let r_sq = r * r;
        let mut exit = None;
        self.run(x, t_max, rng, None, |t, y| {
            if (*y - x).norm_sq_f64() > r_sq {
                exit = Some(ExitOutcome::Exited {
                    tau: t,
                    position: *y,
                });
                ControlFlow::Break(())
            } else {
                ControlFlow::Continue(())
            }
        })?;
        Ok(exit.unwrap_or(ExitOutcome::Survived))
    }
}

/// Free-function form of [`Walker::simulate`].
pub fn simulate<R: Rng + ?Sized>(
    field: &KappaField,
    sampler: &JumpKernelSampler,
    x0: LatticePoint,
    horizon: f64,
    rng: &mut R,
) -> Result<Trajectory, WalkError> {
    Walker::new(field, sampler)?.simulate(x0, horizon, rng)
}

/// Free-function form of [`Walker::exit_time`].
pub fn exit_time<R: Rng + ?Sized>(
    field: &KappaField,
    sampler: &JumpKernelSampler,
    x: LatticePoint,
    r: f64,
    t_max: f64,
    rng: &mut R,
) -> Result<ExitOutcome, WalkError> {
    Walker::new(field, sampler)?.exit_time(x, r, t_max, rng)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub n: u32,
    /// Scaled sample times, sorted ascending.
    pub sample_times: Vec<f64>,
    pub trajectories: usize,
    /// Separates the streams of different batches under one master seed.
    #[serde(default)]
    pub label: u64,
    /// Per-trajectory cap on clock events; exceeding it flags the record.
    #[serde(default)]
    pub max_events: Option<u64>,
}

/// One line of ensemble output.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryRecord {
    pub index: usize,
    /// Scaled positions at each sample time.
    pub samples: Vec<Vec<f64>>,
    pub end: Vec<f64>,
    pub jumps: u64,
    pub phantoms: u64,
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleOutput {
    pub records: Vec<TrajectoryRecord>,
    pub partial: bool,
    pub total_jumps: u64,
    pub total_phantoms: u64,
    pub cap_exceedances: u64,
}

impl EnsembleOutput {
    /// Scaled positions at sample time index `k`.
    pub fn positions_at(&self, k: usize) -> Vec<Vec<f64>> {
        self.records.iter().map(|r| r.samples[k].clone()).collect()
    }
}

/// Runs `cfg.trajectories` independent walks from the origin. Trajectory `i`
/// uses a stream keyed by `(master_seed, label, i)`, so the output is the same
/// for every worker count.
pub fn ensemble(
    field: &KappaField,
    sampler: &JumpKernelSampler,
    cfg: &EnsembleConfig,
    workers: Workers,
) -> Result<EnsembleOutput, WalkError> {
    let walker = Walker::new(field, sampler)?;
    let mult = time_scale(cfg.n, field.alpha());
    let raw_times: Vec<f64> = cfg.sample_times.iter().map(|t| t * mult).collect();
    let horizon = raw_times.iter().copied().fold(0.0, f64::max);
    let n = cfg.n as f64;
    let seed = field.spec().master_seed;
    let dim = field.dimension();

    let results = map_indexed(cfg.trajectories, workers, |i| {
        let mut rng = labeled_stream(seed, Domain::Trajectory, cfg.label, i as u64);
        let origin = LatticePoint::zero(dim);
        let mut samples = Vec::with_capacity(raw_times.len());
        let mut prev = origin;
        let summary = walker.run(origin, horizon, &mut rng, cfg.max_events, |t, x| {
            while samples.len() < raw_times.len() && raw_times[samples.len()] < t {
                samples.push(prev.scaled(n));
            }
            prev = *x;
            ControlFlow::Continue(())
        })?;
        while samples.len() < raw_times.len() {
            samples.push(summary.end.scaled(n));
        }
        Ok::<_, WalkError>(TrajectoryRecord {
            index: i,
            end: summary.end.scaled(n),
            samples,
            jumps: summary.jumps,
            phantoms: summary.phantoms,
            truncated: summary.event_limit_hit,
        })
    });

    let mut records = Vec::with_capacity(results.len());
    for r in results {
        records.push(r?);
    }
    Ok(EnsembleOutput {
        partial: records.iter().any(|r| r.truncated),
        total_jumps: records.iter().map(|r| r.jumps).sum(),
        total_phantoms: records.iter().map(|r| r.phantoms).sum(),
        cap_exceedances: 0,
        records,
    })
}

/// Independent exit-time runs from the origin.
pub fn exit_ensemble(
    field: &KappaField,
    sampler: &JumpKernelSampler,
    radius: f64,
    t_max: f64,
    count: usize,
    label: u64,
    workers: Workers,
) -> Result<Vec<ExitOutcome>, WalkError> {
    let walker = Walker::new(field, sampler)?;
    let seed = field.spec().master_seed;
    let origin = LatticePoint::zero(field.dimension());
    map_indexed(count, workers, |i| {
        let mut rng = labeled_stream(seed, Domain::Trajectory, label, i as u64);
        walker.exit_time(origin, radius, t_max, &mut rng)
    })
    .into_iter()
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{EnvironmentSpec, MeanField};
    use crate::kernel::KernelMode;
    use crate::rng::stream;

    fn unit_setup(r_max: f64) -> (KappaField, JumpKernelSampler) {
        let f = KappaField::new(EnvironmentSpec::unit(1, 1.0)).unwrap();
        let s = JumpKernelSampler::build(1, 1.0, KernelMode::Truncated { r_max }, 2.0).unwrap();
        (f, s)
    }

    #[test]
    fn zero_environment_never_moves() {
        let spec = EnvironmentSpec {
            mean_field: MeanField::Constant { value: 0.0 },
            ..EnvironmentSpec::unit(2, 1.0)
        };
        let f = KappaField::new(spec).unwrap();
        let s = JumpKernelSampler::with_defaults(2, 1.0, KernelMode::ExactInfinite).unwrap();
        let mut rng = stream(0, Domain::Trajectory, 0);
        let x0 = LatticePoint::new(&[3, -1]);
        let tr = simulate(&f, &s, x0, 100.0, &mut rng).unwrap();
        assert_eq!(tr.jump_count, 0);
        assert_eq!(tr.position_at(50.0), x0);
        let sp = scale_path(&tr, 4, 1.0, &[0.5, 1.0]).unwrap();
        assert!(sp.samples.iter().all(|(_, p)| p == &vec![0.75, -0.25]));
        assert_eq!(
            exit_time(&f, &s, x0, 5.0, 10.0, &mut rng).unwrap(),
            ExitOutcome::Survived
        );
    }

    #[test]
    fn trajectory_invariants() {
        let f = KappaField::new(EnvironmentSpec::uniform(2, 0.8, 0.5, 1.5, 3)).unwrap();
        let s = JumpKernelSampler::with_defaults(2, 0.8, KernelMode::ExactInfinite).unwrap();
        let mut rng = stream(1, Domain::Trajectory, 0);
        let tr = simulate(&f, &s, LatticePoint::zero(2), 200.0, &mut rng).unwrap();
        assert!(tr.jump_count > 100);
        assert_eq!(tr.events.len() as u64, tr.jump_count);
        let mut prev_t = 0.0;
        let mut prev_x = tr.start;
        for e in &tr.events {
            assert!(e.time > prev_t && e.time <= tr.horizon);
            assert!(!(e.position - prev_x).is_zero());
            prev_t = e.time;
            prev_x = e.position;
        }
        // right-continuity at an event time
        let e = tr.events[10];
        assert_eq!(tr.position_at(e.time), e.position);
        assert_eq!(tr.position_at(e.time - 1e-12), tr.events[9].position);
    }

    #[test]
    fn event_count_is_poisson() {
        // jumps + phantoms over [0, T] is Poisson(Lambda T)
        let (f, s) = unit_setup(4.0);
        let w = Walker::new(&f, &s).unwrap();
        let t = 10.0;
        let runs = 20_000;
        let mut total = 0u64;
        for i in 0..runs {
            let mut rng = stream(9, Domain::Trajectory, i);
            let r = w.run(LatticePoint::zero(1), t, &mut rng, None, |_, _| ControlFlow::Continue(())).unwrap();
            total += r.jumps + r.phantoms;
        }
        let mean = total as f64 / runs as f64;
        let expect = w.rate() * t;
        let se = (expect / runs as f64).sqrt();
        assert!((mean - expect).abs() < 4.0 * se, "{mean} vs {expect}");
    }

    #[test]
    fn holding_time_of_nearest_neighbour_walk() {
        // kappa = 1, |z| <= 1: rate-2 simple walk, mean holding time 1/2
        let (f, s) = unit_setup(1.0);
        let mut rng = stream(4, Domain::Trajectory, 0);
        let tr = simulate(&f, &s, LatticePoint::zero(1), 60_000.0, &mut rng).unwrap();
        let n = tr.events.len();
        assert!(n > 100_000);
        let mean_hold = tr.events[n - 1].time / n as f64;
        let sigma = 0.5 / (n as f64).sqrt();
        assert!((mean_hold - 0.5).abs() < 3.0 * sigma, "{mean_hold}");
    }

    #[test]
    fn scaling_identity_and_errors() {
        let (f, s) = unit_setup(4.0);
        let mut rng = stream(2, Domain::Trajectory, 0);
        let tr = simulate(&f, &s, LatticePoint::zero(1), 10.0, &mut rng).unwrap();
        let times = [0.5, 2.0, 7.5];
        let sp = scale_path(&tr, 1, 1.3, &times).unwrap();
        for (t, p) in &sp.samples {
            assert_eq!(p[0], tr.position_at(*t).coords()[0] as f64);
        }
        let err = scale_path(&tr, 4, 1.0, &[3.0]).unwrap_err();
        assert_eq!(
            err,
            WalkError::HorizonTooShort {
                needed: 12.0,
                horizon: 10.0
            }
        );
        assert!((time_scale(2, 2.0) - 4.0 / 3f64.ln()).abs() < 1e-15);
        assert!((time_scale(2, 2.0) - 3.6410).abs() < 1e-4);
    }

    #[test]
    fn exit_below_unit_radius_is_first_jump() {
        let (f, s) = unit_setup(4.0);
        let w = Walker::new(&f, &s).unwrap();
        for i in 0..100 {
            let mut a = stream(6, Domain::Trajectory, i);
            let mut b = stream(6, Domain::Trajectory, i);
            let out = w.exit_time(LatticePoint::zero(1), 0.5, 100.0, &mut a).unwrap();
            let tr = w.simulate(LatticePoint::zero(1), 100.0, &mut b).unwrap();
            assert_eq!(out.tau(), Some(tr.events[0].time));
        }
    }

    #[test]
    fn ensemble_single_trajectory_matches_simulate() {
        let f = KappaField::new(EnvironmentSpec::uniform(2, 1.0, 0.5, 1.5, 12)).unwrap();
        let s = JumpKernelSampler::with_defaults(2, 1.0, KernelMode::ExactInfinite).unwrap();
        let cfg = EnsembleConfig {
            n: 8,
            sample_times: vec![0.25, 0.5, 1.0],
            trajectories: 1,
            label: 0,
            max_events: None,
        };
        let out = ensemble(&f, &s, &cfg, Workers::SEQUENTIAL).unwrap();
        let mut rng = labeled_stream(12, Domain::Trajectory, 0, 0);
        let tr = simulate(&f, &s, LatticePoint::zero(2), 8.0, &mut rng).unwrap();
        let sp = scale_path(&tr, 8, 1.0, &cfg.sample_times).unwrap();
        for (k, (_, p)) in sp.samples.iter().enumerate() {
            assert_eq!(&out.records[0].samples[k], p);
        }
        assert_eq!(out.records[0].jumps, tr.jump_count);
    }

    #[test]
    fn ensemble_is_worker_independent() {
        let f = KappaField::new(EnvironmentSpec::uniform(2, 1.0, 0.5, 1.5, 5)).unwrap();
        let s = JumpKernelSampler::with_defaults(2, 1.0, KernelMode::ExactInfinite).unwrap();
        let cfg = EnsembleConfig {
            n: 4,
            sample_times: vec![1.0],
            trajectories: 64,
            label: 1,
            max_events: None,
        };
        let a = ensemble(&f, &s, &cfg, Workers::SEQUENTIAL).unwrap();
        let b = ensemble(&f, &s, &cfg, Workers(Some(8))).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn event_cap_flags_partial() {
        let (f, s) = unit_setup(4.0);
        let cfg = EnsembleConfig {
            n: 16,
            sample_times: vec![1.0],
            trajectories: 4,
            label: 0,
            max_events: Some(3),
        };
        let out = ensemble(&f, &s, &cfg, Workers::SEQUENTIAL).unwrap();
        assert!(out.partial);
        assert!(out.records.iter().all(|r| r.truncated && r.jumps + r.phantoms <= 3));
    }

    #[test]
    fn mismatched_kernel_rejected() {
        let f = KappaField::new(EnvironmentSpec::unit(2, 1.0)).unwrap();
        let s = JumpKernelSampler::with_defaults(2, 1.5, KernelMode::ExactInfinite).unwrap();
        assert!(matches!(Walker::new(&f, &s), Err(WalkError::AlphaMismatch { .. })));
    }
}
