//! Reference limit laws and statistical comparison of scaled ensembles
//! against them.

use crate::env::MeanField;
use crate::genlab::SymMatrix;
use crate::par::{map_indexed, Workers};
use crate::quad::{GaussLegendre, SphereRule};
use crate::rng::{stream, Domain};
use crate::stats::{ks_critical_95, ks_standard_normal, mean, median, quantile, wilson_interval};
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LimitError {
    #[error("quadrature covers d = 1, 2, 3 only, got {0}")]
    Dimension(usize),
    #[error("stable reference needs alpha in (0, 2), got {0}")]
    Alpha(f64),
    #[error("reference laws are available only for x-independent kernels")]
    XDependentKernel,
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("sample of dimension {got}, model has dimension {expected}")]
    SampleDimension { expected: usize, got: usize },
    #[error("invalid input: {0}")]
    Invalid(String),
}

pub const MIN_CF_SAMPLES: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AijResult {
    pub matrix: SymMatrix,
    pub error_estimate: f64,
    pub depth: usize,
    pub flagged: bool,
}

/// `a_ij = int_S K(theta) theta_i theta_j d theta` by sphere quadrature at
/// `depth` and `2 depth`.
pub fn aij_quadrature(kernel: &MeanField, dim: usize, depth: usize, tolerance: f64) -> Result<AijResult, LimitError> {
    if !(1..=3).contains(&dim) {
        return Err(LimitError::Dimension(dim));
    }
    if !kernel.is_x_independent() {
        return Err(LimitError::XDependentKernel);
    }
    let at = |m: usize| {
        let rule = SphereRule::new(dim, m);
        let mut a = vec![0.0; dim * dim];
        for (t, w) in rule.iter() {
            let k = kernel.angular(t);
            for i in 0..dim {
                for j in i..dim {
                    a[i * dim + j] += w * k * t[i] * t[j];
                }
            }
        }
        for i in 0..dim {
            for j in 0..i {
                a[i * dim + j] = a[j * dim + i];
            }
        }
        a
    };
    let coarse = at(depth);
    let fine = at(2 * depth);
    let error_estimate = coarse.iter().zip(&fine).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Ok(AijResult {
        matrix: SymMatrix { dim, entries: fine },
        error_estimate,
        depth: 2 * depth,
        flagged: error_estimate > tolerance,
    })
}

/// `int_0^inf (1 - cos r) r^{-1-alpha} dr = pi / (2 Gamma(1+alpha) sin(pi alpha / 2))`.
pub fn radial_cosine_constant(alpha: f64) -> f64 {
    PI / (2.0 * gamma(1.0 + alpha) * (0.5 * PI * alpha).sin())
}

/// Stable-like Lévy law with an x-independent angular kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StableLaw {
    pub dim: usize,
    pub alpha: f64,
    pub kernel: MeanField,
    /// Gauss-Legendre sub-panels for the angular integral.
    pub depth: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LimitModel {
    Stable(StableLaw),
    Brownian { covariance: SymMatrix },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SymbolValue {
    pub value: f64,
    pub error_estimate: f64,
}

const ANGULAR_GL: usize = 24;
const GRADING: f64 = 3.0;

impl StableLaw {
    pub fn new(dim: usize, alpha: f64, kernel: MeanField) -> Result<Self, LimitError> {
        if !(1..=3).contains(&dim) {
            return Err(LimitError::Dimension(dim));
        }
        if !(alpha > 0.0 && alpha < 2.0) {
            return Err(LimitError::Alpha(alpha));
        }
        if !kernel.is_x_independent() {
            return Err(LimitError::XDependentKernel);
        }
        Ok(Self {
            dim,
            alpha,
            kernel,
            depth: 4,
        })
    }

    /// `int_S K(theta) |<u, theta>|^alpha d theta` for a unit vector `u`.
    fn angular_moment(&self, u: &[f64], panels: usize) -> f64 {
        let a = self.alpha;
        let k = &self.kernel;
        match self.dim {
            1 => k.angular(&[1.0]) + k.angular(&[-1.0]),
            2 => {
                let gl = GaussLegendre::new(ANGULAR_GL);
                let phi0 = u[1].atan2(u[0]);
                let mut total = 0.0;
                // four quarter arcs, each from a zero of <u, theta> to an extremum;
                // w = (pi/2) t^p clusters nodes at the zero
                for zero in [phi0 + 0.5 * PI, phi0 - 0.5 * PI] {
                    for dir in [1.0, -1.0] {
                        total += gl.composite(0.0, 1.0, panels, |t| {
                            let w = 0.5 * PI * t.powf(GRADING);
                            let dw = 0.5 * PI * GRADING * t.powf(GRADING - 1.0);
                            let phi = zero + dir * w;
                            k.angular(&[phi.cos(), phi.sin()]) * w.sin().powf(a) * dw
                        });
                    }
                }
                total
            }
            _ => {
                let gl = GaussLegendre::new(ANGULAR_GL);
                let (e1, e2) = orthonormal_frame(u);
                let m = 8 * panels;
                let h = 2.0 * PI / m as f64;
                let mut total = 0.0;
                for sign in [1.0, -1.0] {
                    total += gl.composite(0.0, 1.0, panels, |t| {
                        let c = t.powf(GRADING);
                        let dc = GRADING * t.powf(GRADING - 1.0);
                        let s = (1.0 - c * c).max(0.0).sqrt();
                        let mut ring = 0.0;
                        for j in 0..m {
                            let phi = (j as f64 + 0.5) * h;
                            let (sp, cp) = phi.sin_cos();
                            let th = [
                                sign * c * u[0] + s * (cp * e1[0] + sp * e2[0]),
                                sign * c * u[1] + s * (cp * e1[1] + sp * e2[1]),
                                sign * c * u[2] + s * (cp * e1[2] + sp * e2[2]),
                            ];
                            ring += k.angular(&th);
                        }
                        ring * h * c.powf(a) * dc
                    });
                }
                total
            }
        }
    }

    /// `psi(xi) = -C_alpha |xi|^alpha int_S K(theta) |<xi/|xi|, theta>|^alpha d theta`.
    pub fn symbol(&self, xi: &[f64]) -> SymbolValue {
        let norm = xi.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return SymbolValue {
                value: 0.0,
                error_estimate: 0.0,
            };
        }
        let u: Vec<f64> = xi.iter().map(|v| v / norm).collect();
        let scale = -radial_cosine_constant(self.alpha) * norm.powf(self.alpha);
        let coarse = self.angular_moment(&u, self.depth);
        let fine = self.angular_moment(&u, 2 * self.depth);
        SymbolValue {
            value: scale * fine,
            error_estimate: (scale * (fine - coarse)).abs(),
        }
    }
}

fn orthonormal_frame(u: &[f64]) -> ([f64; 3], [f64; 3]) {
    let pick = if u[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let dot = pick[0] * u[0] + pick[1] * u[1] + pick[2] * u[2];
    let mut e1 = [pick[0] - dot * u[0], pick[1] - dot * u[1], pick[2] - dot * u[2]];
    let n1 = (e1[0] * e1[0] + e1[1] * e1[1] + e1[2] * e1[2]).sqrt();
    for v in &mut e1 {
        *v /= n1;
    }
    let e2 = [
        u[1] * e1[2] - u[2] * e1[1],
        u[2] * e1[0] - u[0] * e1[2],
        u[0] * e1[1] - u[1] * e1[0],
    ];
    (e1, e2)
}

impl LimitModel {
    pub fn dim(&self) -> usize {
        match self {
            LimitModel::Stable(s) => s.dim,
            LimitModel::Brownian { covariance } => covariance.dim,
        }
    }

    /// Exponent `psi(xi)` with `E exp(i <xi, Y_t>) = exp(t psi(xi))`.
    pub fn symbol(&self, xi: &[f64]) -> SymbolValue {
        match self {
            LimitModel::Stable(s) => s.symbol(xi),
            LimitModel::Brownian { covariance } => SymbolValue {
                value: -0.5 * covariance.quadratic_form(xi),
                error_estimate: 0.0,
            },
        }
    }

    pub fn cache(&self, grid: &[Vec<f64>]) -> SymbolCache {
        SymbolCache {
            grid: grid.to_vec(),
            values: grid.iter().map(|xi| self.symbol(xi)).collect(),
        }
    }
}

/// Symbol values precomputed on a frequency grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SymbolCache {
    pub grid: Vec<Vec<f64>>,
    pub values: Vec<SymbolValue>,
}

/// `12`-point grid: radii `{0.25, 0.5, 1}` in four directions (d >= 2), or
/// twelve radii (d = 1).
pub fn default_xi_grid(dim: usize) -> Vec<Vec<f64>> {
    if dim == 1 {
        return (1..=12).map(|k| vec![0.125 * k as f64]).collect();
    }
    let mut out = Vec::new();
    for r in [0.25, 0.5, 1.0] {
        for k in 0..4 {
            let phi = PI * k as f64 / 4.0;
            let mut xi = vec![0.0; dim];
            xi[0] = r * phi.cos();
            xi[1] = r * phi.sin();
            out.push(xi);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CfRow {
    pub xi: Vec<f64>,
    pub empirical_re: f64,
    pub empirical_im: f64,
    pub model: f64,
    pub deviation: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CfReport {
    pub rows: Vec<CfRow>,
    pub max_deviation: f64,
    pub samples: usize,
    pub t: f64,
    pub bootstrap: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            replicates: 200,
            seed: 0,
        }
    }
}

/// Per-frequency `|empirical CF - exp(t psi)|` with percentile bootstrap CIs.
pub fn compare_cf(
    samples: &[Vec<f64>],
    cache: &SymbolCache,
    t: f64,
    boot: BootstrapConfig,
    workers: Workers,
) -> Result<CfReport, LimitError> {
    if samples.len() < MIN_CF_SAMPLES {
        return Err(LimitError::TooFewSamples {
            needed: MIN_CF_SAMPLES,
            got: samples.len(),
        });
    }
    let dim = cache.grid.first().map_or(0, |x| x.len());
    if let Some(bad) = samples.iter().find(|s| s.len() != dim) {
        return Err(LimitError::SampleDimension {
            expected: dim,
            got: bad.len(),
        });
    }
    let n = samples.len();
    let g = cache.grid.len();
    // phases[i * g + k] = (cos, sin) of <xi_k, X_i>
    let phases: Vec<(f64, f64)> = samples
        .iter()
        .flat_map(|x| {
            cache.grid.iter().map(move |xi| {
                let p: f64 = xi.iter().zip(x).map(|(a, b)| a * b).sum();
                let (s, c) = p.sin_cos();
                (c, s)
            })
        })
        .collect();
    let model: Vec<f64> = cache.values.iter().map(|v| (t * v.value).exp()).collect();
    let deviation = |idx: &mut dyn Iterator<Item = usize>| {
        let mut re = vec![0.0; g];
        let mut im = vec![0.0; g];
        let mut count = 0usize;
        for i in idx {
            count += 1;
            for k in 0..g {
                re[k] += phases[i * g + k].0;
                im[k] += phases[i * g + k].1;
            }
        }
        let c = count as f64;
        (0..g)
            .map(|k| {
                let r = re[k] / c;
                let m = im[k] / c;
                ((r - model[k]).powi(2) + m * m).sqrt()
            })
            .collect::<Vec<f64>>()
    };
    let base = deviation(&mut (0..n));
    let reps = map_indexed(boot.replicates, workers, |b| {
        let mut rng = stream(boot.seed, Domain::Bootstrap, b as u64);
        let picks: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        deviation(&mut picks.into_iter())
    });
    let mut rows = Vec::with_capacity(g);
    for k in 0..g {
        let (re, im) = (0..n).fold((0.0, 0.0), |acc, i| (acc.0 + phases[i * g + k].0, acc.1 + phases[i * g + k].1));
        let col: Vec<f64> = reps.iter().map(|r| r[k]).collect();
        let (lo, hi) = if col.is_empty() {
            (base[k], base[k])
        } else {
            (quantile(&col, 0.025), quantile(&col, 0.975))
        };
        rows.push(CfRow {
            xi: cache.grid[k].clone(),
            empirical_re: re / n as f64,
            empirical_im: im / n as f64,
            model: model[k],
            deviation: base[k],
            ci_low: lo,
            ci_high: hi,
        });
    }
    Ok(CfReport {
        max_deviation: base.iter().copied().fold(0.0, f64::max),
        rows,
        samples: n,
        t,
        bootstrap: boot.replicates,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CovarianceReport {
    pub empirical: SymMatrix,
    /// `Cov / t`.
    pub per_time: SymMatrix,
    pub target: SymMatrix,
    /// `||Cov/t - A||_max / ||A||_max` (absolute when `A = 0`).
    pub relative_deviation: f64,
    pub jackknife_se: f64,
    /// Per-axis `Cov_ii / (t A_ii) - 1`.
    pub diagonal_relative: Vec<f64>,
    pub max_off_diagonal: f64,
    /// KS distance of each standardized marginal from N(0,1).
    pub ks: Vec<f64>,
    pub ks_critical: f64,
    pub singular: bool,
    pub samples: usize,
}

pub const MIN_COV_SAMPLES: usize = 1000;

fn covariance(samples: &[Vec<f64>], skip: Option<usize>) -> Vec<f64> {
    let d = samples[0].len();
    let n = samples.len() - usize::from(skip.is_some());
    let mut mu = vec![0.0; d];
    for (i, s) in samples.iter().enumerate() {
        if Some(i) == skip {
            continue;
        }
        for k in 0..d {
            mu[k] += s[k];
        }
    }
    for m in &mut mu {
        *m /= n as f64;
    }
    let mut c = vec![0.0; d * d];
    for (i, s) in samples.iter().enumerate() {
        if Some(i) == skip {
            continue;
        }
        for a in 0..d {
            for b in a..d {
                c[a * d + b] += (s[a] - mu[a]) * (s[b] - mu[b]);
            }
        }
    }
    for a in 0..d {
        for b in a..d {
            c[a * d + b] /= (n - 1) as f64;
            c[b * d + a] = c[a * d + b];
        }
    }
    c
}

fn relative_gap(c: &[f64], t: f64, a: &SymMatrix) -> f64 {
    let scale = a.max_abs();
    let gap = c.iter().zip(&a.entries).map(|(x, y)| (x / t - y).abs()).fold(0.0, f64::max);
    if scale > 0.0 {
        gap / scale
    } else {
        gap
    }
}

/// Empirical covariance of end positions against `t A`, with a grouped
/// jackknife standard error and marginal normality diagnostics.
pub fn compare_covariance(samples: &[Vec<f64>], a: &SymMatrix, t: f64) -> Result<CovarianceReport, LimitError> {
    if samples.len() < MIN_COV_SAMPLES {
        return Err(LimitError::TooFewSamples {
            needed: MIN_COV_SAMPLES,
            got: samples.len(),
        });
    }
    if !(t > 0.0) {
        return Err(LimitError::Invalid("t must be positive".into()));
    }
    let d = a.dim;
    if let Some(bad) = samples.iter().find(|s| s.len() != d) {
        return Err(LimitError::SampleDimension {
            expected: d,
            got: bad.len(),
        });
    }
    let n = samples.len();
    let c = covariance(samples, None);
    let relative_deviation = relative_gap(&c, t, a);

    // delete-a-group jackknife over 50 contiguous groups
    let groups = 50usize.min(n);
    let size = n / groups;
    let mut pseudo = Vec::with_capacity(groups);
    for gi in 0..groups {
        let lo = gi * size;
        let hi = if gi + 1 == groups { n } else { lo + size };
        let rest: Vec<Vec<f64>> = samples[..lo].iter().chain(&samples[hi..]).cloned().collect();
        pseudo.push(relative_gap(&covariance(&rest, None), t, a));
    }
    let pm = mean(&pseudo);
    let jackknife_se =
        ((groups as f64 - 1.0) / groups as f64 * pseudo.iter().map(|p| (p - pm).powi(2)).sum::<f64>()).sqrt();

    let diagonal_relative = (0..d)
        .map(|i| {
            let target = a.get(i, i);
            if target > 0.0 {
                c[i * d + i] / (t * target) - 1.0
            } else {
                f64::NAN
            }
        })
        .collect();
    let mut max_off_diagonal = 0.0f64;
    for i in 0..d {
        for j in 0..d {
            if i != j {
                max_off_diagonal = max_off_diagonal.max((c[i * d + j] / t).abs());
            }
        }
    }
    let ks = (0..d)
        .map(|k| {
            let col: Vec<f64> = samples.iter().map(|s| s[k]).collect();
            let m = mean(&col);
            let sd = c[k * d + k].sqrt();
            if sd > 0.0 {
                let z: Vec<f64> = col.iter().map(|v| (v - m) / sd).collect();
                ks_standard_normal(&z)
            } else {
                f64::NAN
            }
        })
        .collect();
    let empirical = SymMatrix { dim: d, entries: c };
    let scale = empirical.max_abs().max(a.max_abs() * t);
    let singular = a.min_eigenvalue() > 0.0 && empirical.min_eigenvalue() <= 1e-12 * scale.max(1.0);
    let per_time = SymMatrix {
        dim: d,
        entries: empirical.entries.iter().map(|v| v / t).collect(),
    };
    Ok(CovarianceReport {
        empirical,
        per_time,
        target: a.clone(),
        relative_deviation,
        jackknife_se,
        diagonal_relative,
        max_off_diagonal,
        ks,
        ks_critical: ks_critical_95(n),
        singular,
        samples: n,
    })
}

/// Exit times from one ball radius; `None` marks survival past `t_max`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExitSamples {
    pub radius: f64,
    pub t_max: f64,
    pub taus: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExitCell {
    pub radius: f64,
    pub t: f64,
    pub exits: u64,
    pub trials: u64,
    pub probability: f64,
    pub wilson_low: f64,
    pub wilson_high: f64,
    /// `P * r^alpha / t`.
    pub implied_c: f64,
    pub excluded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExitTailReport {
    pub cells: Vec<ExitCell>,
    /// Slope of `log P` against `log(t / r^alpha)`.
    pub slope: f64,
    pub c_hat: f64,
    pub bound_consistent: bool,
    /// `max / min` of implied `c` at the largest time fraction.
    pub c_band: f64,
    /// Per-radius exit-time quantile at `probe_probability`.
    pub quantiles: Vec<(f64, f64)>,
    /// Slope of `log quantile` against `log r`.
    pub r_exponent: f64,
    pub probe_probability: f64,
    pub notes: Vec<String>,
}

/// Fits the small-time exit bound `P(tau <= t) <= c t / r^alpha` on a grid of
/// times `t = frac * r^alpha`.
pub fn exit_tail_report(
    samples: &[ExitSamples],
    alpha: f64,
    time_fractions: &[f64],
    probe_probability: f64,
) -> Result<ExitTailReport, LimitError> {
    if samples.is_empty() || time_fractions.is_empty() {
        return Err(LimitError::Invalid("need radii and time fractions".into()));
    }
    let mut cells = Vec::new();
    let mut notes = Vec::new();
    for s in samples {
        let trials = s.taus.len() as u64;
        let scale = s.radius.powf(alpha);
        for &frac in time_fractions {
            let t = frac * scale;
            if t > s.t_max * (1.0 + 1e-12) {
                return Err(LimitError::Invalid(format!("t = {t} exceeds the simulated horizon {}", s.t_max)));
            }
            let exits = s.taus.iter().filter(|x| matches!(x, Some(tau) if *tau <= t)).count() as u64;
            let (lo, hi) = wilson_interval(exits, trials, 1.96);
            let p = exits as f64 / trials.max(1) as f64;
            let excluded = exits == 0;
            if excluded {
                notes.push(format!("r={} t={t}: no exits, cell excluded", s.radius));
            }
            cells.push(ExitCell {
                radius: s.radius,
                t,
                exits,
                trials,
                probability: p,
                wilson_low: lo,
                wilson_high: hi,
                implied_c: p * scale / t,
                excluded,
            });
        }
    }
    let used: Vec<&ExitCell> = cells.iter().filter(|c| !c.excluded).collect();
    let pts: Vec<(f64, f64)> = used
        .iter()
        .map(|c| ((c.t / c.radius.powf(alpha)).ln(), c.probability.ln()))
        .collect();
    let distinct_x = pts.iter().any(|p| (p.0 - pts[0].0).abs() > 1e-12);
    let slope = if pts.len() >= 2 && distinct_x {
        crate::stats::ols_slope(&pts)
    } else {
        f64::NAN
    };
    let (c_hat, bound_consistent) = if used.is_empty() {
        (0.0, true)
    } else {
        let cs: Vec<f64> = used.iter().map(|c| c.implied_c).collect();
        let c_hat = 2.0 * median(&cs);
        let ok = used.iter().all(|c| c.wilson_high * c.radius.powf(alpha) / c.t <= c_hat);
        (c_hat, ok)
    };
    let last = time_fractions.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let band: Vec<f64> = used
        .iter()
        .filter(|c| (c.t / c.radius.powf(alpha) - last).abs() < 1e-9 * last)
        .map(|c| c.implied_c)
        .collect();
    let c_band = if band.is_empty() {
        1.0
    } else {
        band.iter().copied().fold(0.0, f64::max) / band.iter().copied().fold(f64::INFINITY, f64::min)
    };

    let mut quantiles = Vec::new();
    for s in samples {
        let mut taus: Vec<f64> = s.taus.iter().map(|x| x.unwrap_or(f64::INFINITY)).collect();
        taus.sort_by(|a, b| a.total_cmp(b));
        let idx = ((probe_probability * taus.len() as f64).ceil() as usize).saturating_sub(1);
        if let Some(&q) = taus.get(idx) {
            if q.is_finite() && q > 0.0 {
                quantiles.push((s.radius, q));
            } else {
                notes.push(format!("r={}: fewer than {probe_probability} exits", s.radius));
            }
        }
    }
    let qpts: Vec<(f64, f64)> = quantiles.iter().map(|(r, q)| (r.ln(), q.ln())).collect();
    let r_exponent = if qpts.len() >= 2 {
        crate::stats::ols_slope(&qpts)
    } else {
        f64::NAN
    };
    Ok(ExitTailReport {
        cells,
        slope,
        c_hat,
        bound_consistent,
        c_band,
        quantiles,
        r_exponent,
        probe_probability,
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Domain};
    use rand_distr::{Distribution, StandardNormal};

    fn unit() -> MeanField {
        MeanField::Constant { value: 1.0 }
    }

    #[test]
    fn aij_closed_forms() {
        let a2 = aij_quadrature(&unit(), 2, 8, 1e-10).unwrap();
        assert!((a2.matrix.get(0, 0) - PI).abs() < 1e-8 && (a2.matrix.get(1, 1) - PI).abs() < 1e-8);
        assert!(a2.matrix.get(0, 1).abs() < 1e-8);
        let a3 = aij_quadrature(&unit(), 3, 8, 1e-10).unwrap();
        for i in 0..3 {
            assert!((a3.matrix.get(i, i) - 4.0 * PI / 3.0).abs() < 1e-8);
        }
        let aniso = MeanField::AxisAnisotropic {
            base: 1.0,
            amplitude: 1.0,
            axis: 0,
        };
        let a = aij_quadrature(&aniso, 2, 8, 1e-10).unwrap();
        assert!((a.matrix.get(0, 0) - 7.0 * PI / 4.0).abs() < 1e-8);
        assert!((a.matrix.get(1, 1) - 5.0 * PI / 4.0).abs() < 1e-8);
        assert!(a.matrix.get(0, 1).abs() < 1e-8);
        assert!(a.matrix.min_eigenvalue() > 0.0);
        let a1 = aij_quadrature(&unit(), 1, 1, 1e-10).unwrap();
        assert_eq!(a1.matrix.entries, vec![2.0]);
    }

    #[test]
    fn radial_constant_against_numeric_integral() {
        // int_0^inf (1-cos r) r^{-1-a} dr: graded midpoint rule on [0, 40 pi]
        // and the analytic tail of the non-oscillating part
        for alpha in [0.7, 1.0, 1.5] {
            let m = 2_000_000;
            let upper = 40.0 * PI;
            let mut acc = 0.0;
            for i in 0..m {
                let s = (i as f64 + 0.5) / m as f64;
                let r = upper * s * s;
                acc += (1.0 - r.cos()) * r.powf(-1.0 - alpha) * upper * 2.0 * s / m as f64;
            }
            // int_U^inf r^{-1-a} dr minus the cosine part, which is O(U^{-1-a})
            acc += upper.powf(-alpha) / alpha;
            let c = radial_cosine_constant(alpha);
            assert!((acc - c).abs() < 2e-3 * c, "alpha={alpha}: {acc} vs {c}");
        }
        assert!((radial_cosine_constant(1.0) - PI / 2.0).abs() < 1e-14);
    }

    #[test]
    fn cauchy_symbols() {
        let s1 = StableLaw::new(1, 1.0, unit()).unwrap();
        for xi in [0.3, 1.0, 2.5] {
            assert!((s1.symbol(&[xi]).value + PI * xi).abs() < 1e-12);
        }
        let s2 = StableLaw::new(2, 1.0, unit()).unwrap();
        for xi in [[0.3f64, 0.4], [1.0, 0.0], [-0.2, 0.9]] {
            let n = (xi[0] * xi[0] + xi[1] * xi[1]).sqrt();
            let v = s2.symbol(&xi);
            assert!((v.value + 2.0 * PI * n).abs() < 1e-8 * n, "{:?} {}", xi, v.value);
        }
        assert_eq!(s2.symbol(&[0.0, 0.0]).value, 0.0);
    }

    #[test]
    fn symbol_homogeneity_and_evenness() {
        let aniso = MeanField::AxisAnisotropic {
            base: 0.5,
            amplitude: 1.0,
            axis: 1,
        };
        for d in 2..=3 {
            for alpha in [0.7, 1.5] {
                let s = StableLaw::new(d, alpha, aniso.clone()).unwrap();
                for xi in default_xi_grid(d) {
                    let v = s.symbol(&xi).value;
                    let twice: Vec<f64> = xi.iter().map(|x| 2.0 * x).collect();
                    let neg: Vec<f64> = xi.iter().map(|x| -x).collect();
                    assert!(v < 0.0);
                    assert!((s.symbol(&twice).value - 2f64.powf(alpha) * v).abs() <= 1e-6 * v.abs());
                    assert!((s.symbol(&neg).value - v).abs() <= 1e-9 * v.abs());
                }
            }
        }
    }

    #[test]
    fn symbol_d3_unit_kernel() {
        // int_{S^2} |<u,theta>|^a = 4 pi / (a + 1)
        for alpha in [0.5, 1.0, 1.7] {
            let s = StableLaw::new(3, alpha, unit()).unwrap();
            let v = s.symbol(&[0.0, 0.6, 0.8]);
            let exact = -radial_cosine_constant(alpha) * 4.0 * PI / (alpha + 1.0);
            assert!((v.value - exact).abs() < 1e-7 * exact.abs(), "{} vs {exact}", v.value);
        }
    }

    #[test]
    fn cf_of_origin_samples() {
        let model = LimitModel::Stable(StableLaw::new(2, 1.0, unit()).unwrap());
        let cache = model.cache(&default_xi_grid(2));
        let samples = vec![vec![0.0, 0.0]; 200];
        let rep = compare_cf(&samples, &cache, 0.0, BootstrapConfig::default(), Workers::SEQUENTIAL).unwrap();
        assert_eq!(rep.max_deviation, 0.0);
        let rep = compare_cf(&samples, &cache, 0.1, BootstrapConfig::default(), Workers::SEQUENTIAL).unwrap();
        let expect = 1.0 - (-0.1 * 2.0 * PI * 1.0f64).exp();
        assert!((rep.max_deviation - expect).abs() < 1e-8);
        let few = vec![vec![0.0, 0.0]; 50];
        assert!(matches!(
            compare_cf(&few, &cache, 1.0, BootstrapConfig::default(), Workers::SEQUENTIAL),
            Err(LimitError::TooFewSamples { .. })
        ));
    }

    #[test]
    fn cf_deviation_at_zero_frequency_is_zero() {
        let model = LimitModel::Brownian {
            covariance: SymMatrix::scaled_identity(2, 1.0),
        };
        let cache = model.cache(&[vec![0.0, 0.0], vec![0.5, 0.0]]);
        let mut rng = stream(1, Domain::Bootstrap, 999);
        let s: Vec<Vec<f64>> = (0..500)
            .map(|_| vec![StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)])
            .collect();
        let rep = compare_cf(&s, &cache, 1.0, BootstrapConfig::default(), Workers::SEQUENTIAL).unwrap();
        assert_eq!(rep.rows[0].deviation, 0.0);
        assert!(rep.rows[1].ci_low <= rep.rows[1].deviation && rep.rows[1].deviation <= rep.rows[1].ci_high);
    }

    #[test]
    fn covariance_examples() {
        let zeros = vec![vec![0.0, 0.0]; 2000];
        let against_zero = compare_covariance(&zeros, &SymMatrix::scaled_identity(2, 0.0), 1.0).unwrap();
        assert_eq!(against_zero.relative_deviation, 0.0);
        let against_pi = compare_covariance(&zeros, &SymMatrix::scaled_identity(2, PI), 1.0).unwrap();
        assert!(against_pi.relative_deviation > 0.99);
        assert!(against_pi.singular);

        let mut rng = stream(5, Domain::Bootstrap, 0);
        let s: Vec<Vec<f64>> = (0..20_000)
            .map(|_| {
                let a: f64 = StandardNormal.sample(&mut rng);
                let b: f64 = StandardNormal.sample(&mut rng);
                vec![2.0 * a, b]
            })
            .collect();
        let target = SymMatrix::new(2, vec![4.0, 0.0, 0.0, 1.0]).unwrap();
        let rep = compare_covariance(&s, &target, 1.0).unwrap();
        assert!(rep.relative_deviation < 4.0 * rep.jackknife_se + 0.01, "{rep:?}");
        assert!(rep.ks.iter().all(|k| *k < rep.ks_critical));
    }

    #[test]
    fn exit_report_trivial_and_linear() {
        let silent = vec![ExitSamples {
            radius: 8.0,
            t_max: 1.0,
            taus: vec![None; 100],
        }];
        let rep = exit_tail_report(&silent, 1.0, &[0.1], 0.1).unwrap();
        assert!(rep.bound_consistent);
        assert_eq!(rep.c_hat, 0.0);

        // tau ~ Exp(rate r^{-alpha}) has P(tau <= t) ~ t / r^alpha for small t
        let alpha = 1.3;
        let mut rng = stream(8, Domain::Bootstrap, 1);
        let samples: Vec<ExitSamples> = [8.0, 16.0, 32.0, 64.0]
            .iter()
            .map(|&r: &f64| {
                let rate = r.powf(-alpha);
                let taus = (0..20_000)
                    .map(|_| {
                        let u: f64 = rng.random();
                        let tau = -(1.0 - u).ln() / rate;
                        (tau <= r.powf(alpha)).then_some(tau)
                    })
                    .collect();
                ExitSamples {
                    radius: r,
                    t_max: r.powf(alpha),
                    taus,
                }
            })
            .collect();
        let rep = exit_tail_report(&samples, alpha, &[0.025, 0.05, 0.1], 0.05).unwrap();
        assert!(rep.bound_consistent);
        assert!(rep.c_band < 1.2);
        assert!((rep.slope - 1.0).abs() < 0.1);
        assert!((rep.r_exponent - alpha).abs() < 0.05);
    }
}
