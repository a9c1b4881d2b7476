//! Numerical checks of the environment conditions: plateau sums, moment
//! thresholds, the second-moment matrix limit and driftlessness.

use crate::env::KappaField;
use crate::genlab::SymMatrix;
use crate::kernel::sphere_area;
use crate::lattice::{for_each_in_ball, LatticePoint};
use crate::par::{map_slice, Workers};
use crate::quad::SphereRule;
use crate::rng::{stream, Domain};
use crate::stats::{median, ols_slope};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AuditError {
    #[error("B1* applies to alpha in (0,1) only, got {0}")]
    FirstMomentAlpha(f64),
    #[error("C1 applies to alpha = 2 only, got {0}")]
    LogAlpha(f64),
    #[error("the plateau sums need alpha in (0, 2), got {0}")]
    PlateauAlpha(f64),
    #[error("the matrix limit applies to alpha = 2 only, got {0}")]
    MatrixAlpha(f64),
    #[error("alpha must lie in (0, 2], got {0}")]
    Alpha(f64),
    #[error("dimension must be at least 1")]
    Dimension,
    #[error("invalid audit parameters: {0}")]
    Parameters(String),
}

/// Which pair of sums is audited.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Assumption {
    /// Second-moment sum against `r^{2-alpha}`, tail against `r^{-alpha}`.
    B1,
    /// First-moment sum against `r^{1-alpha}`, tail against `r^{-alpha}`.
    B1Star,
    /// `|z|^{-d}` sum against `log(1+r)`, `|z|^{-(d+2)}` tail against `r^{-2}`.
    C1,
}

impl Assumption {
    pub fn id(self) -> &'static str {
        match self {
            Assumption::B1 => "B1",
            Assumption::B1Star => "B1*",
            Assumption::C1 => "C1",
        }
    }

    /// Exponent `e` of the inner weight `|z|^{-e}`.
    fn inner_exponent(self, d: f64, alpha: f64) -> f64 {
        match self {
            Assumption::B1 => d + alpha - 2.0,
            Assumption::B1Star => d + alpha - 1.0,
            Assumption::C1 => d,
        }
    }

    fn inner_target(self, alpha: f64, r: f64) -> f64 {
        match self {
            Assumption::B1 => r.powf(2.0 - alpha),
            Assumption::B1Star => r.powf(1.0 - alpha),
            Assumption::C1 => r.ln_1p(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditParams {
    /// Outer scale `R`; sites range over `B(0, 2R)`.
    pub outer_radius: f64,
    pub theta: f64,
    pub r_grid: Vec<f64>,
    /// Sites checked when the ball is too large to enumerate.
    pub site_samples: usize,
    /// Tail sums are enumerated up to `tail_factor * max(r_grid)`.
    pub tail_factor: f64,
    /// Plateau pass rule: `max / median` of the per-r constants.
    pub plateau_factor: f64,
}

impl AuditParams {
    pub fn new(outer_radius: f64, r_grid: Vec<f64>) -> Self {
        Self {
            outer_radius,
            theta: 0.5,
            r_grid,
            site_samples: 32,
            tail_factor: 4.0,
            plateau_factor: 2.0,
        }
    }
}

/// Above this many sites the ball is subsampled.
pub const FULL_ENUMERATION_LIMIT: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlateauRow {
    pub r: f64,
    /// `sup_x` of the inner sum.
    pub inner_sup: f64,
    /// `sup_x` of the tail sum.
    pub tail_sup: f64,
    pub inner_constant: f64,
    pub tail_constant: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub assumption: String,
    pub dim: usize,
    pub alpha: f64,
    pub outer_radius: f64,
    pub theta: f64,
    pub rows: Vec<PlateauRow>,
    pub sites_checked: usize,
    pub sites_total: usize,
    pub complete: bool,
    /// Max over the grid of both constants.
    pub fitted_c1: f64,
    pub inner_spread: f64,
    pub tail_spread: f64,
    /// Log-log slope of `inner_sup` against `r`.
    pub inner_exponent: f64,
    pub tail_cutoff: f64,
    /// Largest share of a tail sum supplied by the mean-field remainder.
    pub remainder_share: f64,
    /// Largest relative error of the remainder, measured on the last enumerated shell.
    pub remainder_error: f64,
    pub pass: bool,
    pub flags: Vec<String>,
    pub seed: u64,
}

/// Sites of `B(0, 2R)`: all of them when small, else the origin plus a keyed
/// uniform sample.
pub fn audit_sites(dim: usize, outer_radius: f64, samples: usize, seed: u64) -> (Vec<LatticePoint>, usize, bool) {
    let radius = 2.0 * outer_radius;
    let unit_ball = sphere_area(dim) / dim as f64;
    let approx_total = unit_ball * radius.powi(dim as i32);
    if approx_total <= FULL_ENUMERATION_LIMIT as f64 {
        let mut sites = vec![LatticePoint::zero(dim)];
        for_each_in_ball(dim, radius, |z| sites.push(*z));
        let n = sites.len();
        return (sites, n, true);
    }
    let mut rng = stream(seed, Domain::SiteSample, dim as u64);
    let mut sites = vec![LatticePoint::zero(dim)];
    let r = radius.floor() as i64;
    while sites.len() < samples.max(1) {
        let c: Vec<i64> = (0..dim).map(|_| rng.random_range(-r..=r)).collect();
        let p = LatticePoint::new(&c);
        if p.norm() <= radius {
            sites.push(p);
        }
    }
    (sites, approx_total.round() as usize, false)
}

/// Per-site sums for every grid radius.
struct SiteSums {
    inner: Vec<f64>,
    tail: Vec<f64>,
    remainder_share: f64,
    remainder_error: f64,
}

fn site_sums(
    field: &KappaField,
    x: &LatticePoint,
    kind: Assumption,
    radii: &[f64],
    tail_cutoff: f64,
    tail_alpha: f64,
) -> SiteSums {
    let d = field.dimension();
    let df = d as f64;
    let inner_exp = kind.inner_exponent(df, field.alpha());
    let tail_exp = df + tail_alpha;
    let k = radii.len();
    let sq: Vec<f64> = radii.iter().map(|r| r * r).collect();
    let mut inner_bins = vec![0.0; k + 1];
    let mut tail_bins = vec![0.0; k + 1];
    let half = 0.5 * tail_cutoff;
    let half_sq = half * half;
    let mut last_shell = 0.0;
    let mut count_inner_half = 1usize;
    let mut count_all = 1usize;
    for_each_in_ball(d, tail_cutoff, |z| {
        count_all += 1;
        let q = z.norm_sq_f64();
        let kappa = field.kappa(x, z);
        let b = sq.partition_point(|&s| s < q);
        if b < k {
            inner_bins[b] += kappa * q.powf(-0.5 * inner_exp);
        }
        let t = kappa * q.powf(-0.5 * tail_exp);
        tail_bins[b] += t;
        if q > half_sq {
            last_shell += t;
        } else {
            count_inner_half += 1;
        }
    });
    let remainder_at = |count: usize| {
        let rho = (count as f64 * df / sphere_area(d)).powf(1.0 / df);
        mean_on_sphere(field, x, rho) * sphere_area(d) * rho.powf(-tail_alpha) / tail_alpha
    };
    let remainder = remainder_at(count_all);
    let remainder_half = remainder_at(count_inner_half);
    // the remainder formula should reproduce the last enumerated shell
    let shell_error = (remainder_half - remainder - last_shell).abs();

    let mut inner = Vec::with_capacity(k);
    let mut acc = 0.0;
    for b in inner_bins.iter().take(k) {
        acc += b;
        inner.push(acc);
    }
    let mut tail = vec![0.0; k];
    let mut acc = remainder;
    for b in (0..k).rev() {
        acc += tail_bins[b + 1];
        tail[b] = acc;
    }
    let smallest = tail[k - 1];
    SiteSums {
        inner,
        tail,
        remainder_share: if smallest > 0.0 { remainder / smallest } else { 0.0 },
        remainder_error: if smallest > 0.0 {
            shell_error * (remainder / remainder_half.max(f64::MIN_POSITIVE)) / smallest
        } else {
            0.0
        },
    }
}

fn mean_on_sphere(field: &KappaField, x: &LatticePoint, rho: f64) -> f64 {
    let mf = &field.spec().mean_field;
    let floor = field.spec().mean_floor;
    let d = field.dimension();
    if mf.is_x_independent() && d <= 3 {
        let rule = SphereRule::new(d, 16);
        return rule.integrate(|t| mf.angular(t).max(floor)) / sphere_area(d);
    }
    if d > 3 {
        return mf.sup().max(floor);
    }
    let xf = x.to_f64();
    let rule = SphereRule::new(d, 16);
    rule.integrate(|t| {
        let z: Vec<f64> = t.iter().map(|v| v * rho).collect();
        mf.eval(&xf, &z).max(floor)
    }) / sphere_area(d)
}

fn plateau_audit(
    field: &KappaField,
    kind: Assumption,
    params: &AuditParams,
    workers: Workers,
) -> Result<AuditReport, AuditError> {
    let alpha = field.alpha();
    let d = field.dimension();
    if params.r_grid.is_empty() || params.r_grid.iter().any(|r| !(*r >= 1.0)) {
        return Err(AuditError::Parameters("r_grid must be nonempty with r >= 1".into()));
    }
    if !(params.outer_radius > 1.0) || !(params.theta > 0.0 && params.theta < 1.0) {
        return Err(AuditError::Parameters("need R > 1 and theta in (0,1)".into()));
    }
    let mut radii = params.r_grid.clone();
    radii.sort_by(|a, b| a.total_cmp(b));
    let mut flags = Vec::new();
    let lo = params.outer_radius.powf(params.theta);
    if radii[0] < lo - 1e-9 || *radii.last().unwrap() > params.outer_radius + 1e-9 {
        flags.push(format!(
            "r_grid leaves [R^theta, R] = [{lo:.3}, {}]",
            params.outer_radius
        ));
    }
    let tail_alpha = if kind == Assumption::C1 { 2.0 } else { alpha };
    let tail_cutoff = params.tail_factor * radii.last().unwrap();
    let seed = field.spec().master_seed;
    let (sites, total, complete) = audit_sites(d, params.outer_radius, params.site_samples, seed);
    if !complete {
        flags.push(format!("subsampled {} of ~{} sites", sites.len(), total));
    }

    let per_site = map_slice(&sites, workers, |x| site_sums(field, x, kind, &radii, tail_cutoff, tail_alpha));

    let k = radii.len();
    let mut rows = Vec::with_capacity(k);
    for (j, &r) in radii.iter().enumerate() {
        let inner_sup = per_site.iter().map(|s| s.inner[j]).fold(0.0, f64::max);
        let tail_sup = per_site.iter().map(|s| s.tail[j]).fold(0.0, f64::max);
        rows.push(PlateauRow {
            r,
            inner_sup,
            tail_sup,
            inner_constant: inner_sup / kind.inner_target(alpha, r),
            tail_constant: tail_sup * r.powf(tail_alpha),
        });
    }
    let spread = |v: Vec<f64>| {
        let m = median(&v);
        let mx = v.iter().copied().fold(0.0, f64::max);
        if m > 0.0 {
            mx / m
        } else if mx == 0.0 {
            1.0
        } else {
            f64::INFINITY
        }
    };
    let inner_spread = spread(rows.iter().map(|r| r.inner_constant).collect());
    let tail_spread = spread(rows.iter().map(|r| r.tail_constant).collect());
    let fitted_c1 = rows
        .iter()
        .flat_map(|r| [r.inner_constant, r.tail_constant])
        .fold(0.0, f64::max);
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.inner_sup > 0.0)
        .map(|r| (r.r.ln(), r.inner_sup.ln()))
        .collect();
    let inner_exponent = if pts.len() >= 2 { ols_slope(&pts) } else { f64::NAN };
    let remainder_share = per_site.iter().map(|s| s.remainder_share).fold(0.0, f64::max);
    let remainder_error = per_site.iter().map(|s| s.remainder_error).fold(0.0, f64::max);
    if remainder_error > 0.01 {
        flags.push(format!("tail remainder error {remainder_error:.2e} exceeds 1%"));
    }
    let pass = inner_spread <= params.plateau_factor && tail_spread <= params.plateau_factor;
    Ok(AuditReport {
        assumption: kind.id().into(),
        dim: d,
        alpha,
        outer_radius: params.outer_radius,
        theta: params.theta,
        rows,
        sites_checked: sites.len(),
        sites_total: total,
        complete,
        fitted_c1,
        inner_spread,
        tail_spread,
        inner_exponent,
        tail_cutoff,
        remainder_share,
        remainder_error,
        pass,
        flags,
        seed,
    })
}

#[allow(non_snake_case)]
pub fn audit_B1(field: &KappaField, params: &AuditParams, workers: Workers) -> Result<AuditReport, AuditError> {
    let a = field.alpha();
    if !(a > 0.0 && a < 2.0) {
        return Err(AuditError::PlateauAlpha(a));
    }
    plateau_audit(field, Assumption::B1, params, workers)
}

#[allow(non_snake_case)]
pub fn audit_B1star(field: &KappaField, params: &AuditParams, workers: Workers) -> Result<AuditReport, AuditError> {
    let a = field.alpha();
    if !(a > 0.0 && a < 1.0) {
        return Err(AuditError::FirstMomentAlpha(a));
    }
    plateau_audit(field, Assumption::B1Star, params, workers)
}

#[allow(non_snake_case)]
pub fn audit_C1(field: &KappaField, params: &AuditParams, workers: Workers) -> Result<AuditReport, AuditError> {
    let a = field.alpha();
    if a != 2.0 {
        return Err(AuditError::LogAlpha(a));
    }
    plateau_audit(field, Assumption::C1, params, workers)
}

/// `M_n(x)_{ij} = (1/log(1+n)) sum_{0<|z|<=n} z_i z_j E[kappa(y, z)] / |z|^{d+2}`
/// at the lattice site `y = n x`.
pub fn second_moment_matrix(field: &KappaField, site: &LatticePoint, n: u32) -> SymMatrix {
    let d = field.dimension();
    let mut m = vec![0.0; d * d];
    let half_exp = -0.5 * (d as f64 + 2.0);
    for_each_in_ball(d, n as f64, |z| {
        let w = field.mean(site, z) * z.norm_sq_f64().powf(half_exp);
        let c = z.coords();
        for i in 0..d {
            for j in i..d {
                m[i * d + j] += c[i] as f64 * c[j] as f64 * w;
            }
        }
    });
    let norm = (n as f64).ln_1p();
    for i in 0..d {
        for j in i..d {
            m[i * d + j] /= norm;
            m[j * d + i] = m[i * d + j];
        }
    }
    SymMatrix { dim: d, entries: m }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatrixRow {
    pub n: u32,
    pub probe: Vec<f64>,
    pub matrix: SymMatrix,
    pub deviation: f64,
    pub min_eigenvalue: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatrixLimitReport {
    pub target: SymMatrix,
    pub rows: Vec<MatrixRow>,
    /// `sup_x ||M_n(x) - A||_max` per `n`.
    pub deviations: Vec<(u32, f64)>,
    pub decreasing: bool,
    pub eigen_floor_ok: bool,
    pub pass: bool,
}

/// Probes `x = y / n` with `|x| <= R`: the origin and `R` along each axis.
pub fn matrix_probes(dim: usize, outer_radius: f64) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; dim]];
    for axis in 0..dim {
        let mut p = vec![0.0; dim];
        p[axis] = outer_radius;
        out.push(p);
    }
    out
}

pub fn audit_matrix_limit(
    field: &KappaField,
    n_grid: &[u32],
    probes: &[Vec<f64>],
    target: &SymMatrix,
    workers: Workers,
) -> Result<MatrixLimitReport, AuditError> {
    if field.alpha() != 2.0 {
        return Err(AuditError::MatrixAlpha(field.alpha()));
    }
    let x_free = field.spec().mean_field.is_x_independent();
    let mut rows = Vec::new();
    let mut deviations = Vec::new();
    for &n in n_grid {
        // x-independent means give the same matrix at every probe
        let used: Vec<Vec<f64>> = if x_free { probes[..1].to_vec() } else { probes.to_vec() };
        let mats = map_slice(&used, workers, |x| {
            let y: Vec<f64> = x.iter().map(|v| v * n as f64).collect();
            second_moment_matrix(field, &LatticePoint::round_from(&y), n)
        });
        let mut worst = 0.0f64;
        for (x, m) in used.iter().zip(mats) {
            let dev = m
                .entries
                .iter()
                .zip(&target.entries)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            worst = worst.max(dev);
            let min_eigenvalue = m.min_eigenvalue();
            rows.push(MatrixRow {
                n,
                probe: x.clone(),
                matrix: m,
                deviation: dev,
                min_eigenvalue,
            });
        }
        deviations.push((n, worst));
    }
    let decreasing = deviations.windows(2).all(|w| w[1].1 < w[0].1);
    let eigen_floor_ok = rows.iter().all(|r| r.min_eigenvalue >= -1e-12);
    Ok(MatrixLimitReport {
        target: target.clone(),
        rows,
        deviations,
        decreasing,
        eigen_floor_ok,
        pass: decreasing && eigen_floor_ok,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    Balanced,
    /// Non-balanced fields with `alpha < 1`.
    NonBalanced,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MomentRequirement {
    /// `sup E[kappa^p] < inf` for some `p > order`.
    Polynomial { order: f64 },
    /// `sup E[exp(c kappa^eta)] < inf` for some `c > 0`, `eta` in the open range.
    Exponential { eta_low: f64, eta_high: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdVerdict {
    pub dim: usize,
    pub alpha: f64,
    pub regime: Regime,
    /// Dimension must exceed this value.
    pub dimension_bound: f64,
    pub dimension_ok: bool,
    pub requirement: MomentRequirement,
    /// `None` when inside the hypotheses.
    pub warning: Option<String>,
}

pub fn moment_threshold(dim: usize, alpha: f64, regime: Regime) -> Result<ThresholdVerdict, AuditError> {
    if dim == 0 {
        return Err(AuditError::Dimension);
    }
    if !(alpha > 0.0 && alpha <= 2.0) {
        return Err(AuditError::Alpha(alpha));
    }
    let d = dim as f64;
    let (dimension_bound, requirement, label) = if alpha == 2.0 {
        (
            0.0,
            MomentRequirement::Exponential {
                eta_low: 1.0,
                eta_high: 2.0,
            },
            String::new(),
        )
    } else {
        match regime {
            Regime::Balanced => (
                4.0 - 2.0 * alpha,
                MomentRequirement::Polynomial {
                    order: (2.0 * (d + 1.0) / d).max((d + 1.0) / (2.0 - alpha)),
                },
                "d>4-2alpha fails".to_string(),
            ),
            Regime::NonBalanced => {
                if alpha >= 1.0 {
                    return Ok(ThresholdVerdict {
                        dim,
                        alpha,
                        regime,
                        dimension_bound: f64::NAN,
                        dimension_ok: false,
                        requirement: MomentRequirement::Polynomial { order: f64::INFINITY },
                        warning: Some("outside theorem hypotheses: non-balanced fields need alpha < 1".into()),
                    });
                }
                (
                    2.0 - 2.0 * alpha,
                    MomentRequirement::Polynomial {
                        order: (2.0 * (d + 1.0) / d).max((d + 1.0) / (1.0 - alpha)),
                    },
                    "d>2-2alpha fails".to_string(),
                )
            }
        }
    };
    let dimension_ok = d > dimension_bound;
    Ok(ThresholdVerdict {
        dim,
        alpha,
        regime,
        dimension_bound,
        dimension_ok,
        requirement,
        warning: (!dimension_ok).then(|| format!("outside theorem hypotheses: {label}")),
    })
}

/// `sum_{0<|z|<=r} z kappa(x,z) / |z|^{d+alpha}`, summed in `(z, -z)` pairs.
pub fn drift_sum(field: &KappaField, x: &LatticePoint, r: f64) -> Vec<f64> {
    let d = field.dimension();
    let s = -0.5 * (d as f64 + field.alpha());
    let mut out = vec![0.0; d];
    for_each_in_ball(d, r, |z| {
        let (zc, flipped) = crate::env::canonical_halfspace(z).expect("nonzero");
        if flipped {
            return;
        }
        let w = zc.norm_sq_f64().powf(s);
        let kp = field.kappa(x, &zc) * w;
        let km = field.kappa(x, &(-zc)) * w;
        for (i, o) in out.iter_mut().enumerate() {
            let c = zc.coords()[i] as f64;
            *o += c * kp - c * km;
        }
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvironmentSpec;
    use std::f64::consts::PI;

    fn params(grid: &[f64]) -> AuditParams {
        AuditParams {
            site_samples: 6,
            ..AuditParams::new(256.0, grid.to_vec())
        }
    }

    #[test]
    fn unit_shell_values() {
        let b1 = KappaField::new(EnvironmentSpec::unit(2, 1.0)).unwrap();
        let x = LatticePoint::zero(2);
        let s = site_sums(&b1, &x, Assumption::B1, &[1.0], 4.0, 1.0);
        assert_eq!(s.inner[0], 4.0);
        let star = KappaField::new(EnvironmentSpec::unit(2, 0.5)).unwrap();
        let s = site_sums(&star, &x, Assumption::B1Star, &[1.0], 4.0, 0.5);
        assert_eq!(s.inner[0], 4.0);
        let c1 = KappaField::new(EnvironmentSpec::unit(2, 2.0)).unwrap();
        let s = site_sums(&c1, &x, Assumption::C1, &[1.0], 4.0, 2.0);
        assert_eq!(s.inner[0], 4.0);
    }

    #[test]
    fn sums_are_monotone_and_tail_remainder_is_small() {
        let f = KappaField::new(EnvironmentSpec::uniform(2, 1.0, 0.5, 1.5, 3)).unwrap();
        let radii = [2.0, 4.0, 8.0, 16.0, 32.0];
        let s = site_sums(&f, &LatticePoint::new(&[5, -7]), Assumption::B1, &radii, 128.0, 1.0);
        assert!(s.inner.windows(2).all(|w| w[1] >= w[0]));
        assert!(s.tail.windows(2).all(|w| w[1] <= w[0]));
        assert!(s.remainder_error < 0.01, "{}", s.remainder_error);
    }

    #[test]
    fn tail_sum_matches_long_enumeration() {
        // d=1, kappa=1: sum_{|z|>r} |z|^{-2} = 2 (pi^2/6 - sum_{k<=r} k^{-2})
        let f = KappaField::new(EnvironmentSpec::unit(1, 1.0)).unwrap();
        let s = site_sums(&f, &LatticePoint::zero(1), Assumption::B1, &[10.0], 40.0, 1.0);
        let partial: f64 = (1..=10).map(|k| 1.0 / (k * k) as f64).sum();
        let exact = 2.0 * (PI * PI / 6.0 - partial);
        assert!((s.tail[0] - exact).abs() < 1e-4 * exact, "{} vs {exact}", s.tail[0]);
    }

    #[test]
    fn b1_plateau_for_unit_field() {
        let f = KappaField::new(EnvironmentSpec::unit(2, 1.0)).unwrap();
        let rep = audit_B1(&f, &params(&[16.0, 32.0, 64.0]), Workers::ALL).unwrap();
        assert!(rep.pass);
        let c: Vec<f64> = rep.rows.iter().map(|r| r.inner_constant).collect();
        let lo = c.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = c.iter().copied().fold(0.0, f64::max);
        assert!(hi / lo < 1.2);
        // continuum plateau 2 pi
        assert!((c[2] / (2.0 * PI) - 1.0).abs() < 0.1);
    }

    #[test]
    fn regime_errors() {
        let f = KappaField::new(EnvironmentSpec::unit(2, 1.0)).unwrap();
        assert_eq!(
            audit_B1star(&f, &params(&[16.0]), Workers::SEQUENTIAL).unwrap_err(),
            AuditError::FirstMomentAlpha(1.0)
        );
        assert_eq!(
            audit_C1(&f, &params(&[16.0]), Workers::SEQUENTIAL).unwrap_err(),
            AuditError::LogAlpha(1.0)
        );
    }

    #[test]
    fn thresholds_match_formulas() {
        let v = moment_threshold(3, 1.0, Regime::Balanced).unwrap();
        assert!(v.dimension_ok);
        assert_eq!(v.requirement, MomentRequirement::Polynomial { order: 4.0 });
        let v = moment_threshold(1, 1.75, Regime::Balanced).unwrap();
        assert!(v.dimension_ok);
        assert_eq!(v.requirement, MomentRequirement::Polynomial { order: 8.0 });
        let v = moment_threshold(2, 1.0, Regime::Balanced).unwrap();
        assert!(!v.dimension_ok);
        assert!(v.warning.unwrap().contains("outside theorem hypotheses"));
        let v = moment_threshold(2, 0.7, Regime::NonBalanced).unwrap();
        assert!(v.dimension_ok);
        assert!((v.dimension_bound - 0.6).abs() < 1e-12);
        let v = moment_threshold(2, 2.0, Regime::Balanced).unwrap();
        assert!(matches!(v.requirement, MomentRequirement::Exponential { .. }));
    }

    #[test]
    fn threshold_monotone_in_alpha() {
        for d in 1..=4 {
            let mut prev = 0.0;
            for k in 1..40 {
                let a = 0.05 * k as f64;
                match moment_threshold(d, a, Regime::Balanced).unwrap().requirement {
                    MomentRequirement::Polynomial { order } => {
                        assert!(order >= prev);
                        prev = order;
                    }
                    _ => unreachable!(),
                }
            }
        }
    }

    #[test]
    fn drift_vanishes_for_balanced_fields() {
        let f = KappaField::new(EnvironmentSpec::uniform(2, 1.3, 0.5, 1.5, 77)).unwrap();
        for x in [LatticePoint::zero(2), LatticePoint::new(&[4, -9])] {
            assert_eq!(drift_sum(&f, &x, 10.0), vec![0.0, 0.0]);
        }
        let nb = KappaField::new(EnvironmentSpec {
            balanced: false,
            ..EnvironmentSpec::uniform(2, 0.7, 0.5, 1.5, 77)
        })
        .unwrap();
        let v = drift_sum(&nb, &LatticePoint::zero(2), 10.0);
        assert!(v.iter().any(|c| *c != 0.0));
    }

    #[test]
    fn matrix_is_diagonal_and_nonnegative() {
        let f = KappaField::new(EnvironmentSpec::unit(2, 2.0)).unwrap();
        let m = second_moment_matrix(&f, &LatticePoint::zero(2), 200);
        assert!(m.get(0, 1).abs() < 1e-12);
        assert!((m.get(0, 0) - m.get(1, 1)).abs() < 1e-12);
        assert!(m.min_eigenvalue() > 0.0);
        let rep = audit_matrix_limit(
            &f,
            &[16, 64, 256],
            &matrix_probes(2, 1.0),
            &SymMatrix::scaled_identity(2, PI),
            Workers::SEQUENTIAL,
        )
        .unwrap();
        assert!(rep.decreasing && rep.eigen_floor_ok);
    }
}
