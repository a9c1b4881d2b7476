//! Discrete generators of the scaled walk, their limit operators and
//! convergence sweeps between the two.

use crate::env::{canonical_halfspace, KappaField, MeanField};
use crate::kernel::{lattice_tail_bound, sphere_area};
use crate::lattice::{for_each_in_ball, LatticePoint};
use crate::par::{map_slice, Workers};
use crate::quad::{GaussLegendre, SphereRule};
use crate::stats::ols_slope;
use crate::testfn::{Smooth, TestFunction};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GenError {
    #[error("alpha must lie in (0, 2], got {0}")]
    Alpha(f64),
    #[error("the stable limit operator needs alpha in (0, 2), got {0}")]
    StableAlpha(f64),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("quadrature covers d = 1, 2, 3 only, got {0}")]
    QuadratureDimension(usize),
    #[error("matrix is not symmetric: entry ({i},{j}) differs by {gap}")]
    Asymmetric { i: usize, j: usize, gap: f64 },
    #[error("matrix has {got} entries, expected {expected}")]
    MatrixShape { expected: usize, got: usize },
    #[error("scale n must be positive")]
    Scale,
}

/// Balanced, degree-0 homogeneous limit kernel `K(x, z)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitKernel(pub MeanField);

impl LimitKernel {
    pub fn constant(value: f64) -> Self {
        Self(MeanField::Constant { value })
    }

    #[inline]
    pub fn eval(&self, x: &[f64], z: &[f64]) -> f64 {
        self.0.eval(x, z)
    }

    pub fn sup(&self) -> f64 {
        self.0.sup()
    }

    pub fn is_x_independent(&self) -> bool {
        self.0.is_x_independent()
    }
}

/// Symmetric `d x d` matrix in row-major order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymMatrix {
    pub dim: usize,
    pub entries: Vec<f64>,
}

impl SymMatrix {
    pub fn new(dim: usize, entries: Vec<f64>) -> Result<Self, GenError> {
        if entries.len() != dim * dim {
            return Err(GenError::MatrixShape {
                expected: dim * dim,
                got: entries.len(),
            });
        }
        let scale = entries.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
        for i in 0..dim {
            for j in (i + 1)..dim {
                let gap = (entries[i * dim + j] - entries[j * dim + i]).abs();
                if gap > 1e-12 * scale {
                    return Err(GenError::Asymmetric { i, j, gap });
                }
            }
        }
        Ok(Self { dim, entries })
    }

    pub fn scaled_identity(dim: usize, c: f64) -> Self {
        let mut entries = vec![0.0; dim * dim];
        for i in 0..dim {
            entries[i * dim + i] = c;
        }
        Self { dim, entries }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.dim + j]
    }

    pub fn max_abs(&self) -> f64 {
        self.entries.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `xi^T A xi`.
    pub fn quadratic_form(&self, xi: &[f64]) -> f64 {
        let d = self.dim;
        let mut s = 0.0;
        for i in 0..d {
            for j in 0..d {
                s += xi[i] * self.entries[i * d + j] * xi[j];
            }
        }
        s
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let m = nalgebra::DMatrix::from_row_slice(self.dim, self.dim, &self.entries);
        m.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Cutoff policy for the discrete generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutoffPolicy {
    /// Jumps are enumerated up to `factor * n * N0` lattice units.
    pub factor: f64,
    /// Bound on the neglected tail above which the value is flagged.
    pub tolerance: f64,
}

impl Default for CutoffPolicy {
    fn default() -> Self {
        Self {
            factor: 64.0,
            tolerance: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DiscreteValue {
    pub value: f64,
    /// Lattice radius of the enumerated jumps; 0 when only the support window was needed.
    pub cutoff: f64,
    /// Mean-field estimate of the jumps beyond the cutoff, already included in `value`.
    pub remainder_estimate: f64,
    /// Worst-case size of the neglected tail under `kappa <= kappa_max`.
    pub tail_bound: f64,
    pub cutoff_limited: bool,
}

/// Normalizing factor of the scaled generator.
pub fn generator_scale(n: u32, alpha: f64) -> f64 {
    crate::walker::time_scale(n, alpha)
}

/// Jump-kernel exponent `d + alpha`, or `d + 2` in the diffusive case.
fn kernel_exponent(dim: usize, alpha: f64) -> f64 {
    dim as f64 + alpha
}

/// `L_n f(x)` at `x = site / n`.
///
/// Jumps are summed in `(z, -z)` pairs, so for a balanced field the first-order
/// terms cancel exactly.
pub fn discrete_generator<F: Smooth + ?Sized>(
    field: &KappaField,
    f: &F,
    site: &LatticePoint,
    n: u32,
    cutoff: CutoffPolicy,
) -> Result<DiscreteValue, GenError> {
    let d = field.dimension();
    let alpha = field.alpha();
    if !(alpha > 0.0 && alpha <= 2.0) {
        return Err(GenError::Alpha(alpha));
    }
    if site.dim() != d || f.dim() != d {
        return Err(GenError::Dimension {
            expected: d,
            got: if site.dim() != d { site.dim() } else { f.dim() },
        });
    }
    if n == 0 {
        return Err(GenError::Scale);
    }
    let nf = n as f64;
    let s = kernel_exponent(d, alpha);
    let scale = generator_scale(n, alpha);
    let x = site.scaled(nf);
    let fx = f.value(&x);
    let window = nf * f.support_radius();

    if site.norm() > window {
        // x lies outside the support ball: only jumps landing in it contribute
        let mut acc = 0.0;
        let mut add = |v: &LatticePoint| {
            let z = *v - *site;
            let fv = f.value(&v.scaled(nf));
            if fv != 0.0 {
                acc += fv * field.kappa(site, &z) / z.norm_sq_f64().powf(0.5 * s);
            }
        };
        add(&LatticePoint::zero(d));
        for_each_in_ball(d, window, &mut add);
        return Ok(DiscreteValue {
            value: scale * acc,
            cutoff: 0.0,
            remainder_estimate: 0.0,
            tail_bound: 0.0,
            cutoff_limited: false,
        });
    }

    let reach = (site.norm() + window + 1.0).ceil();
    let radius = if fx == 0.0 {
        reach
    } else {
        (cutoff.factor * window).max(reach).ceil()
    };
    let mut acc = 0.0;
    let mut count = 1usize;
    for_each_in_ball(d, radius, |z| {
        count += 1;
        let (zc, flipped) = canonical_halfspace(z).expect("nonzero");
        if flipped {
            return;
        }
        let w = z.norm_sq_f64().powf(-0.5 * s);
        let plus = *site + zc;
        let minus = *site - zc;
        let fp = f.value(&plus.scaled(nf)) - fx;
        let fm = f.value(&minus.scaled(nf)) - fx;
        acc += (fp * field.kappa(site, &zc) + fm * field.kappa(site, &(-zc))) * w;
    });
    if fx == 0.0 {
        return Ok(DiscreteValue {
            value: scale * acc,
            cutoff: radius,
            remainder_estimate: 0.0,
            tail_bound: 0.0,
            cutoff_limited: false,
        });
    }

    // radius whose ball volume matches the enumerated lattice count
    let unit_ball = sphere_area(d) / d as f64;
    let rho = (count as f64 / unit_ball).powf(1.0 / d as f64);
    let mean_k = angular_mean(field.spec().mean_field.clone(), &x, rho, nf);
    let remainder = -fx * mean_k * sphere_area(d) * rho.powf(-alpha) / alpha;
    let tail = lattice_tail_bound(d, alpha, radius).unwrap_or(f64::INFINITY);
    let tail_bound = scale * fx.abs() * field.kappa_max() * tail;
    Ok(DiscreteValue {
        value: scale * (acc + remainder),
        cutoff: radius,
        remainder_estimate: scale * remainder,
        tail_bound,
        cutoff_limited: tail_bound > cutoff.tolerance,
    })
}

/// Average of `K(nx, rho theta)` over the sphere.
fn angular_mean(k: MeanField, x: &[f64], rho: f64, n: f64) -> f64 {
    if let MeanField::Constant { value } = k {
        return value;
    }
    let d = x.len();
    let y: Vec<f64> = x.iter().map(|v| v * n).collect();
    if d > 3 {
        return k.sup();
    }
    let rule = SphereRule::new(d, 16);
    let mut z = vec![0.0; d];
    rule.integrate(|t| {
        for i in 0..d {
            z[i] = rho * t[i];
        }
        k.eval(&y, &z)
    }) / sphere_area(d)
}

/// Quadrature depth for the limit operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuadDepth {
    /// Gauss-Legendre sub-panels per radial segment.
    pub radial_panels: usize,
    /// Sphere resolution (see [`SphereRule::new`]).
    pub angular: usize,
}

impl QuadDepth {
    pub fn doubled(self) -> Self {
        Self {
            radial_panels: 2 * self.radial_panels,
            angular: 2 * self.angular,
        }
    }
}

impl Default for QuadDepth {
    fn default() -> Self {
        Self {
            radial_panels: 8,
            angular: 16,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuadValue {
    pub value: f64,
    /// `|Q(depth) - Q(2 depth)|`.
    pub error_estimate: f64,
    /// Set when the estimate exceeds the requested tolerance.
    pub flagged: bool,
}

const GL_ORDER: usize = 20;

/// Stable-like limit operator `bar-L f(x)` in symmetrized polar form,
/// `1/2 int_S int_0^inf (f(x+r t) + f(x-r t) - 2 f(x)) K(x, r t) r^{-1-alpha} dr dt`,
/// reported at depth `2 * depth` with the depth-vs-double difference as error.
pub fn limit_generator_stable<F: Smooth + ?Sized>(
    kernel: &LimitKernel,
    f: &F,
    x: &[f64],
    alpha: f64,
    depth: QuadDepth,
    tolerance: f64,
) -> Result<QuadValue, GenError> {
    if !(alpha > 0.0 && alpha < 2.0) {
        return Err(GenError::StableAlpha(alpha));
    }
    let d = f.dim();
    if x.len() != d {
        return Err(GenError::Dimension {
            expected: d,
            got: x.len(),
        });
    }
    if d > 3 {
        return Err(GenError::QuadratureDimension(d));
    }
    let gl = GaussLegendre::new(GL_ORDER);
    let coarse = stable_at_depth(kernel, f, x, alpha, depth, &gl);
    let fine = stable_at_depth(kernel, f, x, alpha, depth.doubled(), &gl);
    let error_estimate = (fine - coarse).abs();
    Ok(QuadValue {
        value: fine,
        error_estimate,
        flagged: error_estimate > tolerance,
    })
}

fn stable_at_depth<F: Smooth + ?Sized>(
    kernel: &LimitKernel,
    f: &F,
    x: &[f64],
    alpha: f64,
    depth: QuadDepth,
    gl: &GaussLegendre,
) -> f64 {
    let d = f.dim();
    let fx = f.value(x);
    let rule = SphereRule::new(d, depth.angular);
    let total: f64 = rule
        .iter()
        .map(|(theta, w)| w * radial_integral(kernel, f, x, fx, theta, alpha, depth.radial_panels, gl))
        .sum();
    0.5 * total
}

#[allow(clippy::too_many_arguments)]
fn radial_integral<F: Smooth + ?Sized>(
    kernel: &LimitKernel,
    f: &F,
    x: &[f64],
    fx: f64,
    theta: &[f64],
    alpha: f64,
    panels: usize,
    gl: &GaussLegendre,
) -> f64 {
    let d = x.len();
    let mut p = vec![0.0; d];
    let mut q = vec![0.0; d];
    let mut z = vec![0.0; d];
    let taylor_radius = 1e-4 * f.support_radius();
    let hess = f.hessian(x);
    let mut curvature = 0.0;
    for i in 0..d {
        for j in 0..d {
            curvature += theta[i] * hess[i * d + j] * theta[j];
        }
    }
    let mut integrand = |r: f64| {
        for i in 0..d {
            z[i] = r * theta[i];
            p[i] = x[i] + z[i];
            q[i] = x[i] - z[i];
        }
        // below `taylor_radius` the symmetric difference loses all its digits
        let diff = if r < taylor_radius {
            r * r * curvature
        } else {
            f.value(&p) + f.value(&q) - 2.0 * fx
        };
        diff * kernel.eval(x, &z) * r.powf(-1.0 - alpha)
    };

    let crossings = f.ray_breaks(x, theta);
    let mut breaks = vec![0.0];
    breaks.extend(crossings.iter().copied().filter(|&r| r > 0.0));
    if breaks.len() == 1 {
        // x outside the support and the ray misses it
        breaks.push(f.support_radius());
    }
    let edge = *breaks.last().unwrap();

    let mut total = 0.0;
    // near 0 the integrand is r^{1-alpha} times a smooth function of r^2;
    // r = c s^beta on [0, c] makes it smooth in s
    let c = 0.5 * breaks[1];
    let beta = 2.0 / (2.0 - alpha);
    total += gl.composite(0.0, 1.0, panels, |s| {
        let r = c * s.powf(beta);
        integrand(r) * c * beta * s.powf(beta - 1.0)
    });
    breaks[0] = c;
    for w in breaks.windows(2) {
        total += gl.composite(w[0], w[1], panels, &mut integrand);
    }

    // beyond the support only -2 f(x) K r^{-1-alpha} remains
    if fx != 0.0 {
        if kernel.is_x_independent() {
            total += -2.0 * fx * kernel.eval(x, theta) * edge.powf(-alpha) / alpha;
        } else {
            // t = r^{-alpha}
            let t_max = edge.powf(-alpha);
            total += -2.0 * fx / alpha
                * gl.composite(0.0, t_max, panels, |t| {
                    let r = t.powf(-1.0 / alpha);
                    for i in 0..d {
                        z[i] = r * theta[i];
                    }
                    kernel.eval(x, &z)
                });
        }
    }
    total
}

/// `1/2 sum_ij a_ij d_i d_j f(x)`.
pub fn limit_generator_diffusive<F: Smooth + ?Sized>(a: &SymMatrix, f: &F, x: &[f64]) -> Result<f64, GenError> {
    let d = f.dim();
    if a.dim != d || x.len() != d {
        return Err(GenError::Dimension {
            expected: d,
            got: if a.dim != d { a.dim } else { x.len() },
        });
    }
    SymMatrix::new(a.dim, a.entries.clone())?;
    let h = f.hessian(x);
    Ok(0.5 * a.entries.iter().zip(&h).map(|(a, h)| a * h).sum::<f64>())
}

/// Limit operator used by a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LimitOperator {
    Stable { kernel: LimitKernel, depth: QuadDepth },
    Diffusive { matrix: SymMatrix },
}

impl LimitOperator {
    pub fn eval<F: Smooth + ?Sized>(&self, f: &F, x: &[f64], alpha: f64) -> Result<QuadValue, GenError> {
        match self {
            LimitOperator::Stable { kernel, depth } => {
                limit_generator_stable(kernel, f, x, alpha, *depth, f64::INFINITY)
            }
            LimitOperator::Diffusive { matrix } => Ok(QuadValue {
                value: limit_generator_diffusive(matrix, f, x)?,
                error_estimate: 0.0,
                flagged: false,
            }),
        }
    }
}

/// Probe grid covering the support dilated by `dilation`, with spacing
/// `N0 / per_radius` along each axis.
pub fn default_probe_grid(f: &TestFunction, dilation: f64, per_radius: usize) -> Vec<Vec<f64>> {
    let d = f.dim();
    let n0 = f.support_radius();
    let h = n0 / per_radius as f64;
    let k = (dilation * per_radius as f64).round() as i64;
    let mut out = Vec::new();
    let mut idx = vec![-k; d];
    loop {
        let p: Vec<f64> = idx.iter().map(|&i| i as f64 * h).collect();
        if p.iter().map(|v| v * v).sum::<f64>().sqrt() <= dilation * n0 + 1e-12 {
            out.push(p);
        }
        let mut axis = 0;
        loop {
            if axis == d {
                return out;
            }
            idx[axis] += 1;
            if idx[axis] <= k {
                break;
            }
            idx[axis] = -k;
            axis += 1;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub n_grid: Vec<u32>,
    /// Probe points (real coordinates), snapped to `n^{-1} Z^d` for each `n`.
    pub probes: Vec<Vec<f64>>,
    /// Far-field annulus in units of `N0`.
    pub far_inner: f64,
    pub far_outer: f64,
    /// Number of far-field radii (geometric spacing).
    pub far_points: usize,
    pub cutoff: CutoffPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub n: u32,
    pub probe: Vec<f64>,
    pub value: f64,
    pub limit: f64,
    pub abs_error: f64,
    pub cutoff_error: f64,
    pub quad_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FarFieldRow {
    pub n: u32,
    pub radius: f64,
    pub max_abs_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSummary {
    pub n: u32,
    pub probe_sup: f64,
    pub far_max: f64,
    /// `-slope` of `log max|L_n f|` against `log |x|` over the annulus.
    pub decay_exponent: f64,
    pub max_cutoff_error: f64,
    pub cutoff_limited: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub far_field: Vec<FarFieldRow>,
    pub summaries: Vec<SweepSummary>,
    pub limit_sup: f64,
    pub seed: u64,
}

fn snap(x: &[f64], n: u32) -> LatticePoint {
    let y: Vec<f64> = x.iter().map(|v| v * n as f64).collect();
    LatticePoint::round_from(&y)
}

/// Far-field probe points at radius `r`: both directions of every axis.
fn far_points(d: usize, r: f64, n: u32) -> Vec<LatticePoint> {
    let mut out = Vec::new();
    for axis in 0..d {
        for sign in [1.0, -1.0] {
            let mut p = vec![0.0; d];
            p[axis] = sign * r;
            out.push(snap(&p, n));
        }
    }
    out
}

/// Discrete-vs-limit discrepancies over a probe grid and far-field decay of
/// `L_n f`, for every `n` in the grid.
pub fn convergence_sweep(
    field: &KappaField,
    limit: &LimitOperator,
    f: &TestFunction,
    cfg: &SweepConfig,
    workers: Workers,
) -> Result<SweepReport, GenError> {
    let alpha = field.alpha();
    let d = field.dimension();
    let n0 = f.support_radius();
    let mut rows = Vec::new();
    let mut far_field = Vec::new();
    let mut summaries = Vec::new();
    let mut limit_sup = 0.0f64;

    for &n in &cfg.n_grid {
        let sites: Vec<LatticePoint> = cfg.probes.iter().map(|p| snap(p, n)).collect();
        let evaluated = map_slice(&sites, workers, |site| {
            let x = site.scaled(n as f64);
            let disc = discrete_generator(field, f, site, n, cfg.cutoff)?;
            let lim = limit.eval(f, &x, alpha)?;
            Ok::<_, GenError>((x, disc, lim))
        });
        let mut probe_sup = 0.0f64;
        let mut max_cut = 0.0f64;
        let mut limited = false;
        for r in evaluated {
            let (x, disc, lim) = r?;
            let err = (disc.value - lim.value).abs();
            probe_sup = probe_sup.max(err);
            max_cut = max_cut.max(disc.tail_bound);
            limited |= disc.cutoff_limited;
            limit_sup = limit_sup.max(lim.value.abs());
            rows.push(SweepRow {
                n,
                probe: x,
                value: disc.value,
                limit: lim.value,
                abs_error: err,
                cutoff_error: disc.tail_bound,
                quad_error: lim.error_estimate,
            });
        }

        let radii: Vec<f64> = (0..cfg.far_points)
            .map(|k| {
                let t = k as f64 / (cfg.far_points.max(2) - 1) as f64;
                n0 * cfg.far_inner * (cfg.far_outer / cfg.far_inner).powf(t)
            })
            .collect();
        let far = map_slice(&radii, workers, |&r| {
            let mut best = 0.0f64;
            for site in far_points(d, r, n) {
                let v = discrete_generator(field, f, &site, n, cfg.cutoff)?;
                best = best.max(v.value.abs());
            }
            Ok::<_, GenError>(best)
        });
        let mut pts = Vec::new();
        let mut far_max = 0.0f64;
        for (r, v) in radii.iter().zip(far) {
            let v = v?;
            far_max = far_max.max(v);
            if v > 0.0 {
                pts.push((r.ln(), v.ln()));
            }
            far_field.push(FarFieldRow {
                n,
                radius: *r,
                max_abs_value: v,
            });
        }
        let decay_exponent = if pts.len() >= 2 { -ols_slope(&pts) } else { f64::NAN };
        summaries.push(SweepSummary {
            n,
            probe_sup,
            far_max,
            decay_exponent,
            max_cutoff_error: max_cut,
            cutoff_limited: limited,
        });
    }
    Ok(SweepReport {
        rows,
        far_field,
        summaries,
        limit_sup,
        seed: field.spec().master_seed,
    })
}

/// `sup_x |L_n f|` bound shape `2 C (||D^2 f|| + ||f||)` from an audited
/// constant `C`.
pub fn uniform_bound(c1: f64, f: &TestFunction) -> f64 {
    2.0 * c1 * (f.hessian_sup() + f.sup_norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvironmentSpec;
    use crate::testfn::BumpShape;
    use std::f64::consts::PI;

    fn unit_field(d: usize, alpha: f64) -> KappaField {
        KappaField::new(EnvironmentSpec::unit(d, alpha)).unwrap()
    }

    #[test]
    fn odd_function_at_origin_is_exactly_zero() {
        let field = KappaField::new(EnvironmentSpec::uniform(2, 1.0, 0.5, 1.5, 4)).unwrap();
        let f = TestFunction::new(BumpShape::OddProduct, 2, 1.0);
        let v = discrete_generator(&field, &f, &LatticePoint::zero(2), 8, CutoffPolicy::default()).unwrap();
        // the remainder estimate is -f(0) * ... = 0 as well
        assert_eq!(v.value, 0.0);
        let lim = limit_generator_stable(&LimitKernel::constant(1.0), &f, &[0.0, 0.0], 1.0, QuadDepth::default(), 1e-6)
            .unwrap();
        assert!(lim.value.abs() < 1e-12);
    }

    #[test]
    fn zero_function_and_far_support() {
        let field = unit_field(1, 1.5);
        let f = TestFunction::new(BumpShape::Radial, 1, 1.0);
        // far from the support, only the window contributes, and it is positive
        let v = discrete_generator(&field, &f, &LatticePoint::new(&[100]), 16, CutoffPolicy::default()).unwrap();
        assert!(v.value > 0.0 && v.cutoff == 0.0);
    }

    #[test]
    fn discrete_matches_brute_force_sum() {
        // d=1, alpha=1.5, kappa=1, n=16, against a direct sum over |z| <= 10^6 plus
        // an Euler-Maclaurin tail
        let alpha = 1.5;
        let n = 16u32;
        let field = unit_field(1, alpha);
        let f = TestFunction::new(BumpShape::Radial, 1, 1.0);
        for y in [0i64, 3, 9, 15] {
            let x = y as f64 / n as f64;
            let fx = f.value(&[x]);
            let big = 1_000_000i64;
            let mut acc = 0.0;
            let mut comp = 0.0;
            for z in 1..=big {
                let w = (z as f64).powf(-(1.0 + alpha));
                let t = (f.value(&[x + z as f64 / n as f64]) + f.value(&[x - z as f64 / n as f64]) - 2.0 * fx) * w;
                let yk = t - comp;
                let s = acc + yk;
                comp = (s - acc) - yk;
                acc = s;
            }
            // sum_{k > N} k^{-s} ~ N^{1-s}/(s-1) - N^{-s}/2 + s N^{-s-1}/12
            let s = 1.0 + alpha;
            let nb = big as f64;
            let tail = nb.powf(1.0 - s) / (s - 1.0) - 0.5 * nb.powf(-s) + s * nb.powf(-s - 1.0) / 12.0;
            let oracle = (n as f64).powf(alpha) * (acc - 2.0 * fx * tail);
            let v = discrete_generator(&field, &f, &LatticePoint::new(&[y]), n, CutoffPolicy::default()).unwrap();
            assert!((v.value - oracle).abs() <= 1e-8 * oracle.abs(), "y={y}: {} vs {oracle}", v.value);
        }
    }

    #[test]
    fn compensation_changes_nothing_for_balanced_fields() {
        let field = KappaField::new(EnvironmentSpec::uniform(2, 1.2, 0.5, 1.5, 8)).unwrap();
        let f = TestFunction::new(BumpShape::Anisotropic, 2, 1.0);
        let n = 8u32;
        let site = LatticePoint::new(&[3, -2]);
        let x = site.scaled(n as f64);
        let grad = f.gradient(&x);
        let mut plain = 0.0;
        let mut compensated = 0.0;
        for_each_in_ball(2, 20.0, |z| {
            let (zc, flipped) = canonical_halfspace(z).unwrap();
            if flipped {
                return;
            }
            let w = field.kappa(&site, &zc) / zc.norm_sq_f64().powf(0.5 * 3.2);
            let comp = (zc.coords()[0] as f64 * grad[0] + zc.coords()[1] as f64 * grad[1]) / n as f64;
            let up = f.value(&(site + zc).scaled(n as f64)) - f.value(&x);
            let down = f.value(&(site - zc).scaled(n as f64)) - f.value(&x);
            plain += (up + down) * w;
            compensated += ((up - comp) + (down + comp)) * w;
        });
        assert!((plain - compensated).abs() <= 1e-15 * plain.abs().max(1.0) * 100.0);
    }

    #[test]
    fn linearity_in_f() {
        use crate::testfn::Combination;
        let field = KappaField::new(EnvironmentSpec::uniform(1, 1.5, 0.5, 1.5, 2)).unwrap();
        let f = TestFunction::new(BumpShape::Radial, 1, 1.0);
        let g = TestFunction::new(BumpShape::OddProduct, 1, 1.0);
        let h = Combination(vec![(2.0, f), (-3.0, g)]);
        let k = LimitKernel::constant(1.0);
        for y in [0i64, 3, 7, 30] {
            let site = LatticePoint::new(&[y]);
            let n = 16;
            let cut = CutoffPolicy::default();
            let lf = discrete_generator(&field, &f, &site, n, cut).unwrap().value;
            let lg = discrete_generator(&field, &g, &site, n, cut).unwrap().value;
            let lh = discrete_generator(&field, &h, &site, n, cut).unwrap().value;
            assert!((lh - (2.0 * lf - 3.0 * lg)).abs() <= 1e-10 * (lf.abs() + lg.abs()).max(1.0));
            let x = site.scaled(n as f64);
            let q = QuadDepth::default();
            let bf = limit_generator_stable(&k, &f, &x, 1.5, q, 1.0).unwrap().value;
            let bg = limit_generator_stable(&k, &g, &x, 1.5, q, 1.0).unwrap().value;
            let bh = limit_generator_stable(&k, &h, &x, 1.5, q, 1.0).unwrap().value;
            assert!((bh - (2.0 * bf - 3.0 * bg)).abs() <= 1e-9 * (bf.abs() + bg.abs()).max(1.0));
        }
    }

    #[test]
    fn stable_limit_matches_refined_quadrature() {
        let k = LimitKernel::constant(1.0);
        let f = TestFunction::new(BumpShape::Radial, 1, 1.0);
        for x in [0.0, 0.3, 0.8, 1.5, 3.0] {
            let v = limit_generator_stable(&k, &f, &[x], 1.5, QuadDepth::default(), 1e-6).unwrap();
            let depth4 = QuadDepth {
                radial_panels: 4 * QuadDepth::default().radial_panels,
                angular: 4 * QuadDepth::default().angular,
            };
            let oracle = limit_generator_stable(&k, &f, &[x], 1.5, depth4, 1e-6).unwrap();
            assert!(!v.flagged, "x={x} err={}", v.error_estimate);
            assert!((v.value - oracle.value).abs() <= 1e-6 * oracle.value.abs(), "x={x}");
        }
    }

    #[test]
    fn stable_limit_against_independent_line_integral() {
        // d=1: bar-L f(x) = int_0^inf (f(x+r)+f(x-r)-2f(x)) r^{-1-alpha} dr, by
        // a plain composite trapezoid on a graded grid as oracle
        let alpha = 0.7;
        let f = TestFunction::new(BumpShape::Radial, 1, 1.0);
        let x = 0.4;
        let fx = f.value(&[x]);
        let g = |r: f64| (f.value(&[x + r]) + f.value(&[x - r]) - 2.0 * fx) * r.powf(-1.0 - alpha);
        let beta = 2.0 / (2.0 - alpha);
        let edge = 1.0 + x;
        let m = 400_000;
        let mut acc = 0.0;
        for i in 0..m {
            // midpoint rule in s with r = edge s^beta
            let s = (i as f64 + 0.5) / m as f64;
            acc += g(edge * s.powf(beta)) * edge * beta * s.powf(beta - 1.0) / m as f64;
        }
        acc += -2.0 * fx * edge.powf(-alpha) / alpha;
        let v = limit_generator_stable(&LimitKernel::constant(1.0), &f, &[x], alpha, QuadDepth::default(), 1e-6)
            .unwrap();
        assert!((v.value - acc).abs() < 1e-6 * acc.abs(), "{} vs {acc}", v.value);
    }

    #[test]
    fn diffusive_examples() {
        let f = TestFunction::new(BumpShape::Radial, 2, 1.0);
        let zero = SymMatrix::scaled_identity(2, 0.0);
        assert_eq!(limit_generator_diffusive(&zero, &f, &[0.0, 0.0]).unwrap(), 0.0);
        let id = SymMatrix::scaled_identity(2, 1.0);
        let pi = SymMatrix::scaled_identity(2, PI);
        let a = limit_generator_diffusive(&id, &f, &[0.0, 0.0]).unwrap();
        // Hessian of e^{-1/(1-|x|^2)} at 0 is -2/e I
        assert!((a + 2.0 * (-1.0f64).exp()).abs() < 1e-15);
        let b = limit_generator_diffusive(&pi, &f, &[0.0, 0.0]).unwrap();
        assert!((b - PI * a).abs() < 1e-14);
        assert!(matches!(
            SymMatrix::new(2, vec![1.0, 0.5, 0.2, 1.0]),
            Err(GenError::Asymmetric { .. })
        ));
    }

    #[test]
    fn probe_grid_is_lattice_compatible() {
        let f = TestFunction::new(BumpShape::Radial, 1, 1.0);
        let grid = default_probe_grid(&f, 4.0, 8);
        assert_eq!(grid.len(), 65);
        for p in &grid {
            let y = p[0] * 8.0;
            assert_eq!(y, y.round());
        }
    }
}
