//! Compactly supported smooth test functions with closed-form derivatives.
//!
//! Each function is `f(x) = l(x) * h(q(x))` with `h(s) = exp(-1/(1-s))` on
//! `s < 1`, `q(x) = sum x_i^2 / a_i^2` and `l` affine.

use crate::lattice::MAX_DIM;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BumpShape {
    /// Rotation-invariant bump of radius `N0`.
    Radial,
    /// Semi-axis `N0` along the first axis, `N0 / 2` along the others.
    Anisotropic,
    /// `(x_1 / N0)` times the radial bump; odd under `x -> -x`.
    OddProduct,
}

impl BumpShape {
    pub fn name(self) -> &'static str {
        match self {
            BumpShape::Radial => "radial",
            BumpShape::Anisotropic => "anisotropic",
            BumpShape::OddProduct => "odd-product",
        }
    }
}

/// Derivatives up to third order at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct Jet {
    pub value: f64,
    pub gradient: Vec<f64>,
    /// Row-major `d x d`.
    pub hessian: Vec<f64>,
    /// Row-major `d x d x d`.
    pub third: Vec<f64>,
}

/// What the generators need from a test function.
pub trait Smooth: Sync {
    fn dim(&self) -> usize;
    /// The function vanishes outside `B(0, support_radius)`.
    fn support_radius(&self) -> f64;
    fn value(&self, x: &[f64]) -> f64;
    /// Row-major Hessian.
    fn hessian(&self, x: &[f64]) -> Vec<f64>;
    /// Radii `r > 0`, ascending, at which `x + r theta` or `x - r theta`
    /// crosses the boundary of the support.
    fn ray_breaks(&self, x: &[f64], theta: &[f64]) -> Vec<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestFunction {
    shape: BumpShape,
    dim: usize,
    support_radius: f64,
}

/// `h` and its first three derivatives at `s`.
fn profile(s: f64) -> [f64; 4] {
    if s >= 1.0 {
        return [0.0; 4];
    }
    let u = 1.0 / (1.0 - s);
    let h = (-u).exp();
    let u2 = u * u;
    let u3 = u2 * u;
    let u4 = u2 * u2;
    [
        h,
        -u2 * h,
        h * (u4 - 2.0 * u3),
        h * (-u4 * u2 + 6.0 * u4 * u - 6.0 * u4),
    ]
}

impl TestFunction {
    pub fn new(shape: BumpShape, dim: usize, support_radius: f64) -> Self {
        assert!((1..=MAX_DIM).contains(&dim));
        assert!(support_radius > 0.0 && support_radius.is_finite());
        Self {
            shape,
            dim,
            support_radius,
        }
    }

    pub fn shape(&self) -> BumpShape {
        self.shape
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `N0`: the function vanishes outside `B(0, N0)`.
    pub fn support_radius(&self) -> f64 {
        self.support_radius
    }

    pub fn id(&self) -> String {
        format!("{}-d{}-r{}", self.shape.name(), self.dim, self.support_radius)
    }

    #[inline]
    fn semi_axis(&self, i: usize) -> f64 {
        match self.shape {
            BumpShape::Anisotropic if i > 0 => 0.5 * self.support_radius,
            _ => self.support_radius,
        }
    }

    #[inline]
    fn quadratic(&self, x: &[f64]) -> f64 {
        x.iter()
            .enumerate()
            .map(|(i, v)| {
                let a = self.semi_axis(i);
                v * v / (a * a)
            })
            .sum()
    }

    /// Affine factor `l(x)` and its constant gradient along axis 0.
    #[inline]
    fn linear(&self, x: &[f64]) -> (f64, f64) {
        match self.shape {
            BumpShape::OddProduct => (x[0] / self.support_radius, 1.0 / self.support_radius),
            _ => (1.0, 0.0),
        }
    }

    #[inline]
    pub fn value(&self, x: &[f64]) -> f64 {
        let q = self.quadratic(x);
        if q >= 1.0 {
            return 0.0;
        }
        self.linear(x).0 * (-1.0 / (1.0 - q)).exp()
    }

    /// Value plus all derivatives through third order.
    pub fn jet(&self, x: &[f64]) -> Jet {
        let d = self.dim;
        let q = self.quadratic(x);
        let [h0, h1, h2, h3] = profile(q);
        let qi: Vec<f64> = (0..d).map(|i| 2.0 * x[i] / self.semi_axis(i).powi(2)).collect();
        let qii: Vec<f64> = (0..d).map(|i| 2.0 / self.semi_axis(i).powi(2)).collect();
        let qij = |i: usize, j: usize| if i == j { qii[i] } else { 0.0 };

        let g = h0;
        let gi = |i: usize| h1 * qi[i];
        let gij = |i: usize, j: usize| h2 * qi[i] * qi[j] + h1 * qij(i, j);
        let gijk = |i: usize, j: usize, k: usize| {
            h3 * qi[i] * qi[j] * qi[k]
                + h2 * (qij(i, j) * qi[k] + qij(i, k) * qi[j] + qij(j, k) * qi[i])
        };

        let (l, l0) = self.linear(x);
        let c = |i: usize| if i == 0 { l0 } else { 0.0 };

        let gradient = (0..d).map(|i| c(i) * g + l * gi(i)).collect();
        let mut hessian = vec![0.0; d * d];
        let mut third = vec![0.0; d * d * d];
        for i in 0..d {
            for j in 0..d {
                hessian[i * d + j] = c(i) * gi(j) + c(j) * gi(i) + l * gij(i, j);
                for k in 0..d {
                    third[(i * d + j) * d + k] = c(i) * gij(j, k)
                        + c(j) * gij(i, k)
                        + c(k) * gij(i, j)
                        + l * gijk(i, j, k);
                }
            }
        }
        Jet {
            value: l * g,
            gradient,
            hessian,
            third,
        }
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        self.jet(x).gradient
    }

    pub fn hessian(&self, x: &[f64]) -> Vec<f64> {
        self.jet(x).hessian
    }

    /// `sup |f|`, attained on the first axis.
    pub fn sup_norm(&self) -> f64 {
        match self.shape {
            BumpShape::OddProduct => self.axis_scan(|j| j.value.abs()),
            _ => (-1.0f64).exp(),
        }
    }

    /// Max absolute Hessian entry estimated on a fine grid.
    pub fn hessian_sup(&self) -> f64 {
        let d = self.dim;
        let n0 = self.support_radius;
        let steps = if d == 1 { 4000 } else { 200 };
        let mut best = 0.0f64;
        let mut x = vec![0.0; d];
        for a in 0..=steps {
            x[0] = -n0 + 2.0 * n0 * a as f64 / steps as f64;
            if d >= 2 {
                for b in 0..=steps {
                    x[1] = -n0 + 2.0 * n0 * b as f64 / steps as f64;
                    let h = self.jet(&x).hessian;
                    best = h.iter().fold(best, |m, v| m.max(v.abs()));
                }
            } else {
                let h = self.jet(&x).hessian;
                best = h.iter().fold(best, |m, v| m.max(v.abs()));
            }
        }
        best
    }

    /// Ray crossings of the ellipsoid `q = 1`: roots of `A r^2 + 2 B r + C`.
    pub fn ray_breaks(&self, x: &[f64], theta: &[f64]) -> Vec<f64> {
        let mut a = 0.0;
        let mut b = 0.0;
        let mut c = -1.0;
        for i in 0..self.dim {
            let w = 1.0 / self.semi_axis(i).powi(2);
            a += theta[i] * theta[i] * w;
            b += x[i] * theta[i] * w;
            c += x[i] * x[i] * w;
        }
        let disc = b * b - a * c;
        if a <= 0.0 || disc <= 0.0 {
            return Vec::new();
        }
        let root = disc.sqrt();
        // stable pair of roots of the +theta equation; -theta roots are their negatives
        let q = -(b + b.signum() * root);
        let (r1, r2) = if q == 0.0 { (root / a, -root / a) } else { (q / a, c / q) };
        let mut out: Vec<f64> = [r1.abs(), r2.abs()].into_iter().filter(|r| *r > 0.0).collect();
        out.sort_by(|p, q| p.total_cmp(q));
        out.dedup();
        out
    }

    fn axis_scan(&self, metric: impl Fn(&Jet) -> f64) -> f64 {
        let mut x = vec![0.0; self.dim];
        let steps = 20_000;
        (0..=steps)
            .map(|k| {
                x[0] = self.support_radius * k as f64 / steps as f64;
                metric(&self.jet(&x))
            })
            .fold(0.0, f64::max)
    }
}

impl Smooth for TestFunction {
    fn dim(&self) -> usize {
        self.dim
    }
    fn support_radius(&self) -> f64 {
        self.support_radius
    }
    fn value(&self, x: &[f64]) -> f64 {
        TestFunction::value(self, x)
    }
    fn hessian(&self, x: &[f64]) -> Vec<f64> {
        TestFunction::hessian(self, x)
    }
    fn ray_breaks(&self, x: &[f64], theta: &[f64]) -> Vec<f64> {
        TestFunction::ray_breaks(self, x, theta)
    }
}

/// Finite linear combination of test functions.
#[derive(Debug, Clone, PartialEq)]
pub struct Combination(pub Vec<(f64, TestFunction)>);

impl Smooth for Combination {
    fn dim(&self) -> usize {
        self.0[0].1.dim()
    }
    fn support_radius(&self) -> f64 {
        self.0.iter().map(|(_, f)| f.support_radius()).fold(0.0, f64::max)
    }
    fn value(&self, x: &[f64]) -> f64 {
        self.0.iter().map(|(c, f)| c * f.value(x)).sum()
    }
    fn hessian(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let mut h = vec![0.0; d * d];
        for (c, f) in &self.0 {
            for (acc, v) in h.iter_mut().zip(f.hessian(x)) {
                *acc += c * v;
            }
        }
        h
    }
    fn ray_breaks(&self, x: &[f64], theta: &[f64]) -> Vec<f64> {
        let mut out: Vec<f64> = self.0.iter().flat_map(|(_, f)| f.ray_breaks(x, theta)).collect();
        out.sort_by(|p, q| p.total_cmp(q));
        out.dedup();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Domain};
    use rand::Rng;

    fn shapes() -> [BumpShape; 3] {
        [BumpShape::Radial, BumpShape::Anisotropic, BumpShape::OddProduct]
    }

    #[test]
    fn vanishes_outside_support() {
        for s in shapes() {
            for d in 1..=3 {
                let f = TestFunction::new(s, d, 2.0);
                let mut x = vec![0.0; d];
                x[0] = 2.0;
                assert_eq!(f.value(&x), 0.0);
                let j = f.jet(&x);
                assert!(j.gradient.iter().chain(&j.hessian).chain(&j.third).all(|v| *v == 0.0));
                x[0] = 1.5;
                if s != BumpShape::OddProduct || x[0] != 0.0 {
                    assert!(f.value(&x) != 0.0);
                }
            }
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let mut rng = stream(21, Domain::SiteSample, 0);
        for s in shapes() {
            for d in 1..=3 {
                let f = TestFunction::new(s, d, 1.5);
                for _ in 0..40 {
                    let x: Vec<f64> = (0..d).map(|_| rng.random_range(-0.9..0.9)).collect();
                    let j = f.jet(&x);
                    let step = 1e-5;
                    for k in 0..d {
                        let mut xp = x.clone();
                        let mut xm = x.clone();
                        xp[k] += step;
                        xm[k] -= step;
                        let jp = f.jet(&xp);
                        let jm = f.jet(&xm);
                        let check = |fd: f64, exact: f64| {
                            let scale = exact.abs().max(1e-3);
                            assert!((fd - exact).abs() <= 1e-6 * scale.max(1.0), "{fd} vs {exact}");
                        };
                        check((jp.value - jm.value) / (2.0 * step), j.gradient[k]);
                        for i in 0..d {
                            check((jp.gradient[i] - jm.gradient[i]) / (2.0 * step), j.hessian[i * d + k]);
                            for l in 0..d {
                                check(
                                    (jp.hessian[i * d + l] - jm.hessian[i * d + l]) / (2.0 * step),
                                    j.third[(i * d + l) * d + k],
                                );
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn symmetries() {
        let f = TestFunction::new(BumpShape::OddProduct, 2, 1.0);
        let g = TestFunction::new(BumpShape::Radial, 2, 1.0);
        for x in [[0.3, -0.2], [0.1, 0.7], [-0.55, 0.05]] {
            let m = [-x[0], -x[1]];
            assert_eq!(f.value(&x), -f.value(&m));
            assert_eq!(g.value(&x), g.value(&m));
        }
        assert_eq!(f.value(&[0.0, 0.4]), 0.0);
    }

    #[test]
    fn ray_breaks_hit_the_boundary() {
        let f = TestFunction::new(BumpShape::Anisotropic, 2, 2.0);
        let x = [0.4, 0.3];
        let t = [0.6, 0.8];
        let br = f.ray_breaks(&x, &t);
        assert_eq!(br.len(), 2);
        for r in br {
            let hit = [x[0] + r * t[0], x[1] + r * t[1]];
            let back = [x[0] - r * t[0], x[1] - r * t[1]];
            let q = |p: [f64; 2]| p[0] * p[0] / 4.0 + p[1] * p[1];
            assert!((q(hit) - 1.0).abs() < 1e-12 || (q(back) - 1.0).abs() < 1e-12);
        }
        // a ray that misses
        assert!(f.ray_breaks(&[0.0, 5.0], &[1.0, 0.0]).is_empty());
    }

    #[test]
    fn radial_bump_at_origin() {
        let f = TestFunction::new(BumpShape::Radial, 2, 1.0);
        let j = f.jet(&[0.0, 0.0]);
        let e = (-1.0f64).exp();
        assert!((j.value - e).abs() < 1e-15);
        // h'(0) = -e^{-1}, q_ii = 2
        assert!((j.hessian[0] + 2.0 * e).abs() < 1e-15);
        assert_eq!(j.hessian[1], 0.0);
        assert!((f.sup_norm() - e).abs() < 1e-15);
    }
}
