//! Exact sampling from the dominating jump law `P(z) ∝ |z|^{-(d+alpha)}` on
//! `Z^d_0`.
//!
//! Lattice points with `|z| <= R0` come from an alias table. Beyond `R0` a
//! continuous isotropic envelope with radial density `∝ r^{-(1+alpha)}` is
//! drawn, rounded to the nearest lattice point `z`, and accepted with
//! probability `(|w| / |z|)^{d+alpha} / M`. With `M >= (1 + sqrt(d)/(2 R0))^{d+alpha}`
//! this ratio never exceeds one, so every `z` is emitted with probability
//! exactly `|z|^{-(d+alpha)} / D`, where `D = inner_mass + M * envelope_mass`.
//! Rejections are returned as phantom draws instead of being retried, which is
//! what the uniformized walker needs.

use crate::alias::AliasTable;
use crate::lattice::{for_each_in_ball, LatticePoint, MAX_DIM};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;
use thiserror::Error;

/// Jumps longer than this are outside the representable lattice window. The
/// discarded mass is reported by [`JumpKernelSampler::discarded_mass`].
pub const EXACT_RADIUS_LIMIT: f64 = (1u64 << 50) as f64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("alpha = {0} outside (0, 2]")]
    Alpha(f64),
    #[error("dimension {0} outside 1..={MAX_DIM}")]
    Dimension(usize),
    #[error("inner radius R0 = {r0} violates R0 >= 2*sqrt(d) = {required}; envelope cells would not dominate the lattice weights")]
    Domination { r0: f64, required: f64 },
    #[error("truncation radius {0} must be at least 1")]
    Truncation(f64),
    #[error("radius {r} is below the inner radius {r0}")]
    RadiusBelowInner { r: f64, r0: f64 },
    #[error("uniformization requires a rate bound")]
    NoRateBound,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum KernelMode {
    ExactInfinite,
    Truncated { r_max: f64 },
}

/// Default alias-table radius for a dimension, keeping the table below a few
/// hundred thousand atoms.
pub fn default_inner_radius(dim: usize) -> f64 {
    match dim {
        1 | 2 => 64.0,
        3 => 16.0,
        _ => 8.0,
    }
}

/// Surface area of the unit sphere `S^{d-1}` (counting measure for `d = 1`).
pub fn sphere_area(dim: usize) -> f64 {
    let h = dim as f64 / 2.0;
    2.0 * std::f64::consts::PI.powf(h) / gamma(h)
}

/// Integral-comparison bound on `sum_{|z| > r} |z|^{-(d+alpha)}`. Needs
/// `r > sqrt(d)`.
pub fn lattice_tail_bound(dim: usize, alpha: f64, r: f64) -> Option<f64> {
    let s = (dim as f64).sqrt() / 2.0;
    let base = r - 2.0 * s;
    if base <= 0.0 {
        return None;
    }
    Some(sphere_area(dim) * (1.0 + s / base).powi(dim as i32 - 1) * base.powf(-alpha) / alpha)
}

#[derive(Debug, Clone)]
struct Envelope {
    rho_lo: f64,
    rho_hi: f64,
    mass: f64,
    inflation: f64,
    limit_sq: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JumpDraw {
    Jump(LatticePoint),
    Phantom,
}

#[derive(Debug, Clone)]
pub struct JumpKernelSampler {
    dim: usize,
    alpha: f64,
    mode: KernelMode,
    inner_radius: f64,
    atoms: Vec<LatticePoint>,
    alias: AliasTable,
    inner_mass: f64,
    envelope: Option<Envelope>,
    total_mass: f64,
}

/// Compensated summation.
pub(crate) fn neumaier_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

impl JumpKernelSampler {
    pub fn build(dim: usize, alpha: f64, mode: KernelMode, r0: f64) -> Result<Self, KernelError> {
        if !(alpha > 0.0 && alpha <= 2.0) {
            return Err(KernelError::Alpha(alpha));
        }
        if !(1..=MAX_DIM).contains(&dim) {
            return Err(KernelError::Dimension(dim));
        }
        let (inner_radius, outer_limit) = match mode {
            KernelMode::Truncated { r_max } if r_max < 1.0 || !r_max.is_finite() => {
                return Err(KernelError::Truncation(r_max))
            }
            KernelMode::Truncated { r_max } if r_max <= r0 => (r_max, None),
            KernelMode::Truncated { r_max } => (r0, Some(r_max)),
            KernelMode::ExactInfinite => (r0, Some(EXACT_RADIUS_LIMIT)),
        };
        let half_diag = (dim as f64).sqrt() / 2.0;
        if outer_limit.is_some() && r0 < 4.0 * half_diag {
            return Err(KernelError::Domination {
                r0,
                required: 4.0 * half_diag,
            });
        }

        let exponent = dim as f64 + alpha;
        let mut atoms = Vec::new();
        for_each_in_ball(dim, inner_radius, |z| atoms.push(*z));
        let weights: Vec<f64> = atoms
            .iter()
            .map(|z| z.norm_sq_f64().powf(-exponent / 2.0))
            .collect();
        let inner_mass = neumaier_sum(weights.iter().copied());
        let alias = AliasTable::new(&weights);

        let envelope = outer_limit.map(|limit| {
            let rho_lo = r0 - half_diag;
            let rho_hi = limit + half_diag;
            let mass = sphere_area(dim) * (rho_lo.powf(-alpha) - rho_hi.powf(-alpha)) / alpha;
            let inflation = (1.0 + half_diag / r0).powf(exponent);
            Envelope {
                rho_lo,
                rho_hi,
                mass,
                inflation,
                limit_sq: limit * limit,
            }
        });
        let outer = envelope.as_ref().map_or(0.0, |e| e.inflation * e.mass);
        Ok(Self {
            dim,
            alpha,
            mode,
            inner_radius,
            atoms,
            alias,
            inner_mass,
            envelope,
            total_mass: inner_mass + outer,
        })
    }

    /// Sampler with the default inner radius for the dimension.
    pub fn with_defaults(dim: usize, alpha: f64, mode: KernelMode) -> Result<Self, KernelError> {
        Self::build(dim, alpha, mode, default_inner_radius(dim))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn mode(&self) -> KernelMode {
        self.mode
    }

    pub fn inner_radius(&self) -> f64 {
        self.inner_radius
    }

    pub fn inner_mass(&self) -> f64 {
        self.inner_mass
    }

    pub fn inner_atoms(&self) -> &[LatticePoint] {
        &self.atoms
    }

    /// Upper bound on `sum_{|z| > R0} |z|^{-(d+alpha)}` inside the support.
    pub fn outer_mass_bound(&self) -> f64 {
        self.envelope.as_ref().map_or(0.0, |e| e.inflation * e.mass)
    }

    /// Envelope inflation constant `M` (1 when there is no envelope).
    pub fn inflation(&self) -> f64 {
        self.envelope.as_ref().map_or(1.0, |e| e.inflation)
    }

    /// `D`: each supported `z` is drawn with probability `|z|^{-(d+alpha)} / D`.
    pub fn total_mass(&self) -> f64 {
        self.total_mass
    }

    pub fn weight(&self, z: &LatticePoint) -> f64 {
        z.norm_sq_f64().powf(-(self.dim as f64 + self.alpha) / 2.0)
    }

    fn support_radius_sq(&self) -> f64 {
        match &self.envelope {
            Some(e) => e.limit_sq,
            None => self.inner_radius * self.inner_radius,
        }
    }

    /// Probability that one call of [`Self::sample_jump`] returns `z`.
    pub fn proposal_probability(&self, z: &LatticePoint) -> f64 {
        if z.is_zero() || z.norm_sq_f64() > self.support_radius_sq() {
            0.0
        } else {
            self.weight(z) / self.total_mass
        }
    }

    #[inline]
    pub fn sample_jump<R: Rng + ?Sized>(&self, rng: &mut R) -> JumpDraw {
        let u = rng.random::<f64>() * self.total_mass;
        let env = match &self.envelope {
            Some(e) if u >= self.inner_mass => e,
            _ => return JumpDraw::Jump(self.atoms[self.alias.sample(rng)]),
        };
        let lo = env.rho_lo.powf(-self.alpha);
        let hi = env.rho_hi.powf(-self.alpha);
        let v: f64 = rng.random();
        let r = (lo - v * (lo - hi)).powf(-1.0 / self.alpha);
        let mut w = [0.0f64; MAX_DIM];
        let w = &mut w[..self.dim];
        if self.dim == 1 {
            w[0] = if rng.random::<bool>() { r } else { -r };
        } else {
            loop {
                let mut norm_sq = 0.0;
                for c in w.iter_mut() {
                    *c = rng.sample(StandardNormal);
                    norm_sq += *c * *c;
                }
                if norm_sq > 0.0 {
                    let scale = r / norm_sq.sqrt();
                    w.iter_mut().for_each(|c| *c *= scale);
                    break;
                }
            }
        }
        let z = LatticePoint::round_from(w);
        let z_sq = z.norm_sq_f64();
        if z_sq <= self.inner_radius * self.inner_radius || z_sq > env.limit_sq {
            return JumpDraw::Phantom;
        }
        let ratio = (r * r / z_sq).powf((self.dim as f64 + self.alpha) / 2.0) / env.inflation;
        if rng.random::<f64>() < ratio {
            JumpDraw::Jump(z)
        } else {
            JumpDraw::Phantom
        }
    }

    /// Bound `B(r) >= sum_{|z| > r} |z|^{-(d+alpha)}`, valid for `r >= R0`.
    pub fn tail_mass_bound(&self, r: f64) -> Result<f64, KernelError> {
        if r < self.inner_radius {
            return Err(KernelError::RadiusBelowInner {
                r,
                r0: self.inner_radius,
            });
        }
        lattice_tail_bound(self.dim, self.alpha, r).ok_or(KernelError::RadiusBelowInner {
            r,
            r0: (self.dim as f64).sqrt(),
        })
    }

    /// `c(d, alpha)` with `B(r) <= c * r^{-alpha}` for all `r >= R0`.
    pub fn tail_constant(&self) -> Option<f64> {
        let r0 = self.inner_radius;
        lattice_tail_bound(self.dim, self.alpha, r0).map(|b| b * r0.powf(self.alpha))
    }

    /// Mass of `|z|^{-(d+alpha)}` outside the sampler's support.
    pub fn discarded_mass(&self) -> f64 {
        let limit = match self.mode {
            KernelMode::ExactInfinite => EXACT_RADIUS_LIMIT,
            KernelMode::Truncated { r_max } => r_max,
        };
        lattice_tail_bound(self.dim, self.alpha, limit).unwrap_or(f64::INFINITY)
    }

    /// Uniformization rate `kappa_max * D >= sup_x lambda(x)`.
    pub fn lambda_upper(&self, kappa_max: f64) -> Result<f64, KernelError> {
        if !(kappa_max.is_finite() && kappa_max >= 0.0) {
            return Err(KernelError::NoRateBound);
        }
        Ok(kappa_max * self.total_mass)
    }

    /// Build parameters for run manifests.
    pub fn describe(&self) -> serde_json::Value {
        serde_json::json!({
            "dimension": self.dim,
            "alpha": self.alpha,
            "mode": self.mode,
            "inner_radius": self.inner_radius,
            "inner_atoms": self.atoms.len(),
            "inner_mass": self.inner_mass,
            "outer_mass_bound": self.outer_mass_bound(),
            "inflation": self.inflation(),
            "discarded_mass": self.discarded_mass(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Domain};

    fn brute_inner(dim: usize, alpha: f64, r: i64) -> f64 {
        // independent oracle: plain nested loops
        let mut s = 0.0;
        if dim == 1 {
            for a in -r..=r {
                if a != 0 {
                    s += (a.abs() as f64).powf(-(1.0 + alpha));
                }
            }
        } else {
            for a in -r..=r {
                for b in -r..=r {
                    let q = a * a + b * b;
                    if q > 0 && q <= r * r {
                        s += (q as f64).powf(-(2.0 + alpha) / 2.0);
                    }
                }
            }
        }
        s
    }

    #[test]
    fn two_shell_inner_mass() {
        let s = JumpKernelSampler::build(1, 1.0, KernelMode::Truncated { r_max: 2.0 }, 2.0).unwrap();
        assert!((s.inner_mass() - 2.5).abs() < 1e-15);
        assert_eq!(s.lambda_upper(1.0).unwrap(), 2.5);
        assert_eq!(s.lambda_upper(2.0).unwrap(), 5.0);
        let p1 = s.proposal_probability(&LatticePoint::new(&[1]));
        let p2 = s.proposal_probability(&LatticePoint::new(&[2]));
        assert_eq!(p1 / p2, 4.0);
        assert_eq!(s.proposal_probability(&LatticePoint::new(&[3])), 0.0);
    }

    #[test]
    fn unit_shell_in_two_dimensions() {
        let s = JumpKernelSampler::build(2, 1.3, KernelMode::Truncated { r_max: 1.0 }, 64.0).unwrap();
        assert_eq!(s.inner_atoms().len(), 4);
        assert!((s.inner_mass() - 4.0).abs() < 1e-15);
    }

    #[test]
    fn inner_mass_matches_enumeration() {
        let s = JumpKernelSampler::build(2, 1.0, KernelMode::ExactInfinite, 64.0).unwrap();
        let oracle = brute_inner(2, 1.0, 64);
        assert!((s.inner_mass() - oracle).abs() / oracle < 1e-12);
    }

    #[test]
    fn configuration_errors() {
        assert_eq!(
            JumpKernelSampler::build(1, 0.0, KernelMode::ExactInfinite, 64.0).unwrap_err(),
            KernelError::Alpha(0.0)
        );
        assert!(matches!(
            JumpKernelSampler::build(1, 2.5, KernelMode::ExactInfinite, 64.0),
            Err(KernelError::Alpha(_))
        ));
        assert!(matches!(
            JumpKernelSampler::build(4, 1.0, KernelMode::ExactInfinite, 3.0),
            Err(KernelError::Domination { .. })
        ));
        assert_eq!(
            JumpKernelSampler::build(1, 1.0, KernelMode::ExactInfinite, 64.0)
                .unwrap()
                .lambda_upper(f64::INFINITY),
            Err(KernelError::NoRateBound)
        );
    }

    #[test]
    fn tail_bound_properties() {
        let s = JumpKernelSampler::build(2, 1.0, KernelMode::ExactInfinite, 64.0).unwrap();
        let b100 = s.tail_mass_bound(100.0).unwrap();
        assert!(s.tail_mass_bound(200.0).unwrap() <= b100);
        assert!(s.tail_mass_bound(10.0).is_err());
        // oracle: enumerate 100 < |z| <= 2000 and add the continuum remainder 2*pi/2000
        let r_far = 2000i64;
        let mut explicit = 0.0;
        for a in -r_far..=r_far {
            for b in -r_far..=r_far {
                let q = a * a + b * b;
                if q > 100 * 100 && q <= r_far * r_far {
                    explicit += (q as f64).powf(-1.5);
                }
            }
        }
        let oracle = explicit + 2.0 * std::f64::consts::PI / r_far as f64;
        assert!(b100 >= oracle && b100 <= 2.0 * oracle, "{b100} vs {oracle}");
    }

    #[test]
    fn tail_bound_exponent() {
        let s = JumpKernelSampler::build(2, 1.0, KernelMode::ExactInfinite, 64.0).unwrap();
        let rs = [1e2, 3e2, 1e3, 3e3, 1e4];
        let pts: Vec<(f64, f64)> = rs
            .iter()
            .map(|&r: &f64| (r.ln(), s.tail_mass_bound(r).unwrap().ln()))
            .collect();
        let slope = crate::stats::ols_slope(&pts);
        assert!((slope + 1.0).abs() < 0.05, "slope {slope}");
        assert!(s.tail_constant().unwrap() > 2.0 * std::f64::consts::PI);
    }

    #[test]
    fn rate_bound_dominates_enumeration() {
        let s = JumpKernelSampler::build(2, 1.0, KernelMode::ExactInfinite, 64.0).unwrap();
        let oracle = brute_inner(2, 1.0, 2000);
        assert!(s.lambda_upper(1.0).unwrap() >= oracle);
        assert!(s.inflation() < 1.6);
    }

    #[test]
    fn default_inflation_is_moderate() {
        for d in 1..=5 {
            for &a in &[0.1, 1.0, 2.0] {
                let s = JumpKernelSampler::with_defaults(d, a, KernelMode::ExactInfinite).unwrap();
                assert!(s.inflation() < 2.6, "d={d} alpha={a} M={}", s.inflation());
                if d <= 2 {
                    assert!(s.inflation() < 1.6);
                }
            }
        }
    }

    #[test]
    fn envelope_dominates_cells() {
        // lattice weight <= M * integral of the envelope density over the cell,
        // cell integrals by tensor midpoint rule on random outer cells
        use rand::Rng;
        let mut rng = stream(5, Domain::Sampler, 0);
        for &(d, alpha) in &[(1usize, 0.7), (2, 1.5), (3, 2.0)] {
            let s = JumpKernelSampler::build(d, alpha, KernelMode::ExactInfinite, 8.0).unwrap();
            let m = s.inflation();
            let k = 6usize;
            let mut violations = 0;
            for _ in 0..(10_000 / d) {
                let mut z = LatticePoint::zero(d);
                loop {
                    for c in z.coords_mut() {
                        *c = rng.random_range(-40..=40);
                    }
                    if z.norm() > 8.0 {
                        break;
                    }
                }
                let mut mass = 0.0;
                let cells = k.pow(d as u32);
                for idx in 0..cells {
                    let mut rem = idx;
                    let mut w_sq = 0.0;
                    for &c in z.coords() {
                        let j = rem % k;
                        rem /= k;
                        let off = -0.5 + (j as f64 + 0.5) / k as f64;
                        let v = c as f64 + off;
                        w_sq += v * v;
                    }
                    mass += w_sq.powf(-(d as f64 + alpha) / 2.0) / cells as f64;
                }
                if s.weight(&z) > m * mass {
                    violations += 1;
                }
            }
            assert_eq!(violations, 0, "d={d}");
        }
    }

    #[test]
    fn same_stream_same_jumps() {
        let s = JumpKernelSampler::build(2, 0.7, KernelMode::ExactInfinite, 8.0).unwrap();
        let mut a = stream(1, Domain::Sampler, 3);
        let mut b = stream(1, Domain::Sampler, 3);
        for _ in 0..1000 {
            assert_eq!(s.sample_jump(&mut a), s.sample_jump(&mut b));
        }
    }

    #[test]
    fn truncated_support_is_respected() {
        let s = JumpKernelSampler::build(1, 1.0, KernelMode::Truncated { r_max: 40.0 }, 4.0).unwrap();
        let mut rng = stream(2, Domain::Sampler, 0);
        for _ in 0..200_000 {
            if let JumpDraw::Jump(z) = s.sample_jump(&mut rng) {
                assert!(z.coords()[0].abs() <= 40 && z.coords()[0] != 0);
            }
        }
        assert!(s.discarded_mass() >= 2.0 * (1.0 / 41.0));
    }
}
