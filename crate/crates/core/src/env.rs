//! Random environments `kappa(x, z)` on `Z^d x Z^d_0`.
//!
//! A field is never stored. Each value is a keyed hash of the master seed, the
//! site `x` and the canonical half-space representative of `z`, pushed through
//! the inverse CDF of a unit-mean fluctuation law and multiplied by the
//! degree-0 homogeneous mean field `K(x, z)`. Balance `kappa(x,z) = kappa(x,-z)`
//! is therefore exact, and distinct canonical keys get disjoint streams.

use crate::lattice::{LatticePoint, MAX_DIM};
use crate::rng::{unit_f64, Domain, KeyHasher};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma, gamma_lr};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("zero displacement")]
    ZeroDisplacement,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid environment: {0}")]
    Invalid(String),
    #[error("environment configuration: {0}")]
    Parse(String),
}

/// Maps `z != 0` to its representative in the half-space `Z^d_{+,*}` (first
/// nonzero coordinate positive) and reports whether it was negated.
pub fn canonical_halfspace(z: &LatticePoint) -> Result<(LatticePoint, bool), EnvError> {
    match z.coords().iter().find(|&&c| c != 0) {
        None => Err(EnvError::ZeroDisplacement),
        Some(&c) if c > 0 => Ok((*z, false)),
        Some(_) => Ok((-*z, true)),
    }
}

/// Bounded continuous mean field `K(x, z)`, homogeneous of degree 0 in `(x, z)`
/// and even in `z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MeanField {
    /// `K = value`.
    Constant { value: f64 },
    /// `K = base + amplitude * (z_axis / |z|)^2`.
    AxisAnisotropic {
        base: f64,
        amplitude: f64,
        axis: usize,
    },
    /// `K = base + amplitude * |x|^2 / (|x|^2 + |z|^2)`.
    RadialRatio { base: f64, amplitude: f64 },
}

impl MeanField {
    pub fn validate(&self, dimension: usize) -> Result<(), EnvError> {
        let ok = |v: f64, what: &str| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(EnvError::Invalid(format!("mean field {what} must be finite")))
            }
        };
        match *self {
            MeanField::Constant { value } => {
                ok(value, "value")?;
                if value < 0.0 {
                    return Err(EnvError::Invalid("mean field must be nonnegative".into()));
                }
            }
            MeanField::AxisAnisotropic {
                base,
                amplitude,
                axis,
            } => {
                ok(base, "base")?;
                ok(amplitude, "amplitude")?;
                if axis >= dimension {
                    return Err(EnvError::Invalid(format!(
                        "anisotropy axis {axis} out of range for d={dimension}"
                    )));
                }
                if base < 0.0 || base + amplitude < 0.0 {
                    return Err(EnvError::Invalid("mean field must be nonnegative".into()));
                }
            }
            MeanField::RadialRatio { base, amplitude } => {
                ok(base, "base")?;
                ok(amplitude, "amplitude")?;
                if base < 0.0 || base + amplitude < 0.0 {
                    return Err(EnvError::Invalid("mean field must be nonnegative".into()));
                }
            }
        }
        Ok(())
    }

    /// Evaluation on exact squared norms; shared by the real and lattice paths.
    #[inline]
    fn rate_from_squares(&self, x_sq: f64, z_sq: f64, z_axis_sq: impl FnOnce(usize) -> f64) -> f64 {
        match *self {
            MeanField::Constant { value } => value,
            MeanField::AxisAnisotropic {
                base,
                amplitude,
                axis,
            } => base + amplitude * (z_axis_sq(axis) / z_sq),
            MeanField::RadialRatio { base, amplitude } => {
                base + amplitude * (x_sq / (x_sq + z_sq))
            }
        }
    }

    /// `K(x, z)` for real arguments, `z != 0`.
    pub fn eval(&self, x: &[f64], z: &[f64]) -> f64 {
        let x_sq: f64 = x.iter().map(|v| v * v).sum();
        let z_sq: f64 = z.iter().map(|v| v * v).sum();
        self.rate_from_squares(x_sq, z_sq, |a| z[a] * z[a])
    }

    /// `K(x, z)` on lattice arguments. Squared norms are formed in integer
    /// arithmetic so `K(lx, lz) = K(x, z)` holds bit-exactly.
    #[inline]
    pub fn eval_lattice(&self, x: &LatticePoint, z: &LatticePoint) -> f64 {
        match self {
            MeanField::Constant { value } => *value,
            _ => {
                let x_sq = x.norm_sq() as f64;
                let z_sq = z.norm_sq() as f64;
                self.rate_from_squares(x_sq, z_sq, |a| {
                    let c = z.coords()[a] as i128;
                    (c * c) as f64
                })
            }
        }
    }

    /// Angular profile `K(theta)` of an x-independent field; for x-dependent
    /// fields this is `K(0, theta)`.
    pub fn angular(&self, theta: &[f64]) -> f64 {
        let zero = [0.0; MAX_DIM];
        self.eval(&zero[..theta.len()], theta)
    }

    pub fn sup(&self) -> f64 {
        match *self {
            MeanField::Constant { value } => value,
            MeanField::AxisAnisotropic {
                base, amplitude, ..
            }
            | MeanField::RadialRatio { base, amplitude } => base.max(base + amplitude),
        }
    }

    pub fn inf(&self) -> f64 {
        match *self {
            MeanField::Constant { value } => value,
            MeanField::AxisAnisotropic {
                base, amplitude, ..
            }
            | MeanField::RadialRatio { base, amplitude } => base.min(base + amplitude),
        }
    }

    pub fn is_x_independent(&self) -> bool {
        !matches!(self, MeanField::RadialRatio { amplitude, .. } if *amplitude != 0.0)
    }
}

/// Unit-mean multiplicative fluctuation law. `kappa = K(x,z) * xi` with
/// `E[xi] = 1`, normalized analytically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Fluctuation {
    Constant,
    Uniform {
        low: f64,
        high: f64,
    },
    /// `high` with probability `p_high`, otherwise `low`.
    BernoulliMixture {
        p_high: f64,
        low: f64,
        high: f64,
    },
    /// Pareto with tail index `tail_index` on `[1, cap]`.
    BoundedPareto {
        tail_index: f64,
        cap: f64,
    },
    /// Weibull with shape `eta` and tail `exp(-2 c_star y^eta)`, conditioned
    /// on `y <= cap`. Satisfies `E exp(c_star y^eta) < inf` before truncation.
    TruncatedExpMoment {
        eta: f64,
        c_star: f64,
        cap: f64,
    },
}

impl Fluctuation {
    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |m: &str| Err(EnvError::Invalid(m.to_string()));
        match *self {
            Fluctuation::Constant => Ok(()),
            Fluctuation::Uniform { low, high } => {
                if !(low >= 0.0 && high > low && high.is_finite()) {
                    return bad("uniform fluctuation needs 0 <= low < high < inf");
                }
                Ok(())
            }
            Fluctuation::BernoulliMixture { p_high, low, high } => {
                if !(0.0..=1.0).contains(&p_high) || !(low >= 0.0 && high >= low) {
                    return bad("bernoulli mixture needs p in [0,1] and 0 <= low <= high");
                }
                if p_high * high + (1.0 - p_high) * low <= 0.0 {
                    return bad("bernoulli mixture has zero mean");
                }
                Ok(())
            }
            Fluctuation::BoundedPareto { tail_index, cap } => {
                if !(tail_index > 0.0 && cap > 1.0 && cap.is_finite()) {
                    return bad("bounded pareto needs tail_index > 0 and 1 < cap < inf");
                }
                Ok(())
            }
            Fluctuation::TruncatedExpMoment { eta, c_star, cap } => {
                if !(eta > 0.0 && c_star > 0.0 && cap > 0.0 && cap.is_finite()) {
                    return bad("exponential-moment family needs eta, c_star, cap > 0");
                }
                Ok(())
            }
        }
    }

    pub fn is_deterministic(&self) -> bool {
        matches!(self, Fluctuation::Constant)
            || matches!(self, Fluctuation::BernoulliMixture { p_high, low, high }
                if *p_high == 0.0 || *p_high == 1.0 || low == high)
    }

    fn weibull_scale(eta: f64, c_star: f64) -> f64 {
        (2.0 * c_star).powf(-1.0 / eta)
    }

    /// Inverse CDF of the raw (unnormalized) law.
    fn raw_quantile(&self, u: f64) -> f64 {
        match *self {
            Fluctuation::Constant => 1.0,
            Fluctuation::Uniform { low, high } => low + (high - low) * u,
            Fluctuation::BernoulliMixture { p_high, low, high } => {
                if u < p_high {
                    high
                } else {
                    low
                }
            }
            Fluctuation::BoundedPareto { tail_index, cap } => {
                let span = 1.0 - cap.powf(-tail_index);
                (1.0 - u * span).powf(-1.0 / tail_index).min(cap)
            }
            Fluctuation::TruncatedExpMoment { eta, c_star, cap } => {
                let scale = Self::weibull_scale(eta, c_star);
                let mass = -(-(cap / scale).powf(eta)).exp_m1();
                let v = -(-u * mass).ln_1p();
                (scale * v.powf(1.0 / eta)).min(cap)
            }
        }
    }

    fn raw_max(&self) -> f64 {
        match *self {
            Fluctuation::Constant => 1.0,
            Fluctuation::Uniform { high, .. } => high,
            Fluctuation::BernoulliMixture { p_high, low, high } => {
                if p_high > 0.0 {
                    high
                } else {
                    low
                }
            }
            Fluctuation::BoundedPareto { cap, .. } => cap,
            Fluctuation::TruncatedExpMoment { cap, .. } => cap,
        }
    }

    /// `E[Y^q]` of the raw law, `q > 0`.
    fn raw_moment(&self, q: f64) -> f64 {
        match *self {
            Fluctuation::Constant => 1.0,
            Fluctuation::Uniform { low, high } => {
                (high.powf(q + 1.0) - low.powf(q + 1.0)) / ((q + 1.0) * (high - low))
            }
            Fluctuation::BernoulliMixture { p_high, low, high } => {
                p_high * high.powf(q) + (1.0 - p_high) * low.powf(q)
            }
            Fluctuation::BoundedPareto { tail_index: p, cap } => {
                let norm = p / (1.0 - cap.powf(-p));
                if (q - p).abs() < 1e-12 {
                    norm * cap.ln()
                } else {
                    norm * (cap.powf(q - p) - 1.0) / (q - p)
                }
            }
            Fluctuation::TruncatedExpMoment { eta, c_star, cap } => {
                let scale = Self::weibull_scale(eta, c_star);
                let s = (cap / scale).powf(eta);
                let mass = -(-s).exp_m1();
                let a = 1.0 + q / eta;
                scale.powf(q) * gamma(a) * gamma_lr(a, s) / mass
            }
        }
    }

    /// Unit-mean multiplier for a uniform variate `u` in `[0,1)`.
    #[inline]
    pub fn multiplier(&self, u: f64, raw_mean: f64) -> f64 {
        self.raw_quantile(u) / raw_mean
    }

    pub fn raw_mean(&self) -> f64 {
        self.raw_moment(1.0)
    }

    /// `E[xi^q]` of the unit-mean multiplier.
    pub fn moment(&self, q: f64) -> f64 {
        self.raw_moment(q) / self.raw_mean().powf(q)
    }

    pub fn variance(&self) -> f64 {
        (self.moment(2.0) - 1.0).max(0.0)
    }

    pub fn max_multiplier(&self) -> f64 {
        self.raw_max() / self.raw_mean()
    }
}

/// Everything needed to regenerate a field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentSpec {
    pub dimension: usize,
    pub alpha: f64,
    #[serde(default = "default_true")]
    pub balanced: bool,
    pub mean_field: MeanField,
    pub fluctuation: Fluctuation,
    pub master_seed: u64,
    /// Optional floor `K >= mean_floor` applied to the mean field.
    #[serde(default)]
    pub mean_floor: f64,
}

fn default_true() -> bool {
    true
}

impl EnvironmentSpec {
    /// `kappa == 1` everywhere.
    pub fn unit(dimension: usize, alpha: f64) -> Self {
        Self {
            dimension,
            alpha,
            balanced: true,
            mean_field: MeanField::Constant { value: 1.0 },
            fluctuation: Fluctuation::Constant,
            master_seed: 0,
            mean_floor: 0.0,
        }
    }

    pub fn uniform(dimension: usize, alpha: f64, low: f64, high: f64, seed: u64) -> Self {
        Self {
            fluctuation: Fluctuation::Uniform { low, high },
            master_seed: seed,
            ..Self::unit(dimension, alpha)
        }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        if !(1..=MAX_DIM).contains(&self.dimension) {
            return Err(EnvError::Invalid(format!(
                "dimension must be in 1..={MAX_DIM}"
            )));
        }
        if !(self.alpha > 0.0 && self.alpha <= 2.0) {
            return Err(EnvError::Invalid(format!(
                "alpha = {} outside (0, 2]",
                self.alpha
            )));
        }
        if !(self.mean_floor >= 0.0 && self.mean_floor.is_finite()) {
            return Err(EnvError::Invalid("mean_floor must be finite and >= 0".into()));
        }
        self.mean_field.validate(self.dimension)?;
        self.fluctuation.validate()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("environment spec serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self, EnvError> {
        toml::from_str(text).map_err(|e| EnvError::Parse(e.to_string()))
    }
}

/// A validated, queryable environment.
#[derive(Debug, Clone)]
pub struct KappaField {
    spec: EnvironmentSpec,
    raw_mean: f64,
    kappa_max: f64,
}

impl KappaField {
    pub fn new(spec: EnvironmentSpec) -> Result<Self, EnvError> {
        spec.validate()?;
        let raw_mean = spec.fluctuation.raw_mean();
        let k_sup = spec.mean_field.sup().max(spec.mean_floor);
        let kappa_max = k_sup * spec.fluctuation.max_multiplier();
        Ok(Self {
            spec,
            raw_mean,
            kappa_max,
        })
    }

    pub fn spec(&self) -> &EnvironmentSpec {
        &self.spec
    }

    pub fn dimension(&self) -> usize {
        self.spec.dimension
    }

    pub fn alpha(&self) -> f64 {
        self.spec.alpha
    }

    pub fn is_balanced(&self) -> bool {
        self.spec.balanced
    }

    /// Pointwise upper bound on `kappa`. Every built-in family is bounded.
    pub fn kappa_max(&self) -> f64 {
        self.kappa_max
    }

    /// True when `kappa = K` exactly.
    pub fn is_deterministic(&self) -> bool {
        self.spec.fluctuation.is_deterministic()
    }

    fn check(&self, x: &LatticePoint, z: &LatticePoint) -> Result<(), EnvError> {
        for p in [x, z] {
            if p.dim() != self.spec.dimension {
                return Err(EnvError::DimensionMismatch {
                    expected: self.spec.dimension,
                    got: p.dim(),
                });
            }
        }
        if z.is_zero() {
            return Err(EnvError::ZeroDisplacement);
        }
        Ok(())
    }

    /// `E[kappa(x, z)] = max(K(x, z), floor)`.
    #[inline]
    pub fn mean(&self, x: &LatticePoint, z: &LatticePoint) -> f64 {
        self.spec.mean_field.eval_lattice(x, z).max(self.spec.mean_floor)
    }

    pub fn mean_kappa(&self, x: &LatticePoint, z: &LatticePoint) -> Result<f64, EnvError> {
        self.check(x, z)?;
        Ok(self.mean(x, z))
    }

    #[inline]
    fn key(&self, x: &LatticePoint, z: &LatticePoint) -> KeyHasher {
        if self.spec.balanced {
            let (zs, _) = canonical_halfspace(z).expect("nonzero displacement");
            KeyHasher::new(self.spec.master_seed, Domain::EnvBalanced)
                .absorb_all(x.coords())
                .absorb_all(zs.coords())
        } else {
            KeyHasher::new(self.spec.master_seed, Domain::EnvIndependent)
                .absorb_all(x.coords())
                .absorb_all(z.coords())
        }
    }

    /// Hot-path accessor; `z` must be nonzero and of the field's dimension.
    #[inline]
    pub fn kappa(&self, x: &LatticePoint, z: &LatticePoint) -> f64 {
        debug_assert!(!z.is_zero());
        let mean = self.mean(x, z);
        if self.spec.fluctuation == Fluctuation::Constant || mean == 0.0 {
            return mean;
        }
        let u = unit_f64(self.key(x, z).finish());
        mean * self.spec.fluctuation.multiplier(u, self.raw_mean)
    }

    pub fn kappa_at(&self, x: &LatticePoint, z: &LatticePoint) -> Result<f64, EnvError> {
        self.check(x, z)?;
        Ok(self.kappa(x, z))
    }

    /// Monte Carlo check of the mean contract at one `(x, z)`, using
    /// `sample_count` independent sub-seeded draws of the fluctuation.
    pub fn empirical_mean_check(
        &self,
        sample_count: usize,
        x: &LatticePoint,
        z: &LatticePoint,
    ) -> Result<EmpiricalMean, EnvError> {
        self.check(x, z)?;
        if sample_count < 2 {
            return Err(EnvError::Invalid("sample_count must be at least 2".into()));
        }
        let target = self.mean(x, z);
        let base = self.key(x, z).finish();
        let fl = &self.spec.fluctuation;
        let draw = |i: usize| {
            let u = unit_f64(
                KeyHasher::new(self.spec.master_seed, Domain::EmpiricalMean)
                    .absorb(base)
                    .absorb(i as u64)
                    .finish(),
            );
            target * fl.multiplier(u, self.raw_mean)
        };
        let n = sample_count as f64;
        let (mut mean, mut m2) = (0.0, 0.0);
        for i in 0..sample_count {
            // Welford
            let v = draw(i);
            let delta = v - mean;
            mean += delta / (i + 1) as f64;
            m2 += delta * (v - mean);
        }
        let stderr = (m2 / (n - 1.0)).sqrt() / n.sqrt();
        let pass = if self.spec.fluctuation == Fluctuation::Constant {
            mean == target && stderr == 0.0
        } else {
            (mean - target).abs() <= 4.0 * stderr
        };
        Ok(EmpiricalMean {
            mean,
            stderr,
            target,
            pass,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EmpiricalMean {
    pub mean: f64,
    pub stderr: f64,
    pub target: f64,
    pub pass: bool,
}
