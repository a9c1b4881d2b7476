//! Integer lattice points with a small fixed capacity.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::ops::{Add, Neg, Sub};

/// Largest supported lattice dimension.
pub const MAX_DIM: usize = 6;

/// A point of `Z^d`, stored inline so the walker never allocates.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct LatticePoint {
    coords: [i64; MAX_DIM],
    dim: u8,
}

impl LatticePoint {
    pub fn zero(dim: usize) -> Self {
        assert!((1..=MAX_DIM).contains(&dim), "dimension {dim} out of range");
        Self {
            coords: [0; MAX_DIM],
            dim: dim as u8,
        }
    }

    pub fn new(coords: &[i64]) -> Self {
        let mut p = Self::zero(coords.len());
        p.coords[..coords.len()].copy_from_slice(coords);
        p
    }

    /// Unit vector `e_axis`.
    pub fn unit(dim: usize, axis: usize) -> Self {
        let mut p = Self::zero(dim);
        p.coords[axis] = 1;
        p
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    #[inline]
    pub fn coords(&self) -> &[i64] {
        &self.coords[..self.dim as usize]
    }

    #[inline]
    pub fn coords_mut(&mut self) -> &mut [i64] {
        let d = self.dim as usize;
        &mut self.coords[..d]
    }

    #[inline]
    pub fn is_zero(&self) -> bool {
        self.coords().iter().all(|&c| c == 0)
    }

    /// Squared Euclidean norm, exact.
    #[inline]
    pub fn norm_sq(&self) -> i128 {
        self.coords().iter().map(|&c| (c as i128) * (c as i128)).sum()
    }

    /// Squared norm as a float. Exact while the squared norm stays below 2^53.
    #[inline]
    pub fn norm_sq_f64(&self) -> f64 {
        self.norm_sq() as f64
    }

    #[inline]
    pub fn norm(&self) -> f64 {
        self.norm_sq_f64().sqrt()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.coords().iter().map(|&c| c as f64).collect()
    }

    /// Coordinates divided by `n`, i.e. the point of `n^{-1} Z^d`.
    pub fn scaled(&self, n: f64) -> Vec<f64> {
        self.coords().iter().map(|&c| c as f64 / n).collect()
    }

    pub fn scale(&self, factor: i64) -> Self {
        let mut p = *self;
        p.coords_mut().iter_mut().for_each(|c| *c *= factor);
        p
    }

    /// Nearest lattice point to a real vector (coordinatewise rounding).
    pub fn round_from(x: &[f64]) -> Self {
        let mut p = Self::zero(x.len());
        for (c, &v) in p.coords_mut().iter_mut().zip(x) {
            *c = v.round() as i64;
        }
        p
    }
}

impl Add for LatticePoint {
    type Output = Self;
    #[inline]
    fn add(mut self, rhs: Self) -> Self {
        debug_assert_eq!(self.dim, rhs.dim);
        for i in 0..self.dim as usize {
            self.coords[i] += rhs.coords[i];
        }
        self
    }
}

impl Sub for LatticePoint {
    type Output = Self;
    #[inline]
    fn sub(mut self, rhs: Self) -> Self {
        debug_assert_eq!(self.dim, rhs.dim);
        for i in 0..self.dim as usize {
            self.coords[i] -= rhs.coords[i];
        }
        self
    }
}

impl Neg for LatticePoint {
    type Output = Self;
    #[inline]
    fn neg(mut self) -> Self {
        for i in 0..self.dim as usize {
            self.coords[i] = -self.coords[i];
        }
        self
    }
}

impl fmt::Debug for LatticePoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.coords())
    }
}

impl fmt::Display for LatticePoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.coords().iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

impl Serialize for LatticePoint {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.coords().serialize(s)
    }
}

impl<'de> Deserialize<'de> for LatticePoint {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = Vec::<i64>::deserialize(d)?;
        if v.is_empty() || v.len() > MAX_DIM {
            return Err(serde::de::Error::custom(format!(
                "lattice point must have 1..={MAX_DIM} coordinates"
            )));
        }
        Ok(Self::new(&v))
    }
}

/// Calls `visit` for every lattice point `z` with `0 < |z| <= radius`, in a
/// fixed lexicographic order.
pub fn for_each_in_ball(dim: usize, radius: f64, mut visit: impl FnMut(&LatticePoint)) {
    let r = radius.floor() as i64;
    let r2 = (radius * radius) as i128;
    let mut p = LatticePoint::zero(dim);
    fn rec(
        p: &mut LatticePoint,
        axis: usize,
        partial: i128,
        r: i64,
        r2: i128,
        visit: &mut dyn FnMut(&LatticePoint),
    ) {
        let dim = p.dim();
        if axis == dim {
            if partial > 0 {
                visit(p);
            }
            return;
        }
        let remaining = r2 - partial;
        if remaining < 0 {
            return;
        }
        let span = ((remaining as f64).sqrt().floor() as i64).min(r);
        for c in -span..=span {
            let sq = partial + (c as i128) * (c as i128);
            if sq > r2 {
                continue;
            }
            p.coords_mut()[axis] = c;
            rec(p, axis + 1, sq, r, r2, visit);
        }
        p.coords_mut()[axis] = 0;
    }
    rec(&mut p, 0, 0, r, r2, &mut visit);
}

/// Same as [`for_each_in_ball`] but restricted to `inner < |z| <= outer`.
pub fn for_each_in_shell(
    dim: usize,
    inner: f64,
    outer: f64,
    mut visit: impl FnMut(&LatticePoint),
) {
    let inner2 = inner * inner;
    for_each_in_ball(dim, outer, |z| {
        if z.norm_sq_f64() > inner2 {
            visit(z);
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ball_counts_match_brute_force() {
        let mut count = 0;
        for_each_in_ball(2, 5.0, |_| count += 1);
        let mut brute = 0;
        for a in -5i64..=5 {
            for b in -5i64..=5 {
                let s = a * a + b * b;
                if s > 0 && s <= 25 {
                    brute += 1;
                }
            }
        }
        assert_eq!(count, brute);

        let mut c3 = 0;
        for_each_in_ball(3, 1.0, |z| {
            assert_eq!(z.norm_sq(), 1);
            c3 += 1;
        });
        assert_eq!(c3, 6);
    }

    #[test]
    fn non_integer_radius() {
        let mut pts = Vec::new();
        for_each_in_ball(1, 2.5, |z| pts.push(z.coords()[0]));
        assert_eq!(pts, vec![-2, -1, 1, 2]);
    }

    #[test]
    fn arithmetic_and_rounding() {
        let a = LatticePoint::new(&[1, -2]);
        let b = LatticePoint::new(&[3, 5]);
        assert_eq!((a + b).coords(), &[4, 3]);
        assert_eq!((a - b).coords(), &[-2, -7]);
        assert_eq!((-a).coords(), &[-1, 2]);
        assert_eq!(LatticePoint::round_from(&[0.4, -1.6]).coords(), &[0, -2]);
        assert_eq!(a.norm_sq(), 5);
    }
}
