//! Gauss-Legendre rules and sphere quadratures for d = 1, 2, 3.

use std::f64::consts::PI;

/// Gauss-Legendre rule on `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    /// `order`-point rule; nodes by Newton iteration on the three-term recurrence.
    pub fn new(order: usize) -> Self {
        assert!(order >= 1, "Gauss-Legendre order must be positive");
        let n = order;
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        for i in 0..n.div_ceil(2) {
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        Self { nodes, weights }
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `int_a^b f`.
    pub fn integrate(&self, a: f64, b: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        let mut acc = 0.0;
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            acc += w * f(mid + half * x);
        }
        acc * half
    }

    /// Composite rule over `panels` equal sub-intervals.
    pub fn composite(&self, a: f64, b: f64, panels: usize, mut f: impl FnMut(f64) -> f64) -> f64 {
        let h = (b - a) / panels as f64;
        (0..panels)
            .map(|k| {
                let lo = a + k as f64 * h;
                let hi = if k + 1 == panels { b } else { lo + h };
                self.integrate(lo, hi, &mut f)
            })
            .sum()
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let n = n as f64;
    let d = n * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Points and weights on the unit sphere `S^{d-1}`; weights sum to its area.
#[derive(Debug, Clone, PartialEq)]
pub struct SphereRule {
    dim: usize,
    points: Vec<[f64; 3]>,
    weights: Vec<f64>,
}

impl SphereRule {
    /// `depth` controls resolution: d=1 ignores it, d=2 uses `4 * depth`
    /// trapezoid angles, d=3 uses `depth` Gauss nodes in the polar cosine times
    /// `2 * depth` azimuths.
    pub fn new(dim: usize, depth: usize) -> Self {
        assert!((1..=3).contains(&dim), "sphere rules cover d = 1, 2, 3");
        let depth = depth.max(1);
        let mut points = Vec::new();
        let mut weights = Vec::new();
        match dim {
            1 => {
                points.push([1.0, 0.0, 0.0]);
                points.push([-1.0, 0.0, 0.0]);
                weights.extend([1.0, 1.0]);
            }
            2 => {
                let m = 4 * depth;
                let h = 2.0 * PI / m as f64;
                for k in 0..m {
                    let phi = (k as f64 + 0.5) * h;
                    points.push([phi.cos(), phi.sin(), 0.0]);
                    weights.push(h);
                }
            }
            _ => {
                let gl = GaussLegendre::new(depth);
                let m = 2 * depth;
                let h = 2.0 * PI / m as f64;
                for (u, wu) in gl.nodes().iter().zip(gl.weights()) {
                    let s = (1.0 - u * u).sqrt();
                    for k in 0..m {
                        let phi = (k as f64 + 0.5) * h;
                        points.push([s * phi.cos(), s * phi.sin(), *u]);
                        weights.push(wu * h);
                    }
                }
            }
        }
        Self {
            dim,
            points,
            weights,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// `(theta, weight)` pairs with `theta` of length `dim`.
    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        self.points
            .iter()
            .zip(&self.weights)
            .map(move |(p, w)| (&p[..self.dim], *w))
    }

    pub fn integrate(&self, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
        self.iter().map(|(t, w)| w * f(t)).sum()
    }
}
