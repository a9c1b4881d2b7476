//! Walker/Vose alias table.

use rand::Rng;

#[derive(Debug, Clone)]
pub struct AliasTable {
    threshold: Vec<f64>,
    alias: Vec<u32>,
}

impl AliasTable {
    /// Builds a table for the (unnormalized, strictly positive) weights.
    pub fn new(weights: &[f64]) -> Self {
        let n = weights.len();
        assert!(n > 0 && n < u32::MAX as usize, "alias table needs 1..2^32 weights");
        let total: f64 = weights.iter().sum();
        let mut scaled: Vec<f64> = weights.iter().map(|w| w * n as f64 / total).collect();
        let mut threshold = vec![1.0; n];
        let mut alias: Vec<u32> = (0..n as u32).collect();
        let (mut small, mut large): (Vec<usize>, Vec<usize>) =
            (0..n).partition(|&i| scaled[i] < 1.0);
        while let (Some(s), Some(&l)) = (small.pop(), large.last()) {
            threshold[s] = scaled[s];
            alias[s] = l as u32;
            scaled[l] -= 1.0 - scaled[s];
            if scaled[l] < 1.0 {
                large.pop();
                small.push(l);
            }
        }
        // leftovers are 1 up to rounding
        for i in small.into_iter().chain(large) {
            threshold[i] = 1.0;
        }
        Self { threshold, alias }
    }

    pub fn len(&self) -> usize {
        self.threshold.len()
    }

    pub fn is_empty(&self) -> bool {
        self.threshold.is_empty()
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let n = self.threshold.len();
        let i = rng.random_range(0..n);
        if rng.random::<f64>() < self.threshold[i] {
            i
        } else {
            self.alias[i] as usize
        }
    }

    /// Exact selection probability of every index implied by the table.
    pub fn probabilities(&self) -> Vec<f64> {
        let n = self.len();
        let mut p = vec![0.0; n];
        for i in 0..n {
            p[i] += self.threshold[i] / n as f64;
            p[self.alias[i] as usize] += (1.0 - self.threshold[i]) / n as f64;
        }
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn reproduces_weights_by_enumeration() {
        let w = [1.0, 0.25, 0.25, 1.0, 3.5];
        let t = AliasTable::new(&w);
        let total: f64 = w.iter().sum();
        for (p, w) in t.probabilities().iter().zip(w) {
            assert!((p - w / total).abs() < 1e-15);
        }
    }

    proptest! {
        #[test]
        fn probabilities_match(ws in proptest::collection::vec(1e-6f64..10.0, 1..200)) {
            let t = AliasTable::new(&ws);
            let total: f64 = ws.iter().sum();
            for (p, w) in t.probabilities().iter().zip(&ws) {
                prop_assert!((p - w / total).abs() < 1e-12);
            }
        }
    }
}
