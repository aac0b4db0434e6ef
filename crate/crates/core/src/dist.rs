//! Probability vectors over a finite index set.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::{real, Real};

/// Absolute tolerance on the weight sum when constructing from user data.
pub const SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum DistError {
    #[error("distribution must have at least one weight")]
    Empty,
    #[error("weight at index {index} is negative: {value}")]
    Negative { index: usize, value: f64 },
    #[error("weights sum to {sum} (must be 1 within {SUM_TOLERANCE:e})")]
    NotNormalized { sum: f64 },
    #[error("weights sum to zero, cannot normalize")]
    ZeroMass,
}

/// A probability vector over `{0, …, n-1}`.
///
/// Weights are non-negative and sum to one. Construction tolerates an
/// absolute drift of [`SUM_TOLERANCE`] in the sum and renormalizes; all
/// internal arithmetic that can drift goes through [`Dist::from_unnormalized`]
/// so the sum stays machine-exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "Vec<T>", try_from = "Vec<T>")]
pub struct Dist<T: Real = f64> {
    weights: Vec<T>,
}

impl<T: Real> Dist<T> {
    /// Validates user-supplied weights: non-negative, summing to one within
    /// [`SUM_TOLERANCE`].
    pub fn new(weights: Vec<T>) -> Result<Self, DistError> {
        if weights.is_empty() {
            return Err(DistError::Empty);
        }
        for (index, &w) in weights.iter().enumerate() {
            if w < T::zero() || !w.is_finite() {
                return Err(DistError::Negative {
                    index,
                    value: w.to_f64().unwrap_or(f64::NAN),
                });
            }
        }
        let sum: T = weights.iter().copied().sum();
        if (sum - T::one()).abs() > real(SUM_TOLERANCE) {
            return Err(DistError::NotNormalized {
                sum: sum.to_f64().unwrap_or(f64::NAN),
            });
        }
        let mut dist = Dist { weights };
        dist.renormalize();
        Ok(dist)
    }

    /// Normalizes arbitrary non-negative weights with positive total mass.
    pub fn from_unnormalized(weights: Vec<T>) -> Result<Self, DistError> {
        if weights.is_empty() {
            return Err(DistError::Empty);
        }
        for (index, &w) in weights.iter().enumerate() {
            if w < T::zero() || !w.is_finite() {
                return Err(DistError::Negative {
                    index,
                    value: w.to_f64().unwrap_or(f64::NAN),
                });
            }
        }
        let sum: T = weights.iter().copied().sum();
        if sum <= T::zero() {
            return Err(DistError::ZeroMass);
        }
        let mut dist = Dist { weights };
        dist.renormalize();
        Ok(dist)
    }

    pub fn uniform(n: usize) -> Self {
        assert!(n > 0, "uniform distribution needs at least one point");
        let w = T::one() / real(n as f64);
        let mut dist = Dist {
            weights: vec![w; n],
        };
        dist.renormalize();
        dist
    }

    /// Point mass at index `at`.
    pub fn dirac(n: usize, at: usize) -> Self {
        assert!(at < n, "dirac index {at} out of range for {n} points");
        let mut weights = vec![T::zero(); n];
        weights[at] = T::one();
        Dist { weights }
    }

    /// Rescales so the weights sum to one exactly (not merely within a few
    /// ulps): after dividing by the total, any residual is folded into the
    /// largest weight until the sum reproduces `1.0` bit-exactly.
    fn renormalize(&mut self) {
        let sum: T = self.weights.iter().copied().sum();
        if sum != T::one() {
            for w in &mut self.weights {
                *w = *w / sum;
            }
        }
        for _ in 0..4 {
            let s: T = self.weights.iter().copied().sum();
            if s == T::one() {
                break;
            }
            let imax = self
                .weights
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, _)| i)
                .unwrap();
            self.weights[imax] += T::one() - s;
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weight(&self, i: usize) -> T {
        self.weights[i]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.weights
    }

    pub fn iter(&self) -> impl Iterator<Item = T> + '_ {
        self.weights.iter().copied()
    }

    /// Indices with strictly positive weight.
    pub fn support(&self) -> impl Iterator<Item = (usize, T)> + '_ {
        self.weights
            .iter()
            .copied()
            .enumerate()
            .filter(|&(_, w)| w > T::zero())
    }

    /// Expectation of a value vector under this distribution.
    pub fn dot(&self, values: &[T]) -> T {
        assert_eq!(values.len(), self.len(), "value vector length mismatch");
        self.weights
            .iter()
            .zip(values)
            .map(|(&w, &v)| w * v)
            .sum()
    }

    /// Total-variation distance, `sup_A |p(A) - q(A)| = ½ Σ |p_i - q_i|`.
    pub fn tv_distance(&self, other: &Self) -> T {
        assert_eq!(self.len(), other.len(), "distribution length mismatch");
        let half: T = real(0.5);
        half * self
            .weights
            .iter()
            .zip(&other.weights)
            .map(|(&a, &b)| (a - b).abs())
            .sum()
    }

    /// Convex combination `(1-alpha)·self + alpha·other`.
    pub fn mix(&self, other: &Self, alpha: T) -> Self {
        assert_eq!(self.len(), other.len(), "distribution length mismatch");
        let weights = self
            .weights
            .iter()
            .zip(&other.weights)
            .map(|(&a, &b)| (T::one() - alpha) * a + alpha * b)
            .collect();
        Dist::from_unnormalized(weights).expect("convex combination stays on the simplex")
    }

    /// Inverse-CDF sample using one uniform draw from `rng`.
    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: T = real(rng.random::<f64>());
        let mut acc = T::zero();
        for (i, &w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                return i;
            }
        }
        self.weights.len() - 1
    }
}

impl<T: Real> TryFrom<Vec<T>> for Dist<T> {
    type Error = DistError;

    fn try_from(weights: Vec<T>) -> Result<Self, Self::Error> {
        Dist::new(weights)
    }
}

impl<T: Real> From<Dist<T>> for Vec<T> {
    fn from(d: Dist<T>) -> Vec<T> {
        d.weights
    }
}

impl<T: Real> std::ops::Index<usize> for Dist<T> {
    type Output = T;

    fn index(&self, i: usize) -> &T {
        &self.weights[i]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_negative_weight() {
        let err = Dist::new(vec![0.5, -0.1, 0.6]).unwrap_err();
        assert!(matches!(err, DistError::Negative { index: 1, .. }));
    }

    #[test]
    fn rejects_bad_sum() {
        let err = Dist::new(vec![0.5, 0.4]).unwrap_err();
        assert!(matches!(err, DistError::NotNormalized { .. }));
    }

    #[test]
    fn tolerates_tiny_drift_and_renormalizes_exactly() {
        let d = Dist::new(vec![0.5 + 4e-10, 0.5]).unwrap();
        let sum: f64 = d.iter().sum();
        assert_eq!(sum, 1.0);
    }

    #[test]
    fn dirac_and_uniform() {
        let d = Dist::<f64>::dirac(3, 1);
        assert_eq!(d.as_slice(), &[0.0, 1.0, 0.0]);
        let u = Dist::<f64>::uniform(4);
        assert_eq!(u.weight(2), 0.25);
    }

    #[test]
    fn tv_distance_matches_hand_value() {
        let a: Dist = Dist::new(vec![0.7, 0.3]).unwrap();
        let b = Dist::new(vec![0.4, 0.6]).unwrap();
        assert!((a.tv_distance(&b) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn sampling_is_supported_on_positive_weights() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let d = Dist::new(vec![0.0, 1.0, 0.0]).unwrap();
        for _ in 0..50 {
            assert_eq!(d.sample(&mut rng), 1);
        }
    }

    #[test]
    fn serde_round_trip_is_a_plain_array() {
        let d = Dist::new(vec![0.25, 0.75]).unwrap();
        let json = serde_json::to_string(&d).unwrap();
        assert_eq!(json, "[0.25,0.75]");
        let back: Dist = serde_json::from_str(&json).unwrap();
        assert_eq!(back, d);
        assert!(serde_json::from_str::<Dist>("[0.5,0.4]").is_err());
    }
}
