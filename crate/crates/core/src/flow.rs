//! Time-indexed measure flows, Markov policies and state-action flows.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dist::{Dist, DistError};
use crate::{real, Real};

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("flow must contain at least one time step")]
    Empty,
    #[error("time step {t}: {source}")]
    Step { t: usize, source: DistError },
    #[error("time step {t}, state {x}: {source}")]
    Row { t: usize, x: usize, source: DistError },
    #[error("inconsistent dimensions at time step {t}")]
    Shape { t: usize },
}

/// A state-measure flow `(μ_t)` for `t = 0..=horizon`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "Vec<Vec<T>>", try_from = "Vec<Vec<T>>")]
pub struct MeasureFlow<T: Real = f64> {
    mus: Vec<Dist<T>>,
}

impl<T: Real> MeasureFlow<T> {
    pub fn new(mus: Vec<Dist<T>>) -> Result<Self, FlowError> {
        if mus.is_empty() {
            return Err(FlowError::Empty);
        }
        let nx = mus[0].len();
        for (t, mu) in mus.iter().enumerate() {
            if mu.len() != nx {
                return Err(FlowError::Shape { t });
            }
        }
        Ok(MeasureFlow { mus })
    }

    /// Constant flow `μ_t = μ` for `t = 0..=horizon`.
    pub fn constant(mu: Dist<T>, horizon: usize) -> Self {
        MeasureFlow {
            mus: vec![mu; horizon + 1],
        }
    }

    pub fn horizon(&self) -> usize {
        self.mus.len() - 1
    }

    pub fn len(&self) -> usize {
        self.mus.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn nx(&self) -> usize {
        self.mus[0].len()
    }

    pub fn at(&self, t: usize) -> &Dist<T> {
        &self.mus[t]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Dist<T>> {
        self.mus.iter()
    }

    /// Largest per-step total-variation distance to another flow of the same
    /// length.
    pub fn tv_distance(&self, other: &Self) -> T {
        assert_eq!(self.len(), other.len(), "flow length mismatch");
        self.mus
            .iter()
            .zip(&other.mus)
            .map(|(a, b)| a.tv_distance(b))
            .fold(T::zero(), T::max)
    }
}

impl<T: Real> TryFrom<Vec<Vec<T>>> for MeasureFlow<T> {
    type Error = FlowError;

    fn try_from(rows: Vec<Vec<T>>) -> Result<Self, FlowError> {
        let mus = rows
            .into_iter()
            .enumerate()
            .map(|(t, row)| Dist::new(row).map_err(|source| FlowError::Step { t, source }))
            .collect::<Result<Vec<_>, _>>()?;
        MeasureFlow::new(mus)
    }
}

impl<T: Real> From<MeasureFlow<T>> for Vec<Vec<T>> {
    fn from(f: MeasureFlow<T>) -> Vec<Vec<T>> {
        f.mus.into_iter().map(Vec::from).collect()
    }
}

/// A Markov policy: for each time step a stochastic kernel action | state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "Vec<Vec<Vec<T>>>", try_from = "Vec<Vec<Vec<T>>>")]
pub struct MarkovPolicy<T: Real = f64> {
    /// `steps[t][x]` is the action distribution at time `t` in state `x`.
    steps: Vec<Vec<Dist<T>>>,
}

impl<T: Real> MarkovPolicy<T> {
    pub fn new(steps: Vec<Vec<Dist<T>>>) -> Result<Self, FlowError> {
        if steps.is_empty() {
            return Err(FlowError::Empty);
        }
        let nx = steps[0].len();
        let na = steps[0].first().map(Dist::len).unwrap_or(0);
        for (t, rows) in steps.iter().enumerate() {
            if rows.len() != nx || rows.iter().any(|r| r.len() != na) {
                return Err(FlowError::Shape { t });
            }
        }
        Ok(MarkovPolicy { steps })
    }

    /// Uniform randomization over actions at every time step and state.
    pub fn uniform(len: usize, nx: usize, na: usize) -> Self {
        let rows: Vec<Dist<T>> = (0..nx).map(|_| Dist::uniform(na)).collect();
        MarkovPolicy {
            steps: vec![rows; len],
        }
    }

    /// Stationary policy repeating the given per-state action distributions.
    pub fn stationary(rows: Vec<Dist<T>>, len: usize) -> Self {
        assert!(len > 0 && !rows.is_empty());
        MarkovPolicy {
            steps: vec![rows; len],
        }
    }

    /// Deterministic policy from an action table `choices[t][x]`.
    pub fn deterministic(choices: &[Vec<usize>], na: usize) -> Self {
        let steps = choices
            .iter()
            .map(|row| row.iter().map(|&a| Dist::dirac(na, a)).collect())
            .collect();
        MarkovPolicy { steps }
    }

    /// Number of time steps the policy is defined for.
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn nx(&self) -> usize {
        self.steps[0].len()
    }

    pub fn na(&self) -> usize {
        self.steps[0][0].len()
    }

    /// Action distribution at time `t` in state `x`.
    pub fn at(&self, t: usize, x: usize) -> &Dist<T> {
        &self.steps[t][x]
    }

    pub fn step(&self, t: usize) -> &[Dist<T>] {
        &self.steps[t]
    }

    /// True when every step repeats the first one.
    pub fn is_stationary(&self) -> bool {
        self.steps.iter().all(|rows| *rows == self.steps[0])
    }

    /// The action with full mass, if the policy is deterministic at `(t, x)`.
    pub fn pure_action(&self, t: usize, x: usize) -> Option<usize> {
        let row = self.at(t, x);
        let mut hit = None;
        for (a, w) in row.support() {
            if w == T::one() {
                hit = Some(a);
            } else {
                return None;
            }
        }
        hit
    }
}

impl<T: Real> TryFrom<Vec<Vec<Vec<T>>>> for MarkovPolicy<T> {
    type Error = FlowError;

    fn try_from(steps: Vec<Vec<Vec<T>>>) -> Result<Self, FlowError> {
        let steps = steps
            .into_iter()
            .enumerate()
            .map(|(t, rows)| {
                rows.into_iter()
                    .enumerate()
                    .map(|(x, row)| Dist::new(row).map_err(|source| FlowError::Row { t, x, source }))
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        MarkovPolicy::new(steps)
    }
}

impl<T: Real> From<MarkovPolicy<T>> for Vec<Vec<Vec<T>>> {
    fn from(p: MarkovPolicy<T>) -> Vec<Vec<Vec<T>>> {
        p.steps
            .into_iter()
            .map(|rows| rows.into_iter().map(Vec::from).collect())
            .collect()
    }
}

/// A joint distribution on the product of states and actions, stored row-major
/// (`w[x * na + a]`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointDist<T: Real = f64> {
    nx: usize,
    na: usize,
    w: Vec<T>,
}

impl<T: Real> JointDist<T> {
    pub fn new(nx: usize, na: usize, w: Vec<T>) -> Result<Self, DistError> {
        assert_eq!(w.len(), nx * na, "joint weight vector has wrong length");
        // Reuse Dist validation, then keep the flat vector.
        let d = Dist::new(w)?;
        Ok(JointDist {
            nx,
            na,
            w: d.into(),
        })
    }

    /// Product measure `μ ⊗ π`: `ν(x, a) = μ(x)·π(a|x)`.
    pub fn from_product(mu: &Dist<T>, policy_rows: &[Dist<T>]) -> Self {
        let nx = mu.len();
        assert_eq!(policy_rows.len(), nx, "one policy row per state required");
        let na = policy_rows[0].len();
        let mut w = Vec::with_capacity(nx * na);
        for x in 0..nx {
            for a in 0..na {
                w.push(mu.weight(x) * policy_rows[x].weight(a));
            }
        }
        let d = Dist::from_unnormalized(w).expect("product of distributions has unit mass");
        JointDist {
            nx,
            na,
            w: d.into(),
        }
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn na(&self) -> usize {
        self.na
    }

    pub fn weight(&self, x: usize, a: usize) -> T {
        self.w[x * self.na + a]
    }

    pub fn support(&self) -> impl Iterator<Item = (usize, usize, T)> + '_ {
        let na = self.na;
        self.w
            .iter()
            .copied()
            .enumerate()
            .filter(|&(_, w)| w > T::zero())
            .map(move |(i, w)| (i / na, i % na, w))
    }

    /// Marginal on the state coordinate (row sums).
    pub fn x_marginal(&self) -> Dist<T> {
        let weights = (0..self.nx)
            .map(|x| (0..self.na).map(|a| self.weight(x, a)).sum())
            .collect();
        Dist::from_unnormalized(weights).expect("marginal of a distribution has unit mass")
    }

    pub fn tv_distance(&self, other: &Self) -> T {
        assert_eq!(self.w.len(), other.w.len(), "joint shape mismatch");
        let half: T = real(0.5);
        half * self
            .w
            .iter()
            .zip(&other.w)
            .map(|(&a, &b)| (a - b).abs())
            .sum()
    }

    pub fn mix(&self, other: &Self, alpha: T) -> Self {
        assert_eq!(self.w.len(), other.w.len(), "joint shape mismatch");
        let w: Vec<T> = self
            .w
            .iter()
            .zip(&other.w)
            .map(|(&a, &b)| (T::one() - alpha) * a + alpha * b)
            .collect();
        let d = Dist::from_unnormalized(w).expect("convex combination stays on the simplex");
        JointDist {
            nx: self.nx,
            na: self.na,
            w: d.into(),
        }
    }

    /// Conditional action distributions `π(·|x) = ν(x,·)/ν₁(x)`. States with
    /// zero marginal mass take the corresponding `fallback` row (the
    /// disintegration is arbitrary there).
    pub fn disintegrate(&self, fallback: &[Dist<T>]) -> Vec<Dist<T>> {
        assert_eq!(fallback.len(), self.nx, "one fallback row per state");
        (0..self.nx)
            .map(|x| {
                let row: Vec<T> = (0..self.na).map(|a| self.weight(x, a)).collect();
                match Dist::from_unnormalized(row) {
                    Ok(d) => d,
                    Err(_) => fallback[x].clone(),
                }
            })
            .collect()
    }
}

/// A state-action measure flow `(ν_t)` for `t = 0..=horizon`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateActionFlow<T: Real = f64> {
    nus: Vec<JointDist<T>>,
}

impl<T: Real> StateActionFlow<T> {
    pub fn new(nus: Vec<JointDist<T>>) -> Result<Self, FlowError> {
        if nus.is_empty() {
            return Err(FlowError::Empty);
        }
        let (nx, na) = (nus[0].nx(), nus[0].na());
        for (t, nu) in nus.iter().enumerate() {
            if nu.nx() != nx || nu.na() != na {
                return Err(FlowError::Shape { t });
            }
        }
        Ok(StateActionFlow { nus })
    }

    /// `ν_t = μ_t ⊗ π_t` for each step of a measure flow / policy pair.
    pub fn from_flow_and_policy(flow: &MeasureFlow<T>, policy: &MarkovPolicy<T>) -> Self {
        assert!(
            policy.len() >= flow.len(),
            "policy must cover every flow step"
        );
        let nus = flow
            .iter()
            .enumerate()
            .map(|(t, mu)| JointDist::from_product(mu, policy.step(t)))
            .collect();
        StateActionFlow { nus }
    }

    pub fn horizon(&self) -> usize {
        self.nus.len() - 1
    }

    pub fn len(&self) -> usize {
        self.nus.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn at(&self, t: usize) -> &JointDist<T> {
        &self.nus[t]
    }

    pub fn iter(&self) -> impl Iterator<Item = &JointDist<T>> {
        self.nus.iter()
    }

    /// Per-step state marginals as a measure flow.
    pub fn marginal_flow(&self) -> MeasureFlow<T> {
        MeasureFlow {
            mus: self.nus.iter().map(JointDist::x_marginal).collect(),
        }
    }

    /// Largest per-step total-variation distance to another flow.
    pub fn tv_distance(&self, other: &Self) -> T {
        assert_eq!(self.len(), other.len(), "flow length mismatch");
        self.nus
            .iter()
            .zip(&other.nus)
            .map(|(a, b)| a.tv_distance(b))
            .fold(T::zero(), T::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_and_marginal_round_trip() {
        let mu: Dist = Dist::new(vec![0.3, 0.7]).unwrap();
        let rows = vec![
            Dist::new(vec![0.5, 0.5]).unwrap(),
            Dist::new(vec![0.2, 0.8]).unwrap(),
        ];
        let nu = JointDist::from_product(&mu, &rows);
        assert!((nu.weight(1, 1) - 0.56).abs() < 1e-15);
        let marg = nu.x_marginal();
        assert!(marg.tv_distance(&mu) < 1e-15);
        let back = nu.disintegrate(&rows);
        assert!(back[0].tv_distance(&rows[0]) < 1e-15);
        assert!(back[1].tv_distance(&rows[1]) < 1e-15);
    }

    #[test]
    fn disintegration_uses_fallback_on_null_states() {
        let mu = Dist::new(vec![1.0, 0.0]).unwrap();
        let rows = vec![Dist::uniform(2), Dist::uniform(2)];
        let nu = JointDist::from_product(&mu, &rows);
        let fallback = vec![Dist::dirac(2, 1), Dist::dirac(2, 1)];
        let back = nu.disintegrate(&fallback);
        assert_eq!(back[1], Dist::dirac(2, 1));
    }

    #[test]
    fn policy_stationarity_detection() {
        let p = MarkovPolicy::<f64>::uniform(3, 2, 2);
        assert!(p.is_stationary());
        let mut steps: Vec<Vec<Dist<f64>>> = (0..3)
            .map(|_| vec![Dist::uniform(2), Dist::uniform(2)])
            .collect();
        steps[2][1] = Dist::dirac(2, 0);
        let q = MarkovPolicy::new(steps).unwrap();
        assert!(!q.is_stationary());
    }

    #[test]
    fn pure_action_detection() {
        let p = MarkovPolicy::<f64>::deterministic(&[vec![1, 0]], 2);
        assert_eq!(p.pure_action(0, 0), Some(1));
        let u = MarkovPolicy::<f64>::uniform(1, 2, 2);
        assert_eq!(u.pure_action(0, 0), None);
    }

    #[test]
    fn flow_serde_rejects_bad_rows() {
        let ok: MeasureFlow = serde_json::from_str("[[0.5,0.5],[1.0,0.0]]").unwrap();
        assert_eq!(ok.horizon(), 1);
        assert!(serde_json::from_str::<MeasureFlow>("[[0.5,0.4]]").is_err());
    }
}
