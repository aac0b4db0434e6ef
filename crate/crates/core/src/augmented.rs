//! The cost-augmented chain: state plus accumulated discounted cost.
//!
//! Augmenting the state to `s(t) = (x(t), Σ_{k<t} β^k c_k(x(k),a(k)))` turns
//! the multiplicative objective into a terminal one: propagate the pair
//! forward to `t = n+1` and read off `E[exp(λ · accumulated cost)]` there.
//! On finite spaces over a finite horizon the accumulated cost takes finitely
//! many values, so the law of `s(t)` is an exact finite atom measure — no
//! discretization of the cost interval `[0, K/(1-β)]` is involved, which is
//! the whole point: the terminal sum must reproduce the multiplicative
//! policy-evaluation recursion to floating-point accuracy.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dist::Dist;
use crate::flow::{MarkovPolicy, MeasureFlow};
use crate::model::MfgModel;
use crate::{real, Real};

/// Default cap on the atom count of a propagated measure.
pub const DEFAULT_ATOM_CAP: usize = 10_000_000;

/// Atoms whose accumulated costs lie within this absolute distance merge.
pub const ATOM_MERGE_TOL: f64 = 1e-13;

#[derive(Debug, Error)]
pub enum AugmentedError {
    #[error("atom count {atoms} exceeds cap {cap} at time step {step}")]
    AtomCapExceeded {
        step: usize,
        atoms: usize,
        cap: usize,
    },
    #[error("measure flow too short: need {needed} steps, got {got}")]
    FlowTooShort { needed: usize, got: usize },
    #[error("policy too short: need {needed} steps, got {got}")]
    PolicyTooShort { needed: usize, got: usize },
}

/// One atom of the law of `(x(t), accumulated discounted cost)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentedAtom<T: Real = f64> {
    pub x: usize,
    pub cost: T,
    pub weight: T,
}

/// A finite atom measure on state × accumulated cost, sorted by `(x, cost)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AtomMeasure<T: Real = f64> {
    atoms: Vec<AugmentedAtom<T>>,
}

impl<T: Real> AtomMeasure<T> {
    /// The time-zero law `μ₀ ⊗ δ_0`.
    pub fn initial(mu0: &Dist<T>) -> Self {
        let atoms = mu0
            .support()
            .map(|(x, weight)| AugmentedAtom {
                x,
                cost: T::zero(),
                weight,
            })
            .collect();
        AtomMeasure { atoms }
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &AugmentedAtom<T>> {
        self.atoms.iter()
    }

    pub fn total_weight(&self) -> T {
        self.atoms.iter().map(|a| a.weight).sum()
    }

    /// Marginal law of the state coordinate.
    pub fn x_marginal(&self, nx: usize) -> Dist<T> {
        let mut w = vec![T::zero(); nx];
        for atom in &self.atoms {
            w[atom.x] += atom.weight;
        }
        Dist::from_unnormalized(w).expect("atom measure has unit mass")
    }

    fn sort_and_merge(mut atoms: Vec<AugmentedAtom<T>>) -> Vec<AugmentedAtom<T>> {
        atoms.sort_by(|a, b| {
            a.x.cmp(&b.x)
                .then(a.cost.partial_cmp(&b.cost).expect("finite costs"))
        });
        let tol: T = real(ATOM_MERGE_TOL);
        let mut merged: Vec<AugmentedAtom<T>> = Vec::with_capacity(atoms.len());
        for atom in atoms {
            match merged.last_mut() {
                Some(last) if last.x == atom.x && (atom.cost - last.cost) <= tol => {
                    last.weight += atom.weight;
                }
                _ => merged.push(atom),
            }
        }
        merged
    }
}

/// One forward step of the augmented chain at time `t`: actions drawn from
/// `pi_rows`, the state stepped through `p(·|x,a,μ_t)` and the cost
/// coordinate shifted deterministically by `β^t c(x,a,μ_t)`.
pub fn augmented_step<T: Real>(
    model: &MfgModel<T>,
    mu_t: &Dist<T>,
    pi_rows: &[Dist<T>],
    t: usize,
    measure: &AtomMeasure<T>,
    cap: usize,
) -> Result<AtomMeasure<T>, AugmentedError> {
    let beta_t = model.beta().powi(t as i32);
    let mut next: Vec<AugmentedAtom<T>> = Vec::with_capacity(measure.len());
    for atom in measure.iter() {
        for (a, pa) in pi_rows[atom.x].support() {
            let shifted = atom.cost + beta_t * model.cost_at(atom.x, a, mu_t);
            let trans = model.kernel_at(atom.x, a, mu_t);
            for (y, py) in trans.support() {
                next.push(AugmentedAtom {
                    x: y,
                    cost: shifted,
                    weight: atom.weight * pa * py,
                });
                if next.len() > cap {
                    return Err(AugmentedError::AtomCapExceeded {
                        step: t + 1,
                        atoms: next.len(),
                        cap,
                    });
                }
            }
        }
    }
    Ok(AtomMeasure {
        atoms: AtomMeasure::sort_and_merge(next),
    })
}

/// Exact laws of `(x(t), accumulated discounted cost)` for `t = 0..=n+1`.
pub fn augmented_flow<T: Real>(
    model: &MfgModel<T>,
    flow: &MeasureFlow<T>,
    pi: &MarkovPolicy<T>,
    n: usize,
    cap: usize,
) -> Result<Vec<AtomMeasure<T>>, AugmentedError> {
    if flow.len() < n + 1 {
        return Err(AugmentedError::FlowTooShort {
            needed: n + 1,
            got: flow.len(),
        });
    }
    if pi.len() < n + 1 {
        return Err(AugmentedError::PolicyTooShort {
            needed: n + 1,
            got: pi.len(),
        });
    }
    let mut out = Vec::with_capacity(n + 2);
    out.push(AtomMeasure::initial(model.mu0()));
    for t in 0..=n {
        let next = augmented_step(model, flow.at(t), pi.step(t), t, &out[t], cap)?;
        out.push(next);
    }
    Ok(out)
}

/// `E^π[ exp(λ Σ_{t=0}^n β^t c_t) ]` read off the terminal augmented law:
/// `Σ atoms at t = n+1 of weight · exp(λ·cost)`.
pub fn augmented_evaluate<T: Real>(
    model: &MfgModel<T>,
    flow: &MeasureFlow<T>,
    pi: &MarkovPolicy<T>,
    n: usize,
    cap: usize,
) -> Result<T, AugmentedError> {
    let laws = augmented_flow(model, flow, pi, n, cap)?;
    let terminal = &laws[n + 1];
    Ok(terminal
        .iter()
        .map(|atom| atom.weight * (model.lambda() * atom.cost).exp())
        .sum())
}

/// `log E^π[ exp(λ Σ_{t=0}^n β^t c_t) ]` through a stable log-sum-exp over
/// the terminal atoms, for models whose values overflow linear space.
pub fn augmented_log_evaluate<T: Real>(
    model: &MfgModel<T>,
    flow: &MeasureFlow<T>,
    pi: &MarkovPolicy<T>,
    n: usize,
    cap: usize,
) -> Result<T, AugmentedError> {
    let laws = augmented_flow(model, flow, pi, n, cap)?;
    let terms: Vec<T> = laws[n + 1]
        .iter()
        .map(|atom| atom.weight.ln() + model.lambda() * atom.cost)
        .collect();
    let m = terms.iter().copied().fold(T::neg_infinity(), T::max);
    Ok(m + terms.iter().map(|&t| (t - m).exp()).sum::<T>().ln())
}
