//! Risk-sensitive nonhomogeneous dynamic programming against a fixed
//! measure flow.
//!
//! With `p_k(·|x,a) = p(·|x,a,μ_k)` and `c_k(x,a) = c(x,a,μ_k)` frozen by a
//! measure flow `(μ_t)`, the finite-horizon optimal values
//!
//! ```text
//!     J_k(x) = inf_π E^π[ exp(λ Σ_{t=k}^{n} β^t c_t(x(t),a(t)) ) | x(k)=x ]
//! ```
//!
//! satisfy the multiplicative backward recursion `J_{n+1} ≡ 1`,
//!
//! ```text
//!     J_k(x) = min_a  exp(λ β^k c_k(x,a)) · Σ_y p_k(y|x,a) J_{k+1}(y).
//! ```
//!
//! Values live in `[1, exp(λK Σ_{t=k}^n β^t)]`; when `λK/(1-β)` exceeds
//! [`crate::model::LOG_SPACE_EXPONENT_BOUND`] the same recursion runs in log
//! space with log-sum-exp so nothing overflows.
//!
//! The finite-horizon table approximates the infinite-horizon one uniformly:
//! `‖J_k^n - J_k‖ ≤ L_k β^{n+1}` with `L_k = (λK/(1-β))·exp(λ β^k K/(1-β))`,
//! which [`truncation_horizon`] inverts to choose `n` for a target accuracy.
//!
//! Optimality of a policy is certified through its state-action occupation
//! measures: a policy is optimal exactly when, at every step, the occupation
//! measure puts all its mass on minimizers of the one-step expression above
//! ([`verify_optimality`]).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dist::Dist;
use crate::flow::{JointDist, MarkovPolicy, MeasureFlow, StateActionFlow};
use crate::model::MfgModel;
use crate::{real, Real};

/// Default cap on the truncation horizon.
pub const DEFAULT_HORIZON_CAP: usize = 100_000;

/// Relative tolerance when recording the set of minimizing actions.
pub const MINIMIZER_REL_TOL: f64 = 1e-12;

/// Tolerance on marginal mismatch when checking that a state-action flow is
/// induced by a policy.
pub const FLOW_CONSISTENCY_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum DpError {
    #[error("tolerance must be positive, got {tol}")]
    InvalidTolerance { tol: f64 },
    #[error("truncation horizon exceeds cap {cap} for tolerance {tol:e}")]
    HorizonCapExceeded { cap: usize, tol: f64 },
    #[error("measure flow too short: need {needed} steps, got {got}")]
    FlowTooShort { needed: usize, got: usize },
    #[error("policy too short: need {needed} steps, got {got}")]
    PolicyTooShort { needed: usize, got: usize },
    #[error(
        "state-action flow is not induced by the policy under the flow \
         (max marginal mismatch {mismatch:e})"
    )]
    InconsistentStateActionFlow { mismatch: f64 },
}

/// `ζ_{k,n} = Σ_{t=k}^n β^t`, the discount mass of the block `[k, n]`.
pub fn discount_block<T: Real>(beta: T, k: usize, n: usize) -> T {
    debug_assert!(k <= n + 1);
    (k..=n).map(|t| beta.powi(t as i32)).sum()
}

/// Natural log of `L_k = (λK/(1-β))·exp(λ β^k K/(1-β))`, the uniform
/// truncation constant at time `k`. `None` when the cost bound is zero.
pub fn log_truncation_constant<T: Real>(model: &MfgModel<T>, k: usize) -> Option<T> {
    let k_bound = model.cost_bound();
    if k_bound == T::zero() {
        return None;
    }
    let base = model.lambda() * k_bound / (T::one() - model.beta());
    Some(base.ln() + base * model.beta().powi(k as i32))
}

/// `L_0 β^{n+1}`, the uniform gap between the `n`-horizon and the
/// infinite-horizon optimal values. May overflow to `+∞` for extreme models;
/// use [`log_truncation_constant`] where that matters.
pub fn truncation_error_bound<T: Real>(model: &MfgModel<T>, n: usize) -> T {
    match log_truncation_constant(model, 0) {
        None => T::zero(),
        Some(log_l0) => (log_l0 + model.beta().ln() * real::<T>((n + 1) as f64)).exp(),
    }
}

/// Smallest horizon `n` with `L_0 β^{n+1} ≤ tol`, capped at
/// [`DEFAULT_HORIZON_CAP`].
pub fn truncation_horizon<T: Real>(model: &MfgModel<T>, tol: T) -> Result<usize, DpError> {
    truncation_horizon_capped(model, tol, DEFAULT_HORIZON_CAP)
}

pub fn truncation_horizon_capped<T: Real>(
    model: &MfgModel<T>,
    tol: T,
    cap: usize,
) -> Result<usize, DpError> {
    if !(tol > T::zero()) {
        return Err(DpError::InvalidTolerance {
            tol: tol.to_f64().unwrap_or(f64::NAN),
        });
    }
    let log_l0 = match log_truncation_constant(model, 0) {
        None => return Ok(0),
        Some(v) => v,
    };
    let log_beta = model.beta().ln();
    let log_tol = tol.ln();
    let ok = |n: usize| log_l0 + log_beta * real::<T>((n + 1) as f64) <= log_tol;
    // Closed-form candidate, then a local fix-up against floating error.
    let raw = ((log_tol - log_l0) / log_beta - T::one())
        .ceil()
        .to_f64()
        .unwrap_or(f64::INFINITY);
    let mut n = if raw.is_finite() && raw > 0.0 {
        (raw as usize).min(cap)
    } else {
        0
    };
    while n > 0 && ok(n - 1) {
        n -= 1;
    }
    while !ok(n) {
        n += 1;
        if n > cap {
            return Err(DpError::HorizonCapExceeded {
                cap,
                tol: tol.to_f64().unwrap_or(f64::NAN),
            });
        }
    }
    Ok(n)
}

/// One backward step: the new value row together with, per state, the set of
/// actions attaining the minimum within [`MINIMIZER_REL_TOL`].
#[derive(Debug, Clone)]
pub struct BellmanRow<T: Real = f64> {
    pub values: Vec<T>,
    pub minimizers: Vec<Vec<usize>>,
}

/// Applies the multiplicative Bellman operator at time `k` in linear space:
/// `u ↦ min_a exp(λ β^k c_k(x,a)) Σ_y p_k(y|x,a) u(y)`.
pub fn bellman_step<T: Real>(model: &MfgModel<T>, mu_k: &Dist<T>, u: &[T], k: usize) -> BellmanRow<T> {
    debug_assert!(u.iter().all(|&v| v >= T::one()));
    step_impl(model, mu_k, u, k, false)
}

/// Log-space variant: `w ↦ min_a [λ β^k c_k(x,a) + log Σ_y p_k(y|x,a) e^{w(y)}]`.
pub fn bellman_step_log<T: Real>(
    model: &MfgModel<T>,
    mu_k: &Dist<T>,
    w: &[T],
    k: usize,
) -> BellmanRow<T> {
    step_impl(model, mu_k, w, k, true)
}

fn step_impl<T: Real>(
    model: &MfgModel<T>,
    mu_k: &Dist<T>,
    u: &[T],
    k: usize,
    log_domain: bool,
) -> BellmanRow<T> {
    assert_eq!(u.len(), model.nx(), "value row has wrong length");
    let scale = model.lambda() * model.beta().powi(k as i32);
    let mut values = Vec::with_capacity(model.nx());
    let mut minimizers = Vec::with_capacity(model.nx());
    for x in 0..model.nx() {
        let q: Vec<T> = (0..model.na())
            .map(|a| action_value(model, mu_k, u, scale, x, a, log_domain))
            .collect();
        let qmin = q.iter().copied().fold(T::infinity(), T::min);
        let cut = if log_domain {
            qmin + real(MINIMIZER_REL_TOL.ln_1p())
        } else {
            qmin * (T::one() + real(MINIMIZER_REL_TOL))
        };
        let set: Vec<usize> = (0..model.na()).filter(|&a| q[a] <= cut).collect();
        values.push(qmin);
        minimizers.push(set);
    }
    BellmanRow { values, minimizers }
}

/// `Q_k(x,a)` in the requested domain: the one-step expression whose minimum
/// over `a` is the Bellman image.
fn action_value<T: Real>(
    model: &MfgModel<T>,
    mu_k: &Dist<T>,
    u: &[T],
    scale: T,
    x: usize,
    a: usize,
    log_domain: bool,
) -> T {
    let p = model.kernel_at(x, a, mu_k);
    let cost_term = scale * model.cost_at(x, a, mu_k);
    if log_domain {
        cost_term + log_expectation(&p, u)
    } else {
        cost_term.exp() * p.dot(u)
    }
}

/// `log Σ_y p(y) e^{w(y)}`, stable via a max shift over the support.
fn log_expectation<T: Real>(p: &Dist<T>, w: &[T]) -> T {
    let m = p
        .support()
        .map(|(y, _)| w[y])
        .fold(T::neg_infinity(), T::max);
    if !m.is_finite() {
        return m;
    }
    let s: T = p.support().map(|(y, py)| py * (w[y] - m).exp()).sum();
    m + s.ln()
}

/// Table of values `J_k(x)` for `k = 0..=n+1`; the terminal row is the empty
/// product (`1`, or `0` in log space).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValueTable<T: Real = f64> {
    horizon: usize,
    log_domain: bool,
    /// `rows[k][x]`; values if `!log_domain`, logs of values otherwise.
    rows: Vec<Vec<T>>,
}

impl<T: Real> ValueTable<T> {
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn log_domain(&self) -> bool {
        self.log_domain
    }

    pub fn nx(&self) -> usize {
        self.rows[0].len()
    }

    /// `J_k(x)` in linear space (exponentiates when stored in log space,
    /// which may overflow to `+∞` — that is the log-space mode's point).
    pub fn value(&self, k: usize, x: usize) -> T {
        if self.log_domain {
            self.rows[k][x].exp()
        } else {
            self.rows[k][x]
        }
    }

    /// `log J_k(x)`.
    pub fn log_value(&self, k: usize, x: usize) -> T {
        if self.log_domain {
            self.rows[k][x]
        } else {
            self.rows[k][x].ln()
        }
    }

    /// Raw stored row (domain per [`ValueTable::log_domain`]).
    pub fn row(&self, k: usize) -> &[T] {
        &self.rows[k]
    }

    /// `Σ_x μ₀(x) J_0(x)`.
    pub fn initial_value(&self, mu0: &Dist<T>) -> T {
        (0..self.nx()).map(|x| mu0.weight(x) * self.value(0, x)).sum()
    }

    /// `log Σ_x μ₀(x) J_0(x)`, stable in log-space mode.
    pub fn initial_log_value(&self, mu0: &Dist<T>) -> T {
        let w: Vec<T> = (0..self.nx()).map(|x| self.log_value(0, x)).collect();
        log_expectation(mu0, &w)
    }
}

/// Optimal finite-horizon values by backward induction. Runs in log space
/// when the model recommends it.
pub fn finite_horizon_values<T: Real>(
    model: &MfgModel<T>,
    flow: &MeasureFlow<T>,
    n: usize,
) -> Result<ValueTable<T>, DpError> {
    backward_table(model, flow, n, |m, mu, u, k, log| {
        if log {
            bellman_step_log(m, mu, u, k).values
        } else {
            bellman_step(m, mu, u, k).values
        }
    })
}

/// Greedy (deterministic) policy attached to a value table: at each `(k, x)`
/// put full mass on the smallest-index action attaining the minimum.
pub fn greedy_policy<T: Real>(
    model: &MfgModel<T>,
    flow: &MeasureFlow<T>,
    table: &ValueTable<T>,
) -> MarkovPolicy<T> {
    let n = table.horizon();
    assert!(flow.len() >= n + 1, "flow must cover the table horizon");
    let mut choices = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let row = if table.log_domain() {
            bellman_step_log(model, flow.at(k), table.row(k + 1), k)
        } else {
            bellman_step(model, flow.at(k), table.row(k + 1), k)
        };
        choices.push(row.minimizers.iter().map(|set| set[0]).collect());
    }
    MarkovPolicy::deterministic(&choices, model.na())
}

/// Policy evaluation: the multiplicative recursion with the minimum replaced
/// by the policy's action average,
/// `V_k(x) = Σ_a π_k(a|x) exp(λ β^k c_k(x,a)) Σ_y p_k(y|x,a) V_{k+1}(y)`.
pub fn evaluate_policy<T: Real>(
    model: &MfgModel<T>,
    flow: &MeasureFlow<T>,
    pi: &MarkovPolicy<T>,
    n: usize,
) -> Result<ValueTable<T>, DpError> {
    if pi.len() < n + 1 {
        return Err(DpError::PolicyTooShort {
            needed: n + 1,
            got: pi.len(),
        });
    }
    backward_table(model, flow, n, |m, mu, u, k, log| {
        let scale = m.lambda() * m.beta().powi(k as i32);
        (0..m.nx())
            .map(|x| {
                if log {
                    let terms: Vec<T> = pi
                        .at(k, x)
                        .support()
                        .map(|(a, pa)| pa.ln() + action_value(m, mu, u, scale, x, a, true))
                        .collect();
                    log_sum(&terms)
                } else {
                    pi.at(k, x)
                        .support()
                        .map(|(a, pa)| pa * action_value(m, mu, u, scale, x, a, false))
                        .sum()
                }
            })
            .collect()
    })
}

fn log_sum<T: Real>(terms: &[T]) -> T {
    let m = terms.iter().copied().fold(T::neg_infinity(), T::max);
    if !m.is_finite() {
        return m;
    }
    let s: T = terms.iter().map(|&t| (t - m).exp()).sum();
    m + s.ln()
}

fn backward_table<T: Real>(
    model: &MfgModel<T>,
    flow: &MeasureFlow<T>,
    n: usize,
    step: impl Fn(&MfgModel<T>, &Dist<T>, &[T], usize, bool) -> Vec<T>,
) -> Result<ValueTable<T>, DpError> {
    if flow.len() < n + 1 {
        return Err(DpError::FlowTooShort {
            needed: n + 1,
            got: flow.len(),
        });
    }
    let log_domain = model.log_space_recommended();
    let terminal = if log_domain { T::zero() } else { T::one() };
    let mut rows = vec![Vec::new(); n + 2];
    rows[n + 1] = vec![terminal; model.nx()];
    for k in (0..=n).rev() {
        let next = std::mem::take(&mut rows[k + 1]);
        rows[k] = step(model, flow.at(k), &next, k, log_domain);
        rows[k + 1] = next;
    }
    Ok(ValueTable {
        horizon: n,
        log_domain,
        rows,
    })
}

/// State-action flow `ν_t = m_t ⊗ π_t` induced by `pi` from the model's
/// initial distribution, with state marginals propagated under the flow's
/// kernels `p(·|x,a,μ_t)`.
pub fn induced_state_action_flow<T: Real>(
    model: &MfgModel<T>,
    flow: &MeasureFlow<T>,
    pi: &MarkovPolicy<T>,
    n: usize,
) -> StateActionFlow<T> {
    assert!(flow.len() >= n + 1, "flow must cover the horizon");
    assert!(pi.len() >= n + 1, "policy must cover the horizon");
    let mut marginal = model.mu0().clone();
    let mut nus = Vec::with_capacity(n + 1);
    for t in 0..=n {
        let nu = JointDist::from_product(&marginal, pi.step(t));
        if t < n {
            let mut next = vec![T::zero(); model.nx()];
            for (x, a, w) in nu.support() {
                let p = model.kernel_at(x, a, flow.at(t));
                for (y, py) in p.support() {
                    next[y] += w * py;
                }
            }
            marginal = Dist::from_unnormalized(next)
                .expect("propagated state marginal keeps unit mass");
        }
        nus.push(nu);
    }
    StateActionFlow::new(nus).expect("non-empty by construction")
}

/// Per-step occupation mass on near-minimizing state-action pairs, and the
/// resulting verdict.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimalityCertificate<T: Real = f64> {
    pub horizon: usize,
    pub tol: T,
    /// For each `k`, the `ν_k`-mass of `{(x,a) : Q_k(x,a) ≤ (1+tol)·[T_k](x)}`.
    pub masses: Vec<T>,
    /// True when every mass is at least `1 - tol`.
    pub pass: bool,
}

/// Checks the occupation-measure optimality criterion for `pi` under `flow`:
/// at every step the induced state-action measure must concentrate on
/// minimizers of the one-step expression. `saflow` must be the flow actually
/// induced by `pi` (verified against [`induced_state_action_flow`] up to
/// [`FLOW_CONSISTENCY_TOL`]).
pub fn verify_optimality<T: Real>(
    model: &MfgModel<T>,
    flow: &MeasureFlow<T>,
    pi: &MarkovPolicy<T>,
    saflow: &StateActionFlow<T>,
    tol: T,
) -> Result<OptimalityCertificate<T>, DpError> {
    let n = saflow.horizon();
    if flow.len() < n + 1 {
        return Err(DpError::FlowTooShort {
            needed: n + 1,
            got: flow.len(),
        });
    }
    if pi.len() < n + 1 {
        return Err(DpError::PolicyTooShort {
            needed: n + 1,
            got: pi.len(),
        });
    }
    let expected = induced_state_action_flow(model, flow, pi, n);
    let mismatch = saflow.tv_distance(&expected);
    if mismatch > real(FLOW_CONSISTENCY_TOL) {
        return Err(DpError::InconsistentStateActionFlow {
            mismatch: mismatch.to_f64().unwrap_or(f64::NAN),
        });
    }

    let table = finite_horizon_values(model, flow, n)?;
    let log_domain = table.log_domain();
    let mut masses = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let scale = model.lambda() * model.beta().powi(k as i32);
        let mut mass = T::zero();
        for x in 0..model.nx() {
            let q: Vec<T> = (0..model.na())
                .map(|a| action_value(model, flow.at(k), table.row(k + 1), scale, x, a, log_domain))
                .collect();
            let qmin = q.iter().copied().fold(T::infinity(), T::min);
            let cut = if log_domain {
                qmin + tol.ln_1p()
            } else {
                qmin * (T::one() + tol)
            };
            for a in 0..model.na() {
                if q[a] <= cut {
                    mass += saflow.at(k).weight(x, a);
                }
            }
        }
        masses.push(mass);
    }
    let pass = masses.iter().all(|&m| m >= T::one() - tol);
    Ok(OptimalityCertificate {
        horizon: n,
        tol,
        masses,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;

    fn constant_flow(model: &MfgModel<f64>, n: usize) -> MeasureFlow<f64> {
        MeasureFlow::constant(model.mu0().clone(), n + 1)
    }

    fn single_state_model(beta: f64, lambda: f64, cost: f64) -> MfgModel<f64> {
        MfgModel::new(
            beta,
            lambda,
            Dist::dirac(1, 0),
            vec![vec![vec![Dist::dirac(1, 0)]]],
            vec![vec![vec![cost]]],
            None,
        )
        .unwrap()
    }

    #[test]
    fn truncation_horizon_closed_form_case() {
        // lambda = K = 1, beta = 0.5: L_0 = 2e^2, need 0.5^{n+1} <= tol/L_0.
        let m = single_state_model(0.5, 1.0, 1.0);
        assert_eq!(truncation_horizon(&m, 1e-3).unwrap(), 13);
    }

    #[test]
    fn truncation_horizon_zero_cost_and_loose_tol() {
        let zero = single_state_model(0.5, 1.0, 0.0);
        assert_eq!(truncation_horizon(&zero, 1e-12).unwrap(), 0);
        let m = single_state_model(0.5, 1.0, 1.0);
        // L_0 * beta ≈ 7.39, so any tol above that needs no steps.
        assert_eq!(truncation_horizon(&m, 8.0).unwrap(), 0);
        assert!(truncation_horizon(&m, 0.0).is_err());
    }

    #[test]
    fn truncation_horizon_cap_is_reported() {
        let m = single_state_model(0.5, 1.0, 1.0);
        let err = truncation_horizon_capped(&m, 1e-9, 10).unwrap_err();
        assert!(matches!(err, DpError::HorizonCapExceeded { cap: 10, .. }));
    }

    #[test]
    fn bellman_step_with_unit_row_is_min_exponentiated_cost() {
        let m = presets::reference_model();
        let mu0 = m.mu0().clone();
        let row = bellman_step(&m, &mu0, &vec![1.0; m.nx()], 0);
        for x in 0..m.nx() {
            let expect = (0..m.na())
                .map(|a| (m.lambda() * m.cost_at(x, a, &mu0)).exp())
                .fold(f64::INFINITY, f64::min);
            assert!((row.values[x] - expect).abs() <= 1e-15 * expect);
        }
    }

    #[test]
    fn single_state_closed_form_value() {
        let (beta, lambda, c0, n) = (0.6, 0.8, 0.9, 7);
        let m = single_state_model(beta, lambda, c0);
        let flow = constant_flow(&m, n);
        let table = finite_horizon_values(&m, &flow, n).unwrap();
        let expect = (lambda * c0 * (1.0 - beta.powi(n as i32 + 1)) / (1.0 - beta)).exp();
        assert!((table.value(0, 0) - expect).abs() < 1e-12 * expect);
    }

    #[test]
    fn zero_cost_table_is_all_ones() {
        let m = single_state_model(0.5, 1.0, 0.0);
        let table = finite_horizon_values(&m, &constant_flow(&m, 4), 4).unwrap();
        for k in 0..=5 {
            assert_eq!(table.value(k, 0), 1.0);
        }
    }

    #[test]
    fn greedy_breaks_ties_toward_smallest_action() {
        // Two actions with identical kernels and costs in every component.
        let row = Dist::new(vec![0.3, 0.7]).unwrap();
        let rows = vec![vec![row.clone(), row.clone()], vec![row.clone(), row.clone()]];
        let m = MfgModel::new(
            0.5,
            1.0,
            Dist::uniform(2),
            vec![rows.clone(), rows],
            vec![
                vec![vec![0.4, 0.2], vec![0.4, 0.2]],
                vec![vec![0.1, 0.3], vec![0.1, 0.3]],
            ],
            None,
        )
        .unwrap();
        let flow = constant_flow(&m, 3);
        let table = finite_horizon_values(&m, &flow, 3).unwrap();
        let pi = greedy_policy(&m, &flow, &table);
        for k in 0..=3 {
            for x in 0..2 {
                assert_eq!(pi.pure_action(k, x), Some(0));
            }
        }
    }

    #[test]
    fn greedy_policy_achieves_the_optimal_table() {
        let m = presets::reference_model();
        let flow = constant_flow(&m, 5);
        let table = finite_horizon_values(&m, &flow, 5).unwrap();
        let pi = greedy_policy(&m, &flow, &table);
        let eval = evaluate_policy(&m, &flow, &pi, 5).unwrap();
        for k in 0..=6 {
            for x in 0..m.nx() {
                let (a, b) = (table.value(k, x), eval.value(k, x));
                assert!((a - b).abs() <= 1e-12 * a, "k={k} x={x}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn log_space_recursion_matches_linear_on_a_large_exponent_model() {
        // lambda*K/(1-beta) = 500*0.6/0.5 = 600: above the switch point but
        // the exponentiated values (at most e^600) still fit in f64, so a
        // hand-run linear recursion serves as the cross-check.
        let file = crate::model::ModelFile::<f64> {
            lambda: 500.0,
            ..presets::reference_model().into()
        };
        let m = MfgModel::try_from(file).unwrap();
        assert!(m.log_space_recommended());
        let n = 6;
        let flow = constant_flow(&m, n);
        let table = finite_horizon_values(&m, &flow, n).unwrap();
        assert!(table.log_domain());

        let mut linear = vec![vec![1.0; m.nx()]];
        let mut greedy_by_hand = Vec::new();
        for k in (0..=n).rev() {
            let row = bellman_step(&m, flow.at(k), linear.last().unwrap(), k);
            greedy_by_hand.push(row.minimizers.iter().map(|s| s[0]).collect::<Vec<_>>());
            linear.push(row.values);
        }
        linear.reverse();
        greedy_by_hand.reverse();
        for k in 0..=n + 1 {
            for x in 0..m.nx() {
                let a = table.log_value(k, x);
                let b = linear[k][x].ln();
                assert!(
                    (a - b).abs() <= 1e-9 * b.max(1.0),
                    "k={k} x={x}: {a} vs {b}"
                );
                assert!(table.log_value(k, x) >= -1e-12);
            }
        }
        let pi_log = greedy_policy(&m, &flow, &table);
        for k in 0..=n {
            for x in 0..m.nx() {
                assert_eq!(pi_log.pure_action(k, x), Some(greedy_by_hand[k][x]));
            }
        }
    }

    #[test]
    fn value_bounds_hold_on_random_models() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..25 {
            let m = presets::random_model(&mut rng, 3, 2, 0.7, 1.0);
            let n = 6;
            let flow = presets::random_flow(&mut rng, 3, n + 1);
            let table = finite_horizon_values(&m, &flow, n).unwrap();
            for k in 0..=n + 1 {
                let bound =
                    (m.lambda() * m.cost_bound() * discount_block(m.beta(), k, n)).exp();
                for x in 0..3 {
                    let v = table.value(k, x);
                    assert!((1.0..=bound * (1.0 + 1e-12)).contains(&v));
                }
            }
        }
    }

    #[test]
    fn horizon_monotonicity_and_truncation_bound() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let m = presets::random_model(&mut rng, 2, 2, 0.6, 0.8);
            let n = 4;
            let long = presets::random_flow(&mut rng, 2, n + 25);
            let t_n = finite_horizon_values(&m, &long, n).unwrap();
            let t_n1 = finite_horizon_values(&m, &long, n + 1).unwrap();
            let t_far = finite_horizon_values(&m, &long, n + 20).unwrap();
            for k in 0..=n {
                for x in 0..2 {
                    assert!(t_n.value(k, x) <= t_n1.value(k, x) + 1e-12);
                }
            }
            let bound = truncation_error_bound(&m, n);
            for x in 0..2 {
                assert!((t_n.value(0, x) - t_far.value(0, x)).abs() <= bound);
            }
        }
    }

    #[test]
    fn certificate_passes_for_greedy_and_fails_for_bad_policy() {
        let m = presets::reference_model();
        let n = 4;
        let flow = constant_flow(&m, n);
        let table = finite_horizon_values(&m, &flow, n).unwrap();
        let pi = greedy_policy(&m, &flow, &table);
        let saflow = induced_state_action_flow(&m, &flow, &pi, n);
        let cert = verify_optimality(&m, &flow, &pi, &saflow, 1e-9).unwrap();
        assert!(cert.pass);
        assert!(cert.masses.iter().all(|&mass| (mass - 1.0).abs() < 1e-12));

        // Flip the time-0 decision in a positive-mass state to the worst action.
        let mut choices: Vec<Vec<usize>> = (0..=n)
            .map(|k| (0..m.nx()).map(|x| pi.pure_action(k, x).unwrap()).collect())
            .collect();
        let x0 = (0..m.nx()).find(|&x| m.mu0().weight(x) > 0.0).unwrap();
        let row = bellman_step(&m, flow.at(0), table.row(1), 0);
        let worst = (0..m.na())
            .max_by(|&a, &b| {
                let qa = action_value(&m, flow.at(0), table.row(1), m.lambda(), x0, a, false);
                let qb = action_value(&m, flow.at(0), table.row(1), m.lambda(), x0, b, false);
                qa.partial_cmp(&qb).unwrap()
            })
            .unwrap();
        assert!(!row.minimizers[x0].contains(&worst), "model must have a strict gap");
        choices[0][x0] = worst;
        let bad = MarkovPolicy::deterministic(&choices, m.na());
        let bad_saflow = induced_state_action_flow(&m, &flow, &bad, n);
        let cert = verify_optimality(&m, &flow, &bad, &bad_saflow, 1e-9).unwrap();
        assert!(!cert.pass);
        assert!(cert.masses[0] < 1.0 - 1e-9);
    }

    #[test]
    fn certificate_accepts_randomization_over_exact_ties() {
        // Duplicate action columns: randomizing between them stays optimal.
        let mk_rows = |p: f64| {
            vec![
                Dist::new(vec![p, 1.0 - p]).unwrap(),
                Dist::new(vec![p, 1.0 - p]).unwrap(),
            ]
        };
        let m = MfgModel::new(
            0.5,
            1.0,
            Dist::uniform(2),
            vec![
                vec![mk_rows(0.8), mk_rows(0.4)],
                vec![mk_rows(0.6), mk_rows(0.2)],
            ],
            vec![
                vec![vec![0.3, 0.5], vec![0.3, 0.5]],
                vec![vec![0.2, 0.1], vec![0.2, 0.1]],
            ],
            None,
        )
        .unwrap();
        let n = 3;
        let flow = constant_flow(&m, n);
        let mixed = MarkovPolicy::new(vec![
            vec![
                Dist::new(vec![0.25, 0.75]).unwrap(),
                Dist::new(vec![0.5, 0.5]).unwrap(),
            ];
            n + 1
        ])
        .unwrap();
        let saflow = induced_state_action_flow(&m, &flow, &mixed, n);
        let cert = verify_optimality(&m, &flow, &mixed, &saflow, 1e-9).unwrap();
        assert!(cert.pass, "masses: {:?}", cert.masses);
    }

    #[test]
    fn certificate_rejects_mismatched_state_action_flow() {
        let m = presets::reference_model();
        let n = 2;
        let flow = constant_flow(&m, n);
        let pi = MarkovPolicy::uniform(n + 1, m.nx(), m.na());
        let other = MarkovPolicy::deterministic(&vec![vec![0, 0]; n + 1], m.na());
        let wrong = induced_state_action_flow(&m, &flow, &other, n);
        let err = verify_optimality(&m, &flow, &pi, &wrong, 1e-9).unwrap_err();
        assert!(matches!(err, DpError::InconsistentStateActionFlow { .. }));
    }
}
