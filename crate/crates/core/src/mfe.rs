//! Mean-field equilibrium computation on state-action measure flows.
//!
//! An equilibrium is a pair (policy, state-measure flow) where the policy is
//! optimal for the flow and the flow is the one the policy regenerates. Both
//! conditions combine into a fixed-point condition on state-action flows
//! `ν = (ν_t)`: the update [`gamma_step`]
//!
//! 1. freezes the state marginals `μ_t = ν_{t,1}`,
//! 2. solves the risk-sensitive control problem against `(μ_t)` and keeps the
//!    greedy policy `π` (optimality half),
//! 3. re-propagates marginals under the new policy, with the kernels still
//!    frozen at the input marginals: `μ'_0 = μ₀`,
//!    `μ'_{t+1} = Σ_{x,a} μ'_t(x) π_t(a|x) p(·|x,a,μ_t)` (consistency half),
//! 4. returns `ν'_t = μ'_t ⊗ π_t`.
//!
//! The output therefore satisfies the flow-consistency recursion with respect
//! to itself, `ν'_{t+1,1} = Σ_{x,a} ν'_t(x,a) p(·|x,a,μ_t)`, and on a model
//! whose kernel and cost do not depend on the mean-field term the update is
//! constant — a single application lands on the fixed point.
//!
//! A fixed point disintegrates into an equilibrium pair. [`solve_mfe`] runs
//! damped Picard iteration on this update with deterministic multi-start, and
//! always re-verifies a candidate through [`mfe_residual`] — an independent
//! code path — before reporting convergence. Non-convergence is reported
//! honestly in the result, never as an error.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dist::Dist;
use crate::dp::{
    self, evaluate_policy, finite_horizon_values, greedy_policy, truncation_error_bound, DpError,
    ValueTable,
};
use crate::flow::{JointDist, MarkovPolicy, MeasureFlow, StateActionFlow};
use crate::model::MfgModel;
use crate::{real, Real};

#[derive(Debug, Error)]
pub enum MfeError {
    #[error("damping must lie in (0, 1], got {0}")]
    InvalidDamping(f64),
    #[error("tolerances must be positive, got tol_dp={tol_dp}, tol_fp={tol_fp}")]
    InvalidTolerance { tol_dp: f64, tol_fp: f64 },
    #[error("max_iter must be at least 1")]
    InvalidMaxIter,
    #[error(transparent)]
    Dp(#[from] DpError),
}

/// Flow induced by a policy: `μ_0 = μ₀` and
/// `μ_{t+1}(y) = Σ_x Σ_a μ_t(x) π_t(a|x) p(y|x,a,μ_t)`.
pub fn lambda_map<T: Real>(
    model: &MfgModel<T>,
    pi: &MarkovPolicy<T>,
    horizon: usize,
) -> MeasureFlow<T> {
    assert!(pi.len() >= horizon, "policy must cover the horizon");
    let mut mus = Vec::with_capacity(horizon + 1);
    mus.push(model.mu0().clone());
    for t in 0..horizon {
        let mu_t = &mus[t];
        let mut next = vec![T::zero(); model.nx()];
        for (x, wx) in mu_t.support() {
            for (a, pa) in pi.at(t, x).support() {
                let trans = model.kernel_at(x, a, mu_t);
                for (y, py) in trans.support() {
                    next[y] += wx * pa * py;
                }
            }
        }
        mus.push(Dist::from_unnormalized(next).expect("propagation keeps unit mass"));
    }
    MeasureFlow::new(mus).expect("non-empty flow")
}

struct GammaOutput<T: Real> {
    nu: StateActionFlow<T>,
    policy: MarkovPolicy<T>,
}

fn gamma_full<T: Real>(
    model: &MfgModel<T>,
    nu: &StateActionFlow<T>,
    n: usize,
) -> Result<GammaOutput<T>, DpError> {
    assert!(nu.len() >= n + 1, "state-action flow too short");
    let mu_flow = nu.marginal_flow();
    let table = finite_horizon_values(model, &mu_flow, n)?;
    let policy = greedy_policy(model, &mu_flow, &table);

    let mut nus = Vec::with_capacity(n + 1);
    nus.push(JointDist::from_product(model.mu0(), policy.step(0)));
    for t in 0..n {
        let mut next = vec![T::zero(); model.nx()];
        for (x, a, w) in nus[t].support() {
            let trans = model.kernel_at(x, a, mu_flow.at(t));
            for (y, py) in trans.support() {
                next[y] += w * py;
            }
        }
        let marginal = Dist::from_unnormalized(next).expect("propagation keeps unit mass");
        nus.push(JointDist::from_product(&marginal, policy.step(t + 1)));
    }
    Ok(GammaOutput {
        nu: StateActionFlow::new(nus).expect("non-empty flow"),
        policy,
    })
}

/// One application of the equilibrium update to a state-action flow.
pub fn gamma_step<T: Real>(
    model: &MfgModel<T>,
    nu: &StateActionFlow<T>,
    n: usize,
) -> Result<StateActionFlow<T>, DpError> {
    gamma_full(model, nu, n).map(|out| out.nu)
}

/// Independent equilibrium residuals for a candidate pair:
/// `consistency = max_t TV(μ_t, Λ(π)_t)` and
/// `gap = Σ_x μ₀(x) (J^π_0(x) - J^*_0(x)) ≥ 0` under the candidate flow.
pub fn mfe_residual<T: Real>(
    model: &MfgModel<T>,
    pi: &MarkovPolicy<T>,
    flow: &MeasureFlow<T>,
    n: usize,
) -> Result<(T, T), DpError> {
    let induced = lambda_map(model, pi, n);
    let consistency = (0..=n)
        .map(|t| flow.at(t).tv_distance(induced.at(t)))
        .fold(T::zero(), T::max);

    let optimal = finite_horizon_values(model, flow, n)?;
    let evaluated = evaluate_policy(model, flow, pi, n)?;
    let gap = policy_gap(model.mu0(), &evaluated, &optimal);
    Ok((consistency, gap))
}

/// `Σ_x μ₀(x)(V^π(x) - V^*(x))`, evaluated through logs so it stays finite
/// in log-space mode.
fn policy_gap<T: Real>(mu0: &Dist<T>, evaluated: &ValueTable<T>, optimal: &ValueTable<T>) -> T {
    mu0.support()
        .map(|(x, w)| {
            let lo = optimal.log_value(0, x);
            let le = evaluated.log_value(0, x);
            w * lo.exp() * (le - lo).exp_m1()
        })
        .sum()
}

/// Solver configuration. `restarts` counts extra attempts from perturbed
/// initial flows after a non-converged first run; restart seeds are fixed, so
/// the solver is fully deterministic.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MfeOptions<T: Real = f64> {
    pub tol_dp: T,
    pub tol_fp: T,
    pub max_iter: usize,
    pub damping: T,
    pub restarts: usize,
    pub horizon_cap: usize,
}

impl<T: Real> Default for MfeOptions<T> {
    fn default() -> Self {
        MfeOptions {
            tol_dp: real(1e-6),
            tol_fp: real(1e-6),
            max_iter: 1000,
            damping: T::one(),
            restarts: 3,
            horizon_cap: dp::DEFAULT_HORIZON_CAP,
        }
    }
}

/// Outcome of a single solver attempt.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RestartSummary<T: Real = f64> {
    pub iterations: usize,
    pub fp_residual: T,
    pub consistency_residual: T,
    pub optimality_gap: T,
    pub converged: bool,
}

/// A candidate mean-field equilibrium with independently recomputed
/// residuals. `converged` implies the fixed-point iteration met its
/// tolerance *and* both residuals are within [`consistency_threshold`] /
/// [`gap_threshold`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MfeResult<T: Real = f64> {
    /// Equilibrium policy as `[t][x][a]` action probabilities.
    pub policy: MarkovPolicy<T>,
    /// Equilibrium state flow as `[t][x]` probabilities.
    pub flow: MeasureFlow<T>,
    /// Truncation horizon the equilibrium was computed at.
    pub horizon: usize,
    #[serde(default = "zero")]
    pub consistency_residual: T,
    #[serde(default = "zero")]
    pub optimality_gap: T,
    #[serde(default)]
    pub iterations: usize,
    #[serde(default)]
    pub converged: bool,
    /// Final successive-iterate total-variation residual.
    #[serde(default = "zero")]
    pub fp_residual: T,
    /// Outcomes of every attempt (first start plus restarts).
    #[serde(default)]
    pub restarts: Vec<RestartSummary<T>>,
}

fn zero<T: Real>() -> T {
    T::zero()
}

/// Accepted independent consistency residual for a converged result.
pub fn consistency_threshold<T: Real>(tol_fp: T) -> T {
    real::<T>(2.0) * tol_fp
}

/// Accepted independent optimality gap for a converged result: fixed-point
/// slack plus twice the horizon-truncation error.
pub fn gap_threshold<T: Real>(model: &MfgModel<T>, n: usize, tol_fp: T) -> T {
    real::<T>(10.0) * tol_fp + real::<T>(2.0) * truncation_error_bound(model, n)
}

/// Computes a mean-field equilibrium by damped Picard iteration on
/// [`gamma_step`].
pub fn solve_mfe<T: Real>(
    model: &MfgModel<T>,
    tol_dp: T,
    tol_fp: T,
    max_iter: usize,
    damping: T,
) -> Result<MfeResult<T>, MfeError> {
    solve_mfe_with(
        model,
        &MfeOptions {
            tol_dp,
            tol_fp,
            max_iter,
            damping,
            ..Default::default()
        },
    )
}

pub fn solve_mfe_with<T: Real>(
    model: &MfgModel<T>,
    opts: &MfeOptions<T>,
) -> Result<MfeResult<T>, MfeError> {
    if !(opts.tol_dp > T::zero() && opts.tol_fp > T::zero()) {
        return Err(MfeError::InvalidTolerance {
            tol_dp: opts.tol_dp.to_f64().unwrap_or(f64::NAN),
            tol_fp: opts.tol_fp.to_f64().unwrap_or(f64::NAN),
        });
    }
    if !(opts.damping > T::zero() && opts.damping <= T::one()) {
        return Err(MfeError::InvalidDamping(
            opts.damping.to_f64().unwrap_or(f64::NAN),
        ));
    }
    if opts.max_iter == 0 {
        return Err(MfeError::InvalidMaxIter);
    }
    let n = dp::truncation_horizon_capped(model, opts.tol_dp, opts.horizon_cap)?;

    let mut best: Option<MfeResult<T>> = None;
    let mut summaries = Vec::new();
    for attempt in 0..=opts.restarts {
        let pi0 = if attempt == 0 {
            MarkovPolicy::uniform(n + 1, model.nx(), model.na())
        } else {
            perturbed_policy(model, n + 1, attempt as u64)
        };
        let mut candidate = run_attempt(model, n, opts, &pi0)?;
        summaries.push(RestartSummary {
            iterations: candidate.iterations,
            fp_residual: candidate.fp_residual,
            consistency_residual: candidate.consistency_residual,
            optimality_gap: candidate.optimality_gap,
            converged: candidate.converged,
        });
        let better = match &best {
            None => true,
            Some(b) => {
                candidate
                    .consistency_residual
                    .max(candidate.optimality_gap)
                    < b.consistency_residual.max(b.optimality_gap)
            }
        };
        if better {
            best = Some(candidate.clone());
        }
        if candidate.converged {
            candidate.restarts = summaries;
            return Ok(candidate);
        }
    }
    let mut result = best.expect("at least one attempt ran");
    result.restarts = summaries;
    Ok(result)
}

fn run_attempt<T: Real>(
    model: &MfgModel<T>,
    n: usize,
    opts: &MfeOptions<T>,
    pi0: &MarkovPolicy<T>,
) -> Result<MfeResult<T>, MfeError> {
    let flow0 = lambda_map(model, pi0, n);
    let mut nu = StateActionFlow::from_flow_and_policy(&flow0, pi0);
    let mut fp_residual = T::infinity();
    let mut iterations = 0;
    let mut picard_converged = false;
    let mut last_policy = pi0.clone();
    for j in 1..=opts.max_iter {
        let out = gamma_full(model, &nu, n)?;
        last_policy = out.policy;
        let mixed = if opts.damping == T::one() {
            out.nu
        } else {
            StateActionFlow::new(
                (0..=n)
                    .map(|t| nu.at(t).mix(out.nu.at(t), opts.damping))
                    .collect(),
            )
            .expect("non-empty flow")
        };
        fp_residual = nu.tv_distance(&mixed);
        nu = mixed;
        iterations = j;
        if fp_residual <= opts.tol_fp {
            picard_converged = true;
            break;
        }
    }

    // Disintegrate the limit: conditional action laws where the marginal has
    // mass, the current greedy action elsewhere (the choice on null states is
    // arbitrary; greedy keeps the gap minimal and deterministic).
    let flow = nu.marginal_flow();
    let steps = (0..=n)
        .map(|t| nu.at(t).disintegrate(last_policy.step(t)))
        .collect();
    let policy = MarkovPolicy::new(steps).expect("non-empty policy");
    let (consistency_residual, optimality_gap) = mfe_residual(model, &policy, &flow, n)?;
    let converged = picard_converged
        && consistency_residual <= consistency_threshold(opts.tol_fp)
        && optimality_gap <= gap_threshold(model, n, opts.tol_fp);
    Ok(MfeResult {
        policy,
        flow,
        consistency_residual,
        optimality_gap,
        iterations,
        converged,
        horizon: n,
        fp_residual,
        restarts: Vec::new(),
    })
}

/// Random stochastic policy from a fixed per-attempt seed.
fn perturbed_policy<T: Real>(model: &MfgModel<T>, len: usize, seed: u64) -> MarkovPolicy<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let steps = (0..len)
        .map(|_| {
            (0..model.nx())
                .map(|_| {
                    let w: Vec<T> = (0..model.na())
                        .map(|_| real::<T>(-(1.0 - rng.random::<f64>()).ln()))
                        .collect();
                    Dist::from_unnormalized(w).expect("positive draws normalize")
                })
                .collect()
        })
        .collect();
    MarkovPolicy::new(steps).expect("non-empty policy")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;
    use rand::SeedableRng;

    fn decoupled_model() -> MfgModel<f64> {
        // Kernel and cost identical across mixture components.
        let rows = |p: f64| {
            vec![
                Dist::new(vec![p, 1.0 - p]).unwrap(),
                Dist::new(vec![1.0 - p, p]).unwrap(),
            ]
        };
        let per_state = vec![rows(0.8), rows(0.3)];
        MfgModel::new(
            0.5,
            1.0,
            Dist::new(vec![0.6, 0.4]).unwrap(),
            vec![per_state.clone(), per_state],
            vec![
                vec![vec![0.2, 0.2], vec![0.7, 0.7]],
                vec![vec![0.5, 0.5], vec![0.1, 0.1]],
            ],
            None,
        )
        .unwrap()
    }

    #[test]
    fn lambda_map_identity_kernel_keeps_mu0() {
        let stay = vec![vec![Dist::dirac(2, 0), Dist::dirac(2, 0)], vec![
            Dist::dirac(2, 1),
            Dist::dirac(2, 1),
        ]];
        let m = MfgModel::new(
            0.5,
            1.0,
            Dist::new(vec![0.3, 0.7]).unwrap(),
            vec![stay.clone(), stay],
            vec![vec![vec![0.0; 2]; 2]; 2],
            None,
        )
        .unwrap();
        let pi = MarkovPolicy::uniform(5, 2, 2);
        let flow = lambda_map(&m, &pi, 5);
        for t in 0..=5 {
            assert!(flow.at(t).tv_distance(m.mu0()) < 1e-15);
        }
    }

    #[test]
    fn lambda_map_single_state_is_trivial() {
        let m = MfgModel::new(
            0.5,
            1.0,
            Dist::dirac(1, 0),
            vec![vec![vec![Dist::dirac(1, 0)]]],
            vec![vec![vec![0.3]]],
            None,
        )
        .unwrap();
        let flow = lambda_map(&m, &MarkovPolicy::uniform(4, 1, 1), 4);
        for t in 0..=4 {
            assert_eq!(flow.at(t).as_slice(), &[1.0]);
        }
    }

    #[test]
    fn gamma_step_output_satisfies_the_consistency_recursion() {
        let m = presets::reference_model();
        let n = 5;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(61);
        let pi = presets::random_policy(&mut rng, 2, 2, n + 1);
        let flow = presets::random_flow(&mut rng, 2, n + 1);
        let nu = StateActionFlow::from_flow_and_policy(&flow, &pi);
        let next = gamma_step(&m, &nu, n).unwrap();

        // Marginal at t = 0 is mu0 and the output satisfies the consistency
        // recursion with respect to itself, under the input's kernels.
        assert!(next.at(0).x_marginal().tv_distance(m.mu0()) < 1e-12);
        for t in 0..n {
            let mut expect = vec![0.0; 2];
            for (x, a, w) in next.at(t).support() {
                let trans = m.kernel_at(x, a, flow.at(t));
                for (y, py) in trans.support() {
                    expect[y] += w * py;
                }
            }
            let expect = Dist::from_unnormalized(expect).unwrap();
            assert!(next.at(t + 1).x_marginal().tv_distance(&expect) < 1e-12);
        }
    }

    #[test]
    fn gamma_step_policy_is_greedy_for_the_input_marginals() {
        let m = presets::reference_model();
        let n = 4;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(62);
        let flow = presets::random_flow(&mut rng, 2, n + 1);
        let pi = presets::random_policy(&mut rng, 2, 2, n + 1);
        let nu = StateActionFlow::from_flow_and_policy(&flow, &pi);
        let out = gamma_full(&m, &nu, n).unwrap();
        let table = finite_horizon_values(&m, &flow, n).unwrap();
        let greedy = greedy_policy(&m, &flow, &table);
        for t in 0..=n {
            for x in 0..2 {
                // All mass of the output on recorded minimizers.
                assert_eq!(
                    out.policy.pure_action(t, x),
                    greedy.pure_action(t, x)
                );
            }
        }
    }

    #[test]
    fn decoupled_model_converges_in_two_iterations_at_full_damping() {
        let m = decoupled_model();
        let result = solve_mfe(&m, 1e-6, 1e-9, 50, 1.0).unwrap();
        assert!(result.converged);
        assert!(result.iterations <= 2, "iterations = {}", result.iterations);
        assert!(result.consistency_residual <= 1e-12);
        assert!(result.optimality_gap <= 1e-12);

        // The equilibrium policy solves the standalone control problem
        // against its own flow.
        let table = finite_horizon_values(&m, &result.flow, result.horizon).unwrap();
        let greedy = greedy_policy(&m, &result.flow, &table);
        for t in 0..=result.horizon {
            for x in 0..2 {
                assert_eq!(result.policy.pure_action(t, x), greedy.pure_action(t, x));
            }
        }
    }

    #[test]
    fn zero_cost_model_has_zero_gap() {
        let m = MfgModel::new(
            0.5,
            1.0,
            Dist::uniform(2),
            vec![
                vec![vec![Dist::new(vec![0.9, 0.1]).unwrap(); 2]; 2],
                vec![vec![Dist::new(vec![0.2, 0.8]).unwrap(); 2]; 2],
            ],
            vec![vec![vec![0.0; 2]; 2]; 2],
            None,
        )
        .unwrap();
        let result = solve_mfe(&m, 1e-6, 1e-9, 100, 1.0).unwrap();
        assert!(result.converged);
        assert_eq!(result.optimality_gap, 0.0);
    }

    #[test]
    fn reference_model_equilibrium_passes_independent_residuals() {
        let m = presets::reference_model();
        let result = solve_mfe(&m, 1e-6, 1e-8, 500, 1.0).unwrap();
        assert!(result.converged, "restarts: {:?}", result.restarts);
        let (cons, gap) = mfe_residual(&m, &result.policy, &result.flow, result.horizon).unwrap();
        assert!(cons <= 2e-8, "consistency {cons}");
        assert!(gap >= -1e-12);
        assert!(gap <= gap_threshold(&m, result.horizon, 1e-8), "gap {gap}");
    }

    #[test]
    fn anticoordination_model_reports_non_convergence() {
        let m = presets::anticoordination_model();
        let result = solve_mfe(&m, 1e-4, 1e-6, 60, 1.0).unwrap();
        assert!(!result.converged);
        assert!(result.fp_residual > 1e-6);
        assert_eq!(result.restarts.len(), 4);
    }

    #[test]
    fn residual_detects_perturbed_flow() {
        let m = decoupled_model();
        let result = solve_mfe(&m, 1e-6, 1e-9, 50, 1.0).unwrap();
        let mut rows: Vec<Vec<f64>> = result.flow.clone().into();
        // Push TV 0.1 of mass at t = 1.
        rows[1][0] += 0.1;
        rows[1][1] -= 0.1;
        if rows[1][1] < 0.0 {
            rows[1].swap(0, 1);
        }
        let perturbed = MeasureFlow::try_from(rows).unwrap();
        let (cons, _) = mfe_residual(&m, &result.policy, &perturbed, result.horizon).unwrap();
        assert!(cons >= 0.1 - 1e-12);
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        let m = decoupled_model();
        assert!(matches!(
            solve_mfe(&m, 1e-6, 1e-6, 100, 0.0),
            Err(MfeError::InvalidDamping(_))
        ));
        assert!(matches!(
            solve_mfe(&m, 1e-6, 1e-6, 100, 1.5),
            Err(MfeError::InvalidDamping(_))
        ));
        assert!(matches!(
            solve_mfe(&m, -1.0, 1e-6, 100, 0.5),
            Err(MfeError::InvalidTolerance { .. })
        ));
        assert!(matches!(
            solve_mfe(&m, 1e-6, 1e-6, 0, 0.5),
            Err(MfeError::InvalidMaxIter)
        ));
    }
}
