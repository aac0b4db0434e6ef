//! Composite verification of a candidate equilibrium through four
//! independent routes.
//!
//! Given a candidate (policy, flow) pair this module re-derives everything
//! the solver claims, each time through a different code path:
//!
//! 1. **Equilibrium residuals** — flow consistency against the policy's
//!    induced flow and the optimality gap by policy evaluation vs. the
//!    optimal table ([`crate::mfe::mfe_residual`]).
//! 2. **Occupation-measure certificate** — the induced state-action measures
//!    must concentrate on one-step minimizers ([`crate::dp::verify_optimality`]).
//! 3. **Entropy duality** — the exponentiated Isaacs recursion must
//!    reproduce the optimal value table ([`crate::duality::isaacs_values`]).
//! 4. **Augmented-chain equivalence** — forward propagation of the
//!    state-plus-accumulated-cost law must reproduce the multiplicative
//!    policy evaluation ([`crate::augmented::augmented_log_evaluate`]).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augmented::{self, AugmentedError};
use crate::dp::{
    evaluate_policy, finite_horizon_values, induced_state_action_flow, truncation_error_bound,
    verify_optimality, DpError, OptimalityCertificate,
};
use crate::duality::isaacs_values;
use crate::flow::{MarkovPolicy, MeasureFlow};
use crate::mfe::mfe_residual;
use crate::model::MfgModel;
use crate::{real, Real};

/// Largest relative residual tolerated between `exp(W_k)` and `J_k`.
pub const DUALITY_IDENTITY_TOL: f64 = 1e-10;

/// Largest relative error tolerated between the augmented-chain value and the
/// multiplicative policy evaluation.
pub const AUGMENTED_EQUIVALENCE_TOL: f64 = 1e-12;

/// The augmented-chain check runs at most this many steps; the atom count is
/// exponential in the horizon and the identity it certifies holds per
/// horizon, so a prefix check is just as conclusive.
pub const AUGMENTED_CHECK_MAX_HORIZON: usize = 8;

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error(transparent)]
    Dp(#[from] DpError),
    #[error(transparent)]
    Augmented(#[from] AugmentedError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerifyReport<T: Real = f64> {
    pub horizon: usize,
    pub tol: T,
    pub consistency_residual: T,
    pub optimality_gap: T,
    pub gap_threshold: T,
    pub residual_pass: bool,
    pub certificate: OptimalityCertificate<T>,
    pub certificate_pass: bool,
    pub duality_residual: T,
    pub duality_pass: bool,
    pub augmented_horizon: usize,
    pub augmented_relative_error: T,
    pub augmented_pass: bool,
    /// All four checks passed.
    pub pass: bool,
}

/// Runs all four checks on a candidate pair at horizon `n`.
///
/// Pass thresholds: consistency ≤ `tol`; gap ≤ `tol` plus the horizon
/// truncation bound; certificate masses ≥ `1 - tol`; and the two identity
/// checks at their fixed tolerances.
pub fn verify_candidate<T: Real>(
    model: &MfgModel<T>,
    policy: &MarkovPolicy<T>,
    flow: &MeasureFlow<T>,
    n: usize,
    tol: T,
) -> Result<VerifyReport<T>, VerifyError> {
    let (consistency_residual, optimality_gap) = mfe_residual(model, policy, flow, n)?;
    let gap_threshold = tol + truncation_error_bound(model, n);
    let residual_pass = consistency_residual <= tol && optimality_gap <= gap_threshold;

    let saflow = induced_state_action_flow(model, flow, policy, n);
    let certificate = verify_optimality(model, flow, policy, &saflow, tol)?;
    let certificate_pass = certificate.pass;

    let optimal = finite_horizon_values(model, flow, n)?;
    let isaacs = isaacs_values(model, flow, n)?;
    let duality_residual = isaacs.max_identity_residual(&optimal);
    let duality_pass = duality_residual <= real(DUALITY_IDENTITY_TOL);

    let augmented_horizon = n.min(AUGMENTED_CHECK_MAX_HORIZON);
    let log_direct = augmented::augmented_log_evaluate(
        model,
        flow,
        policy,
        augmented_horizon,
        augmented::DEFAULT_ATOM_CAP,
    )?;
    let evaluated = evaluate_policy(model, flow, policy, augmented_horizon)?;
    let log_recursive = evaluated.initial_log_value(model.mu0());
    let augmented_relative_error = (log_direct - log_recursive).exp_m1().abs();
    let augmented_pass = augmented_relative_error <= real(AUGMENTED_EQUIVALENCE_TOL);

    Ok(VerifyReport {
        horizon: n,
        tol,
        consistency_residual,
        optimality_gap,
        gap_threshold,
        residual_pass,
        certificate,
        certificate_pass,
        duality_residual,
        duality_pass,
        augmented_horizon,
        augmented_relative_error,
        augmented_pass,
        pass: residual_pass && certificate_pass && duality_pass && augmented_pass,
    })
}

/// Convenience: run [`verify_candidate`] when no dedicated horizon is known,
/// using the tightest horizon both the policy and the flow cover.
pub fn effective_horizon<T: Real>(policy: &MarkovPolicy<T>, flow: &MeasureFlow<T>) -> usize {
    policy.len().min(flow.len()) - 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mfe::solve_mfe;
    use crate::presets;

    #[test]
    fn solver_output_passes_all_four_checks() {
        let m = presets::reference_model();
        let result = solve_mfe(&m, 1e-5, 1e-8, 500, 1.0).unwrap();
        assert!(result.converged);
        let report =
            verify_candidate(&m, &result.policy, &result.flow, result.horizon, 1e-6).unwrap();
        assert!(report.pass, "{report:?}");
    }

    #[test]
    fn corrupted_policy_fails_the_certificate() {
        let m = presets::reference_model();
        let result = solve_mfe(&m, 1e-5, 1e-8, 500, 1.0).unwrap();
        let mut steps: Vec<Vec<crate::dist::Dist<f64>>> = (0..=result.horizon)
            .map(|t| result.policy.step(t).to_vec())
            .collect();
        // Send every agent to the opposite action at t = 0.
        for x in 0..m.nx() {
            let a = result.policy.pure_action(0, x).unwrap();
            steps[0][x] = crate::dist::Dist::dirac(m.na(), 1 - a);
        }
        let bad = MarkovPolicy::new(steps).unwrap();
        let report = verify_candidate(&m, &bad, &result.flow, result.horizon, 1e-6).unwrap();
        assert!(!report.pass);
        assert!(!report.certificate_pass);
        assert!(report.certificate.masses[0] < 1.0 - 1e-6);
    }
}
