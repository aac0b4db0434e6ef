//! The finite mean-field game model and its file format.
//!
//! The population couples into a generic agent's dynamics and cost through a
//! mixture family: with `μ` the population state distribution,
//!
//! ```text
//!     p(·|x, a, μ) = Σ_z μ(z) · K_z(·|x, a)
//!     c(x, a, μ)   = Σ_z μ(z) · C(x, a, z)
//! ```
//!
//! Affinity in `μ` keeps `p(·|x,a,μ)` a probability vector for every `μ` and
//! makes the total-variation moduli of continuity exact Lipschitz constants,
//! computable in closed form (see [`MfgModel::lipschitz_constants`]).

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dist::Dist;
use crate::{real, Real};

/// Above this bound on `λK/(1-β)` the exponentiated values risk overflow and
/// the dynamic programming layer switches to log-space recursions.
pub const LOG_SPACE_EXPONENT_BOUND: f64 = 500.0;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("failed to read model file: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to parse model file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
}

fn invalid(path: impl Into<String>, message: impl Into<String>) -> ModelError {
    ModelError::Invalid {
        path: path.into(),
        message: message.into(),
    }
}

/// On-disk representation. All arrays are row-major nested JSON arrays;
/// `kernel_mix` is indexed `[z][x][a][y]` (outer index the mixing state `z`,
/// innermost the next state `y`) and `cost_mix` is indexed `[x][a][z]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile<T = f64> {
    pub num_states: usize,
    pub num_actions: usize,
    pub beta: T,
    pub lambda: T,
    pub mu0: Vec<T>,
    pub kernel_mix: Vec<Vec<Vec<Vec<T>>>>,
    pub cost_mix: Vec<Vec<Vec<T>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cost_bound: Option<T>,
}

/// A validated finite risk-sensitive mean-field game model.
///
/// Immutable after construction; every method is a pure function, safe to
/// call concurrently.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "ModelFile<T>", try_from = "ModelFile<T>")]
pub struct MfgModel<T: Real = f64> {
    nx: usize,
    na: usize,
    beta: T,
    lambda: T,
    mu0: Dist<T>,
    /// `kernel_mix[z][x][a]` is the next-state distribution of component `z`.
    kernel_mix: Vec<Vec<Vec<Dist<T>>>>,
    /// `cost_mix[x][a][z]` in `[0, cost_bound]`.
    cost_mix: Vec<Vec<Vec<T>>>,
    cost_bound: T,
}

impl<T: Real> MfgModel<T> {
    pub fn new(
        beta: T,
        lambda: T,
        mu0: Dist<T>,
        kernel_mix: Vec<Vec<Vec<Dist<T>>>>,
        cost_mix: Vec<Vec<Vec<T>>>,
        cost_bound: Option<T>,
    ) -> Result<Self, ModelError> {
        let nx = mu0.len();
        let na = cost_mix
            .first()
            .map(|row| row.len())
            .ok_or_else(|| invalid("cost_mix", "must have one row per state"))?;

        if !(beta > T::zero() && beta < T::one()) {
            return Err(invalid(
                "beta",
                format!("beta must lie in open interval (0, 1), got {beta}"),
            ));
        }
        if !(lambda > T::zero() && lambda.is_finite()) {
            return Err(invalid(
                "lambda",
                format!("lambda must be positive, got {lambda}"),
            ));
        }
        if nx == 0 {
            return Err(invalid("mu0", "state space must be non-empty"));
        }
        if na == 0 {
            return Err(invalid("cost_mix[0]", "action space must be non-empty"));
        }

        if kernel_mix.len() != nx {
            return Err(invalid(
                "kernel_mix",
                format!("expected {nx} mixture components, got {}", kernel_mix.len()),
            ));
        }
        for (z, per_state) in kernel_mix.iter().enumerate() {
            if per_state.len() != nx {
                return Err(invalid(
                    format!("kernel_mix[{z}]"),
                    format!("expected {nx} states, got {}", per_state.len()),
                ));
            }
            for (x, per_action) in per_state.iter().enumerate() {
                if per_action.len() != na {
                    return Err(invalid(
                        format!("kernel_mix[{z}][{x}]"),
                        format!("expected {na} actions, got {}", per_action.len()),
                    ));
                }
                for (a, row) in per_action.iter().enumerate() {
                    if row.len() != nx {
                        return Err(invalid(
                            format!("kernel_mix[{z}][{x}][{a}]"),
                            format!("expected {nx} next-state weights, got {}", row.len()),
                        ));
                    }
                }
            }
        }

        if cost_mix.len() != nx {
            return Err(invalid(
                "cost_mix",
                format!("expected {nx} states, got {}", cost_mix.len()),
            ));
        }
        let mut max_cost = T::zero();
        for (x, per_action) in cost_mix.iter().enumerate() {
            if per_action.len() != na {
                return Err(invalid(
                    format!("cost_mix[{x}]"),
                    format!("expected {na} actions, got {}", per_action.len()),
                ));
            }
            for (a, per_z) in per_action.iter().enumerate() {
                if per_z.len() != nx {
                    return Err(invalid(
                        format!("cost_mix[{x}][{a}]"),
                        format!("expected {nx} components, got {}", per_z.len()),
                    ));
                }
                for (z, &c) in per_z.iter().enumerate() {
                    if c < T::zero() || !c.is_finite() {
                        return Err(invalid(
                            format!("cost_mix[{x}][{a}][{z}]"),
                            format!("cost must be finite and non-negative, got {c}"),
                        ));
                    }
                    max_cost = max_cost.max(c);
                }
            }
        }

        // Tightest valid bound when omitted; an explicit bound must dominate
        // every entry.
        let cost_bound = match cost_bound {
            Some(k) => {
                if k < max_cost {
                    return Err(invalid(
                        "cost_bound",
                        format!("cost_bound {k} is below the largest cost entry {max_cost}"),
                    ));
                }
                k
            }
            None => max_cost,
        };

        Ok(MfgModel {
            nx,
            na,
            beta,
            lambda,
            mu0,
            kernel_mix,
            cost_mix,
            cost_bound,
        })
    }

    /// Loads and validates a model from a JSON file.
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, ModelError>
    where
        T: serde::de::DeserializeOwned,
    {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }

    pub fn from_json_str(text: &str) -> Result<Self, ModelError>
    where
        T: serde::de::DeserializeOwned,
    {
        let file: ModelFile<T> = serde_json::from_str(text)?;
        Self::try_from(file)
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn na(&self) -> usize {
        self.na
    }

    pub fn beta(&self) -> T {
        self.beta
    }

    pub fn lambda(&self) -> T {
        self.lambda
    }

    pub fn mu0(&self) -> &Dist<T> {
        &self.mu0
    }

    /// The cost bound `K` with `0 ≤ c(x,a,μ) ≤ K`.
    pub fn cost_bound(&self) -> T {
        self.cost_bound
    }

    pub fn kernel_component(&self, z: usize, x: usize, a: usize) -> &Dist<T> {
        &self.kernel_mix[z][x][a]
    }

    pub fn cost_component(&self, x: usize, a: usize, z: usize) -> T {
        self.cost_mix[x][a][z]
    }

    /// Mean-field-coupled transition law `p(·|x, a, μ) = Σ_z μ(z) K_z(·|x, a)`.
    pub fn kernel_at(&self, x: usize, a: usize, mu: &Dist<T>) -> Dist<T> {
        assert!(x < self.nx, "state index {x} out of range");
        assert!(a < self.na, "action index {a} out of range");
        assert_eq!(mu.len(), self.nx, "mean-field term has wrong length");
        let mut weights = vec![T::zero(); self.nx];
        for (z, wz) in mu.support() {
            for (y, w) in weights.iter_mut().enumerate() {
                *w += wz * self.kernel_mix[z][x][a].weight(y);
            }
        }
        Dist::from_unnormalized(weights).expect("mixture of distributions is a distribution")
    }

    /// Mean-field-coupled one-stage cost `c(x, a, μ) = Σ_z μ(z) C(x, a, z)`.
    pub fn cost_at(&self, x: usize, a: usize, mu: &Dist<T>) -> T {
        assert!(x < self.nx, "state index {x} out of range");
        assert!(a < self.na, "action index {a} out of range");
        assert_eq!(mu.len(), self.nx, "mean-field term has wrong length");
        mu.dot(&self.cost_mix[x][a])
    }

    /// All mixed kernel rows at a fixed mean-field term, indexed `[x][a]`.
    pub fn kernel_table(&self, mu: &Dist<T>) -> Vec<Vec<Dist<T>>> {
        (0..self.nx)
            .map(|x| (0..self.na).map(|a| self.kernel_at(x, a, mu)).collect())
            .collect()
    }

    /// Exact Lipschitz constants `(Lp, Lc)` of the kernel and the cost with
    /// respect to the mean-field term in total-variation distance:
    ///
    /// ```text
    ///     Lp = max_{x,a} max_{z,z'} ‖K_z(·|x,a) - K_z'(·|x,a)‖_TV
    ///     Lc = max_{x,a} max_{z,z'} |C(x,a,z) - C(x,a,z')|
    /// ```
    ///
    /// so that `‖p(·|x,a,μ) - p(·|x,a,μ')‖_TV ≤ Lp·‖μ-μ'‖_TV` and
    /// `|c(x,a,μ) - c(x,a,μ')| ≤ Lc·‖μ-μ'‖_TV`, with equality attained at a
    /// pair of distributions moving mass between the extremal components.
    pub fn lipschitz_constants(&self) -> (T, T) {
        let mut lp = T::zero();
        let mut lc = T::zero();
        for x in 0..self.nx {
            for a in 0..self.na {
                for z in 0..self.nx {
                    for z2 in (z + 1)..self.nx {
                        let tv = self.kernel_mix[z][x][a].tv_distance(&self.kernel_mix[z2][x][a]);
                        lp = lp.max(tv);
                        let dc = (self.cost_mix[x][a][z] - self.cost_mix[x][a][z2]).abs();
                        lc = lc.max(dc);
                    }
                }
            }
        }
        (lp, lc)
    }

    /// `λK/(1-β)`, the exponent bound of any discounted value.
    pub fn exponent_bound(&self) -> T {
        self.lambda * self.cost_bound / (T::one() - self.beta)
    }

    /// True when exponentiated values may overflow `f64` range comfort and
    /// the dynamic programming layer should use log-space recursions.
    pub fn log_space_recommended(&self) -> bool {
        self.exponent_bound() > real(LOG_SPACE_EXPONENT_BOUND)
    }

    /// Human-readable load-time warnings (currently only the overflow-risk
    /// notice that triggers log-space recursions).
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.log_space_recommended() {
            out.push(format!(
                "lambda*K/(1-beta) = {} exceeds {}; value recursions switch to log space",
                self.exponent_bound(),
                LOG_SPACE_EXPONENT_BOUND,
            ));
        }
        out
    }
}

impl<T: Real> TryFrom<ModelFile<T>> for MfgModel<T> {
    type Error = ModelError;

    fn try_from(file: ModelFile<T>) -> Result<Self, ModelError> {
        let nx = file.num_states;
        let na = file.num_actions;
        if file.mu0.len() != nx {
            return Err(invalid(
                "mu0",
                format!("expected {nx} weights, got {}", file.mu0.len()),
            ));
        }
        let mu0 = Dist::new(file.mu0).map_err(|e| invalid("mu0", e.to_string()))?;

        if file.kernel_mix.len() != nx {
            return Err(invalid(
                "kernel_mix",
                format!(
                    "expected {nx} mixture components, got {}",
                    file.kernel_mix.len()
                ),
            ));
        }
        let mut kernel_mix = Vec::with_capacity(nx);
        for (z, per_state) in file.kernel_mix.into_iter().enumerate() {
            if per_state.len() != nx {
                return Err(invalid(
                    format!("kernel_mix[{z}]"),
                    format!("expected {nx} states, got {}", per_state.len()),
                ));
            }
            let mut rows_per_state = Vec::with_capacity(nx);
            for (x, per_action) in per_state.into_iter().enumerate() {
                if per_action.len() != na {
                    return Err(invalid(
                        format!("kernel_mix[{z}][{x}]"),
                        format!("expected {na} actions, got {}", per_action.len()),
                    ));
                }
                let mut rows = Vec::with_capacity(na);
                for (a, row) in per_action.into_iter().enumerate() {
                    let dist = Dist::new(row)
                        .map_err(|e| invalid(format!("kernel_mix[{z}][{x}][{a}]"), e.to_string()))?;
                    if dist.len() != nx {
                        return Err(invalid(
                            format!("kernel_mix[{z}][{x}][{a}]"),
                            format!("expected {nx} next-state weights, got {}", dist.len()),
                        ));
                    }
                    rows.push(dist);
                }
                rows_per_state.push(rows);
            }
            kernel_mix.push(rows_per_state);
        }

        if na == 0 {
            return Err(invalid("num_actions", "action space must be non-empty"));
        }
        MfgModel::new(
            file.beta,
            file.lambda,
            mu0,
            kernel_mix,
            file.cost_mix,
            file.cost_bound,
        )
    }
}

impl<T: Real> From<MfgModel<T>> for ModelFile<T> {
    fn from(m: MfgModel<T>) -> ModelFile<T> {
        ModelFile {
            num_states: m.nx,
            num_actions: m.na,
            beta: m.beta,
            lambda: m.lambda,
            mu0: m.mu0.into(),
            kernel_mix: m
                .kernel_mix
                .into_iter()
                .map(|per_state| {
                    per_state
                        .into_iter()
                        .map(|per_action| per_action.into_iter().map(Vec::from).collect())
                        .collect()
                })
                .collect(),
            cost_mix: m.cost_mix,
            cost_bound: Some(m.cost_bound),
        }
    }
}

/// Loads and validates a model from a JSON file (free-function form).
pub fn load_model<T: Real + serde::de::DeserializeOwned>(
    path: impl AsRef<Path>,
) -> Result<MfgModel<T>, ModelError> {
    MfgModel::from_path(path)
}
