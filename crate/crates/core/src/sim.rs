//! Seedable Monte-Carlo simulation of the finite `N`-agent game.
//!
//! Every replication draws `N` i.i.d. initial states from `μ₀` and then rolls
//! the coupled chain forward: at each step the empirical state distribution
//! `e_t` enters every agent's action cost and transition kernel. The
//! estimator of the risk-sensitive cost is the sample mean of
//! `exp(λ Σ_t β^t c_t)` over replications.
//!
//! Reproducibility contract: one 64-bit master seed; replication `r` draws
//! from an independent ChaCha8 stream (`seed_from_u64(seed)` +
//! `set_stream(r)`), and within a replication agents draw in a fixed
//! time-major, agent-ordered sequence (initial states, then per step all
//! actions followed by all transitions). Replications may execute in
//! parallel; results are merged in replication order, so the output bytes
//! never depend on the thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dist::Dist;
use crate::dp::{evaluate_policy, finite_horizon_values, greedy_policy, DpError};
use crate::flow::{MarkovPolicy, MeasureFlow};
use crate::model::MfgModel;
use crate::{real, Real};

/// Replications processed per parallel batch (fixed so the merge order and
/// memory footprint stay independent of the thread count).
const REPLICATION_BATCH: usize = 512;

/// Joint-chain oracle limits.
pub const ORACLE_MAX_AGENTS: usize = 3;
pub const ORACLE_MAX_HORIZON: usize = 4;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error(
        "joint oracle limits exceeded: num_agents {num_agents} (max {ORACLE_MAX_AGENTS}), \
         horizon {horizon} (max {ORACLE_MAX_HORIZON})"
    )]
    OracleCapExceeded { num_agents: usize, horizon: usize },
    #[error(transparent)]
    Dp(#[from] DpError),
}

/// Simulation configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig<T: Real = f64> {
    pub num_agents: usize,
    /// Costs accumulate over `t = 0..=horizon`.
    pub horizon: usize,
    pub replications: usize,
    pub seed: u64,
    /// Optional deviation policy for agent 1 (index 0); everyone else plays
    /// the shared policy.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deviator_policy: Option<MarkovPolicy<T>>,
    /// When set, per-replication total-variation distances of the empirical
    /// flow to this reference are collected.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_flow: Option<MeasureFlow<T>>,
    /// Keep the full per-replication TV table in the report (it can be
    /// large).
    #[serde(default)]
    pub record_replication_tv: bool,
}

impl<T: Real> SimConfig<T> {
    pub fn new(num_agents: usize, horizon: usize, replications: usize, seed: u64) -> Self {
        SimConfig {
            num_agents,
            horizon,
            replications,
            seed,
            deviator_policy: None,
            reference_flow: None,
            record_replication_tv: false,
        }
    }

    pub fn with_deviator(mut self, policy: MarkovPolicy<T>) -> Self {
        self.deviator_policy = Some(policy);
        self
    }

    pub fn with_reference_flow(mut self, flow: MeasureFlow<T>) -> Self {
        self.reference_flow = Some(flow);
        self
    }
}

/// Monte-Carlo estimates from one simulation run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimReport<T: Real = f64> {
    pub num_agents: usize,
    pub horizon: usize,
    pub replications: usize,
    pub seed: u64,
    /// Per-agent sample mean of `exp(λ Σ β^t c_t)`.
    pub agent_estimates: Vec<T>,
    /// Per-agent standard errors of those means.
    pub agent_stderrs: Vec<T>,
    /// Replication mean of the average estimator over all agents following
    /// the shared policy (`None` when no such agent exists). By agent
    /// exchangeability this estimates the same quantity as any single shared
    /// agent, at lower variance.
    pub pooled_estimate: Option<T>,
    pub pooled_stderr: Option<T>,
    /// Replication mean of the empirical flow, `[t][x]`.
    pub mean_flow: Vec<Vec<T>>,
    /// Mean per-step TV distance of the empirical flow to the reference.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_tv_by_t: Option<Vec<T>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tv_stderr_by_t: Option<Vec<T>>,
    /// Full per-replication TV table `[replication][t]` when requested.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replication_tv: Option<Vec<Vec<T>>>,
}

struct RepOutput<T> {
    agent_values: Vec<T>,
    flow: Vec<Vec<T>>,
    tv: Option<Vec<T>>,
}

fn validate<T: Real>(
    model: &MfgModel<T>,
    shared_policy: &MarkovPolicy<T>,
    cfg: &SimConfig<T>,
) -> Result<(), SimError> {
    if cfg.num_agents == 0 {
        return Err(SimError::InvalidConfig("num_agents must be >= 1".into()));
    }
    if cfg.replications == 0 {
        return Err(SimError::InvalidConfig("replications must be >= 1".into()));
    }
    let check_policy = |name: &str, p: &MarkovPolicy<T>| {
        if p.len() < cfg.horizon + 1 {
            return Err(SimError::InvalidConfig(format!(
                "{name} covers {} steps, horizon needs {}",
                p.len(),
                cfg.horizon + 1
            )));
        }
        if p.nx() != model.nx() || p.na() != model.na() {
            return Err(SimError::InvalidConfig(format!(
                "{name} shape mismatch with the model"
            )));
        }
        Ok(())
    };
    check_policy("shared policy", shared_policy)?;
    if let Some(dev) = &cfg.deviator_policy {
        check_policy("deviator policy", dev)?;
    }
    if let Some(flow) = &cfg.reference_flow {
        if flow.len() < cfg.horizon + 1 || flow.nx() != model.nx() {
            return Err(SimError::InvalidConfig(
                "reference flow must cover the horizon with the model's state count".into(),
            ));
        }
    }
    Ok(())
}

/// Runs the `N`-agent simulation. Deterministic: identical
/// `(model, shared_policy, cfg)` produce identical reports, bit for bit.
pub fn simulate<T: Real>(
    model: &MfgModel<T>,
    shared_policy: &MarkovPolicy<T>,
    cfg: &SimConfig<T>,
) -> Result<SimReport<T>, SimError> {
    validate(model, shared_policy, cfg)?;
    let n = cfg.horizon;
    let num_agents = cfg.num_agents;
    let reps = cfg.replications;

    let mut agent_sum = vec![T::zero(); num_agents];
    let mut agent_sq = vec![T::zero(); num_agents];
    let mut pooled_sum = T::zero();
    let mut pooled_sq = T::zero();
    let mut flow_sum = vec![vec![T::zero(); model.nx()]; n + 1];
    let mut tv_sum = vec![T::zero(); n + 1];
    let mut tv_sq = vec![T::zero(); n + 1];
    let mut replication_tv = cfg
        .record_replication_tv
        .then(|| Vec::with_capacity(reps));

    let pool_start = if cfg.deviator_policy.is_some() { 1 } else { 0 };
    let pool_size = num_agents - pool_start;

    let mut start = 0;
    while start < reps {
        let end = (start + REPLICATION_BATCH).min(reps);
        let batch: Vec<RepOutput<T>> = (start..end)
            .into_par_iter()
            .map(|r| run_replication(model, shared_policy, cfg, r as u64))
            .collect();
        for out in batch {
            for (i, &v) in out.agent_values.iter().enumerate() {
                agent_sum[i] += v;
                agent_sq[i] += v * v;
            }
            if pool_size > 0 {
                let pooled: T = out.agent_values[pool_start..].iter().copied().sum::<T>()
                    / real(pool_size as f64);
                pooled_sum += pooled;
                pooled_sq += pooled * pooled;
            }
            for t in 0..=n {
                for x in 0..model.nx() {
                    flow_sum[t][x] += out.flow[t][x];
                }
            }
            if let Some(tv) = out.tv {
                for t in 0..=n {
                    tv_sum[t] += tv[t];
                    tv_sq[t] += tv[t] * tv[t];
                }
                if let Some(table) = replication_tv.as_mut() {
                    table.push(tv);
                }
            }
        }
        start = end;
    }

    let m = real::<T>(reps as f64);
    let mean_std = |sum: T, sq: T| -> (T, T) {
        let mean = sum / m;
        let stderr = if reps > 1 {
            (((sq - m * mean * mean) / (m - T::one())).max(T::zero()) / m).sqrt()
        } else {
            T::zero()
        };
        (mean, stderr)
    };

    let mut agent_estimates = Vec::with_capacity(num_agents);
    let mut agent_stderrs = Vec::with_capacity(num_agents);
    for i in 0..num_agents {
        let (mean, se) = mean_std(agent_sum[i], agent_sq[i]);
        agent_estimates.push(mean);
        agent_stderrs.push(se);
    }
    let (pooled_estimate, pooled_stderr) = if pool_size > 0 {
        let (mean, se) = mean_std(pooled_sum, pooled_sq);
        (Some(mean), Some(se))
    } else {
        (None, None)
    };
    let mean_flow = flow_sum
        .into_iter()
        .map(|row| row.into_iter().map(|v| v / m).collect())
        .collect();
    let (mean_tv_by_t, tv_stderr_by_t) = if cfg.reference_flow.is_some() {
        let mut means = Vec::with_capacity(n + 1);
        let mut ses = Vec::with_capacity(n + 1);
        for t in 0..=n {
            let (mean, se) = mean_std(tv_sum[t], tv_sq[t]);
            means.push(mean);
            ses.push(se);
        }
        (Some(means), Some(ses))
    } else {
        (None, None)
    };

    Ok(SimReport {
        num_agents,
        horizon: n,
        replications: reps,
        seed: cfg.seed,
        agent_estimates,
        agent_stderrs,
        pooled_estimate,
        pooled_stderr,
        mean_flow,
        mean_tv_by_t,
        tv_stderr_by_t,
        replication_tv,
    })
}

fn run_replication<T: Real>(
    model: &MfgModel<T>,
    shared_policy: &MarkovPolicy<T>,
    cfg: &SimConfig<T>,
    replication: u64,
) -> RepOutput<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(replication);
    let n = cfg.horizon;
    let num_agents = cfg.num_agents;

    let mut states: Vec<usize> = (0..num_agents).map(|_| model.mu0().sample(&mut rng)).collect();
    let mut disc_costs = vec![T::zero(); num_agents];
    let mut flow = Vec::with_capacity(n + 1);
    let mut tv = cfg.reference_flow.as_ref().map(|_| Vec::with_capacity(n + 1));

    for t in 0..=n {
        let empirical = empirical_dist(model.nx(), &states);
        flow.push(empirical.as_slice().to_vec());
        if let (Some(tv), Some(reference)) = (tv.as_mut(), cfg.reference_flow.as_ref()) {
            tv.push(empirical.tv_distance(reference.at(t)));
        }

        let beta_t = model.beta().powi(t as i32);
        let mut actions = Vec::with_capacity(num_agents);
        for (i, &x) in states.iter().enumerate() {
            let policy = match (&cfg.deviator_policy, i) {
                (Some(dev), 0) => dev,
                _ => shared_policy,
            };
            let a = policy.at(t, x).sample(&mut rng);
            disc_costs[i] += beta_t * model.cost_at(x, a, &empirical);
            actions.push(a);
        }
        if t < n {
            let kernels = model.kernel_table(&empirical);
            for i in 0..num_agents {
                states[i] = kernels[states[i]][actions[i]].sample(&mut rng);
            }
        }
    }

    let agent_values = disc_costs
        .iter()
        .map(|&c| (model.lambda() * c).exp())
        .collect();
    RepOutput {
        agent_values,
        flow,
        tv,
    }
}

fn empirical_dist<T: Real>(nx: usize, states: &[usize]) -> Dist<T> {
    let mut counts = vec![T::zero(); nx];
    for &x in states {
        counts[x] += T::one();
    }
    Dist::from_unnormalized(counts).expect("non-empty state configuration")
}

/// SplitMix64 step, used to derive independent master seeds for the
/// population sizes of a convergence study.
fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One row of a population-size convergence study.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceRow<T: Real = f64> {
    pub num_agents: usize,
    pub estimate: T,
    pub stderr: T,
    pub abs_error: T,
    pub mean_tv_by_t: Vec<T>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceStudy<T: Real = f64> {
    /// `J^n(π)` under the reference flow, integrated over `μ₀`.
    pub reference_value: T,
    pub horizon: usize,
    pub replications: usize,
    pub seed: u64,
    pub rows: Vec<ConvergenceRow<T>>,
}

impl<T: Real> ConvergenceStudy<T> {
    /// Least-squares slope of `log(mean TV)` against `log N`, with the TV
    /// averaged over time steps. Around `-1/2` when the empirical flow
    /// concentrates at the law-of-large-numbers rate.
    pub fn log_tv_slope(&self) -> Option<T> {
        let points: Vec<(T, T)> = self
            .rows
            .iter()
            .filter_map(|row| {
                let mean_tv = row.mean_tv_by_t.iter().copied().sum::<T>()
                    / real(row.mean_tv_by_t.len() as f64);
                (mean_tv > T::zero())
                    .then(|| (real::<T>(row.num_agents as f64).ln(), mean_tv.ln()))
            })
            .collect();
        if points.len() < 2 {
            return None;
        }
        let count = real::<T>(points.len() as f64);
        let mx = points.iter().map(|p| p.0).sum::<T>() / count;
        let my = points.iter().map(|p| p.1).sum::<T>() / count;
        let sxy: T = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: T = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
        Some(sxy / sxx)
    }
}

/// Estimates `J_1^{(N),n}` for each population size in `ns` with every agent
/// on `pi`, against the reference value `J^n(π)` computed by policy
/// evaluation under `flow`. Each population size runs with its own derived
/// master seed.
pub fn convergence_study<T: Real>(
    model: &MfgModel<T>,
    pi: &MarkovPolicy<T>,
    flow: &MeasureFlow<T>,
    ns: &[usize],
    horizon: usize,
    replications: usize,
    seed: u64,
) -> Result<ConvergenceStudy<T>, SimError> {
    let table = evaluate_policy(model, flow, pi, horizon)?;
    let reference_value = table.initial_value(model.mu0());
    let mut rows = Vec::with_capacity(ns.len());
    for &num_agents in ns {
        let cfg = SimConfig::new(num_agents, horizon, replications, mix_seed(seed, num_agents as u64))
            .with_reference_flow(flow.clone());
        let report = simulate(model, pi, &cfg)?;
        let estimate = report.pooled_estimate.expect("no deviator, pool is non-empty");
        let stderr = report.pooled_stderr.expect("no deviator, pool is non-empty");
        rows.push(ConvergenceRow {
            num_agents,
            estimate,
            stderr,
            abs_error: (estimate - reference_value).abs(),
            mean_tv_by_t: report.mean_tv_by_t.expect("reference flow was set"),
        });
    }
    Ok(ConvergenceStudy {
        reference_value,
        horizon,
        replications,
        seed,
        rows,
    })
}

/// Monte-Carlo Nash-gap estimate for agent 1 at population size `num_agents`:
/// the difference between its cost with everyone on `pi` and its cost when it
/// unilaterally deviates to the best response against `flow` (computed by
/// dynamic programming). Both runs share the master seed (common random
/// numbers). The gap may come out negative within noise; it is reported
/// as-is.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NashGapReport<T: Real = f64> {
    pub num_agents: usize,
    pub horizon: usize,
    pub replications: usize,
    pub seed: u64,
    pub equilibrium_value: T,
    pub equilibrium_stderr: T,
    pub deviation_value: T,
    pub deviation_stderr: T,
    pub gap_estimate: T,
    pub combined_stderr: T,
    /// The deviation policy used for agent 1.
    pub best_response: MarkovPolicy<T>,
}

pub fn nash_gap<T: Real>(
    model: &MfgModel<T>,
    pi: &MarkovPolicy<T>,
    flow: &MeasureFlow<T>,
    num_agents: usize,
    horizon: usize,
    replications: usize,
    seed: u64,
) -> Result<NashGapReport<T>, SimError> {
    let table = finite_horizon_values(model, flow, horizon)?;
    let best_response = greedy_policy(model, flow, &table);

    let eq_cfg = SimConfig::new(num_agents, horizon, replications, seed);
    let eq = simulate(model, pi, &eq_cfg)?;
    let dev_cfg =
        SimConfig::new(num_agents, horizon, replications, seed).with_deviator(best_response.clone());
    let dev = simulate(model, pi, &dev_cfg)?;

    let gap = eq.agent_estimates[0] - dev.agent_estimates[0];
    let combined = (eq.agent_stderrs[0] * eq.agent_stderrs[0]
        + dev.agent_stderrs[0] * dev.agent_stderrs[0])
        .sqrt();
    Ok(NashGapReport {
        num_agents,
        horizon,
        replications,
        seed,
        equilibrium_value: eq.agent_estimates[0],
        equilibrium_stderr: eq.agent_stderrs[0],
        deviation_value: dev.agent_estimates[0],
        deviation_stderr: dev.agent_stderrs[0],
        gap_estimate: gap,
        combined_stderr: combined,
        best_response,
    })
}

/// Exact values from the joint dynamic program over all agents' states.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JointOracleReport<T: Real = f64> {
    /// Agent 1's exact optimal value against the others' fixed policy, over
    /// deviations measurable in the full joint state.
    pub best_response_value: T,
    /// Agent 1's exact value when it follows the others' policy too.
    pub equilibrium_value: T,
    /// `equilibrium_value - best_response_value ≥ 0`.
    pub gap: T,
}

/// Exact joint dynamic program at tiny population sizes: agents `2..N` follow
/// `others_policy`; the empirical measure is a deterministic function of the
/// joint state, so the joint chain is Markov and agent 1's best response is
/// computable by backward induction over joint states. The multiplicative
/// objective makes the accumulated cost a positive constant at every decision
/// point, so no cost coordinate is needed in the recursion.
pub fn joint_dp_oracle<T: Real>(
    model: &MfgModel<T>,
    others_policy: &MarkovPolicy<T>,
    num_agents: usize,
    horizon: usize,
) -> Result<JointOracleReport<T>, SimError> {
    if num_agents == 0 || num_agents > ORACLE_MAX_AGENTS || horizon > ORACLE_MAX_HORIZON {
        return Err(SimError::OracleCapExceeded {
            num_agents,
            horizon,
        });
    }
    if others_policy.len() < horizon + 1 {
        return Err(SimError::InvalidConfig(format!(
            "others_policy covers {} steps, horizon needs {}",
            others_policy.len(),
            horizon + 1
        )));
    }
    let nx = model.nx();
    let na = model.na();
    let joint_states = nx.pow(num_agents as u32);
    let decode = |s: usize| -> Vec<usize> {
        let mut xs = Vec::with_capacity(num_agents);
        let mut rem = s;
        for _ in 0..num_agents {
            xs.push(rem % nx);
            rem /= nx;
        }
        xs
    };

    let mut v_br = vec![T::one(); joint_states];
    let mut v_eq = vec![T::one(); joint_states];
    for t in (0..=horizon).rev() {
        let beta_t = model.beta().powi(t as i32);
        let mut next_br = vec![T::zero(); joint_states];
        let mut next_eq = vec![T::zero(); joint_states];
        for s in 0..joint_states {
            let xs = decode(s);
            let empirical = empirical_dist::<T>(nx, &xs);
            let kernels = model.kernel_table(&empirical);

            // inner[a1][·] = E over the others' actions and all transitions
            // of the continuation value, for both continuation tables.
            let mut inner_br = vec![T::zero(); na];
            let mut inner_eq = vec![T::zero(); na];
            let mut others = vec![0usize; num_agents - 1];
            loop {
                let mut weight = T::one();
                for (j, &a) in others.iter().enumerate() {
                    weight *= others_policy.at(t, xs[j + 1]).weight(a);
                }
                if weight > T::zero() {
                    for a1 in 0..na {
                        let mut actions = Vec::with_capacity(num_agents);
                        actions.push(a1);
                        actions.extend_from_slice(&others);
                        let (tbr, teq) =
                            transition_sums(&xs, &actions, &kernels, &v_br, &v_eq, nx);
                        inner_br[a1] += weight * tbr;
                        inner_eq[a1] += weight * teq;
                    }
                }
                // Mixed-radix increment over the others' action profile.
                let mut idx = 0;
                loop {
                    if idx == others.len() {
                        break;
                    }
                    others[idx] += 1;
                    if others[idx] < na {
                        break;
                    }
                    others[idx] = 0;
                    idx += 1;
                }
                if idx == others.len() {
                    break;
                }
            }

            let factor =
                |a1: usize| (model.lambda() * beta_t * model.cost_at(xs[0], a1, &empirical)).exp();
            next_br[s] = (0..na)
                .map(|a1| factor(a1) * inner_br[a1])
                .fold(T::infinity(), T::min);
            next_eq[s] = (0..na)
                .map(|a1| others_policy.at(t, xs[0]).weight(a1) * factor(a1) * inner_eq[a1])
                .sum();
        }
        v_br = next_br;
        v_eq = next_eq;
    }

    let mut best_response_value = T::zero();
    let mut equilibrium_value = T::zero();
    for s in 0..joint_states {
        let xs = decode(s);
        let weight = xs
            .iter()
            .map(|&x| model.mu0().weight(x))
            .fold(T::one(), |a, b| a * b);
        best_response_value += weight * v_br[s];
        equilibrium_value += weight * v_eq[s];
    }
    Ok(JointOracleReport {
        best_response_value,
        equilibrium_value,
        gap: equilibrium_value - best_response_value,
    })
}

/// `Σ_{y_1..y_N} Π_i p(y_i|x_i,a_i) V(y)` for both continuation tables at
/// once.
fn transition_sums<T: Real>(
    xs: &[usize],
    actions: &[usize],
    kernels: &[Vec<Dist<T>>],
    v_br: &[T],
    v_eq: &[T],
    nx: usize,
) -> (T, T) {
    fn recurse<T: Real>(
        agent: usize,
        index: usize,
        prob: T,
        xs: &[usize],
        actions: &[usize],
        kernels: &[Vec<Dist<T>>],
        v_br: &[T],
        v_eq: &[T],
        nx: usize,
        stride: usize,
        acc: &mut (T, T),
    ) {
        if agent == xs.len() {
            acc.0 += prob * v_br[index];
            acc.1 += prob * v_eq[index];
            return;
        }
        let row = &kernels[xs[agent]][actions[agent]];
        for (y, py) in row.support() {
            recurse(
                agent + 1,
                index + y * stride,
                prob * py,
                xs,
                actions,
                kernels,
                v_br,
                v_eq,
                nx,
                stride * nx,
                acc,
            );
        }
    }
    let mut acc = (T::zero(), T::zero());
    recurse(0, 0, T::one(), xs, actions, kernels, v_br, v_eq, nx, 1, &mut acc);
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exhaustive;
    use crate::presets;

    fn zero_cost_model() -> MfgModel<f64> {
        MfgModel::new(
            0.5,
            1.0,
            Dist::uniform(2),
            vec![
                vec![vec![Dist::new(vec![0.7, 0.3]).unwrap(); 2]; 2],
                vec![vec![Dist::new(vec![0.2, 0.8]).unwrap(); 2]; 2],
            ],
            vec![vec![vec![0.0; 2]; 2]; 2],
            None,
        )
        .unwrap()
    }

    #[test]
    fn zero_cost_estimates_are_exactly_one() {
        let m = zero_cost_model();
        let pi = MarkovPolicy::uniform(4, 2, 2);
        let report = simulate(&m, &pi, &SimConfig::new(5, 3, 200, 9)).unwrap();
        for (v, se) in report.agent_estimates.iter().zip(&report.agent_stderrs) {
            assert_eq!(*v, 1.0);
            assert_eq!(*se, 0.0);
        }
        assert_eq!(report.pooled_estimate, Some(1.0));
    }

    #[test]
    fn identical_seeds_give_identical_bytes() {
        let m = presets::reference_model();
        let pi = MarkovPolicy::uniform(4, 2, 2);
        let cfg = SimConfig::new(7, 3, 300, 4242)
            .with_reference_flow(MeasureFlow::constant(m.mu0().clone(), 4));
        let a = serde_json::to_string(&simulate(&m, &pi, &cfg).unwrap()).unwrap();
        let b = serde_json::to_string(&simulate(&m, &pi, &cfg).unwrap()).unwrap();
        assert_eq!(a, b);
        let other = SimConfig { seed: 4243, ..cfg };
        let c = serde_json::to_string(&simulate(&m, &pi, &other).unwrap()).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn single_agent_estimate_matches_self_coupled_enumeration() {
        let m = presets::reference_model();
        let n = 3;
        let pi = presets::random_policy(
            &mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(71),
            2,
            2,
            n + 1,
        );
        let exact = exhaustive::exact_joint_agent1_value(&m, &[&pi], n);
        let report = simulate(&m, &pi, &SimConfig::new(1, n, 40_000, 2024)).unwrap();
        let (est, se) = (report.agent_estimates[0], report.agent_stderrs[0]);
        assert!(
            (est - exact).abs() <= 3.0 * se,
            "estimate {est} exact {exact} stderr {se}"
        );
    }

    #[test]
    fn two_agent_estimate_matches_joint_enumeration() {
        let m = presets::reference_model();
        let n = 2;
        let pi = MarkovPolicy::uniform(n + 1, 2, 2);
        let exact = exhaustive::exact_joint_agent1_value(&m, &[&pi, &pi], n);
        let report = simulate(&m, &pi, &SimConfig::new(2, n, 40_000, 77)).unwrap();
        let (est, se) = (report.agent_estimates[0], report.agent_stderrs[0]);
        assert!(
            (est - exact).abs() <= 3.0 * se,
            "estimate {est} exact {exact} stderr {se}"
        );
    }

    #[test]
    fn joint_oracle_equilibrium_value_matches_enumeration() {
        let m = presets::reference_model();
        let n = 2;
        let pi = presets::random_policy(
            &mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(72),
            2,
            2,
            n + 1,
        );
        let oracle = joint_dp_oracle(&m, &pi, 2, n).unwrap();
        let exact = exhaustive::exact_joint_agent1_value(&m, &[&pi, &pi], n);
        assert!(
            (oracle.equilibrium_value - exact).abs() <= 1e-12 * exact,
            "{} vs {exact}",
            oracle.equilibrium_value
        );
        assert!(oracle.gap >= -1e-12);
    }

    #[test]
    fn joint_oracle_zero_cost_values_are_one() {
        let m = zero_cost_model();
        let pi = MarkovPolicy::uniform(3, 2, 2);
        let oracle = joint_dp_oracle(&m, &pi, 2, 2).unwrap();
        assert!((oracle.best_response_value - 1.0).abs() < 1e-12);
        assert!((oracle.equilibrium_value - 1.0).abs() < 1e-12);
        assert!(oracle.gap.abs() < 1e-12);
    }

    #[test]
    fn joint_oracle_caps_are_enforced() {
        let m = presets::reference_model();
        let pi = MarkovPolicy::uniform(6, 2, 2);
        assert!(matches!(
            joint_dp_oracle(&m, &pi, 4, 2),
            Err(SimError::OracleCapExceeded { .. })
        ));
        assert!(matches!(
            joint_dp_oracle(&m, &pi, 2, 5),
            Err(SimError::OracleCapExceeded { .. })
        ));
    }

    #[test]
    fn convergence_study_orders_populations_and_derives_seeds() {
        let m = presets::reference_model();
        let n = 3;
        let flow = crate::mfe::lambda_map(&m, &MarkovPolicy::uniform(n + 1, 2, 2), n);
        let pi = MarkovPolicy::uniform(n + 1, 2, 2);
        let study = convergence_study(&m, &pi, &flow, &[5, 20], n, 500, 31).unwrap();
        assert_eq!(study.rows.len(), 2);
        assert!(study.rows[0].mean_tv_by_t.len() == n + 1);
        assert!(study.reference_value >= 1.0);
        assert!(study.log_tv_slope().is_some());
    }

    #[test]
    fn nash_gap_on_decoupled_model_is_noise() {
        // Kernel and cost independent of the mean field: deviating from the
        // optimal policy cannot help, and with the best response *equal* to
        // the shared policy the gap is exactly zero under common random
        // numbers.
        let m: MfgModel = {
            let rows = vec![
                vec![
                    Dist::new(vec![0.8, 0.2]).unwrap(),
                    Dist::new(vec![0.3, 0.7]).unwrap(),
                ],
                vec![
                    Dist::new(vec![0.5, 0.5]).unwrap(),
                    Dist::new(vec![0.1, 0.9]).unwrap(),
                ],
            ];
            MfgModel::new(
                0.5,
                1.0,
                Dist::uniform(2),
                vec![rows.clone(), rows],
                vec![
                    vec![vec![0.2, 0.2], vec![0.6, 0.6]],
                    vec![vec![0.7, 0.7], vec![0.1, 0.1]],
                ],
                None,
            )
            .unwrap()
        };
        let n = 3;
        let result = crate::mfe::solve_mfe(&m, 1e-4, 1e-9, 50, 1.0).unwrap();
        assert!(result.converged);
        let flow_short = MeasureFlow::new(
            (0..=n).map(|t| result.flow.at(t).clone()).collect(),
        )
        .unwrap();
        let policy_short = MarkovPolicy::new(
            (0..=n).map(|t| result.policy.step(t).to_vec()).collect(),
        )
        .unwrap();
        let report = nash_gap(&m, &policy_short, &flow_short, 6, n, 2_000, 5).unwrap();
        assert!(
            report.gap_estimate.abs() <= 3.0 * report.combined_stderr.max(1e-15),
            "gap {} stderr {}",
            report.gap_estimate,
            report.combined_stderr
        );
    }
}
