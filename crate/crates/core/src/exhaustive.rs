//! Brute-force enumeration oracles.
//!
//! Everything here computes expectations by explicit sums over trajectories
//! or over whole policy spaces, never by backward recursions with embedded
//! minimization — these are the ground-truth counterparts the dynamic
//! programming and Monte-Carlo layers are tested against. Costs are
//! exponential in the horizon and the population size; callers keep the
//! instances tiny.

use itertools::Itertools;

use crate::dist::Dist;
use crate::flow::{MarkovPolicy, MeasureFlow};
use crate::model::MfgModel;
use crate::Real;

/// Hard cap on the number of intermediate tables the policy-space
/// enumeration may materialize.
const ENUMERATION_CAP: usize = 20_000_000;

/// `E[ exp(λ Σ_{t=0}^n β^t c_t) | x(0) = x ]` for each initial state, by a
/// depth-first weighted sum over all action/state trajectories.
pub fn exact_policy_values<T: Real>(
    model: &MfgModel<T>,
    flow: &MeasureFlow<T>,
    pi: &MarkovPolicy<T>,
    n: usize,
) -> Vec<T> {
    assert!(flow.len() >= n + 1, "flow must cover the horizon");
    assert!(pi.len() >= n + 1, "policy must cover the horizon");
    (0..model.nx())
        .map(|x0| {
            let mut acc = T::zero();
            walk_paths(model, flow, pi, n, 0, x0, T::one(), T::zero(), &mut |p, cost| {
                acc += p * (model.lambda() * cost).exp();
            });
            acc
        })
        .collect()
}

/// Risk-neutral mean and variance of the discounted cost `Σ_{t=0}^n β^t c_t`
/// per initial state, by the same trajectory sum.
pub fn exact_discounted_moments<T: Real>(
    model: &MfgModel<T>,
    flow: &MeasureFlow<T>,
    pi: &MarkovPolicy<T>,
    n: usize,
) -> Vec<(T, T)> {
    (0..model.nx())
        .map(|x0| {
            let mut mean = T::zero();
            let mut second = T::zero();
            walk_paths(model, flow, pi, n, 0, x0, T::one(), T::zero(), &mut |p, cost| {
                mean += p * cost;
                second += p * cost * cost;
            });
            (mean, (second - mean * mean).max(T::zero()))
        })
        .collect()
}

fn walk_paths<T: Real>(
    model: &MfgModel<T>,
    flow: &MeasureFlow<T>,
    pi: &MarkovPolicy<T>,
    n: usize,
    t: usize,
    x: usize,
    prob: T,
    disc_cost: T,
    leaf: &mut impl FnMut(T, T),
) {
    let mu = flow.at(t);
    let beta_t = model.beta().powi(t as i32);
    for (a, pa) in pi.at(t, x).support() {
        let cost = disc_cost + beta_t * model.cost_at(x, a, mu);
        let p = prob * pa;
        if t == n {
            leaf(p, cost);
        } else {
            let trans = model.kernel_at(x, a, mu);
            for (y, py) in trans.support() {
                walk_paths(model, flow, pi, n, t + 1, y, p * py, cost, leaf);
            }
        }
    }
}

/// Number of per-step action profiles (maps state → action).
fn profile_count(nx: usize, na: usize) -> usize {
    na.checked_pow(nx as u32).expect("profile count overflow")
}

fn profile_action(profile: usize, x: usize, na: usize) -> usize {
    (profile / na.pow(x as u32)) % na
}

/// Entry-wise minimum, over **every** deterministic Markov policy sequence,
/// of the exact trajectory expectation — the brute-force counterpart of the
/// optimal value table's first row.
///
/// The per-policy expectations are organized by suffix sharing: the table for
/// a decision suffix `(σ_k, …, σ_n)` is built from the table of
/// `(σ_{k+1}, …, σ_n)` by one weighted sum, which is the trajectory sum with
/// common prefixes factored out. No minimization happens until every policy
/// has been expanded.
pub fn exact_optimal_values<T: Real>(
    model: &MfgModel<T>,
    flow: &MeasureFlow<T>,
    n: usize,
) -> Vec<T> {
    assert!(flow.len() >= n + 1, "flow must cover the horizon");
    let nx = model.nx();
    let na = model.na();
    let profiles = profile_count(nx, na);
    assert!(
        profiles
            .checked_pow(n as u32)
            .map(|c| c <= ENUMERATION_CAP)
            .unwrap_or(false),
        "policy space too large for exhaustive enumeration"
    );

    // Frozen one-step data: factor[k][x][a] = exp(lambda beta^k c_k(x,a)).
    let factor: Vec<Vec<Vec<T>>> = (0..=n)
        .map(|k| {
            let scale = model.lambda() * model.beta().powi(k as i32);
            (0..nx)
                .map(|x| {
                    (0..na)
                        .map(|a| (scale * model.cost_at(x, a, flow.at(k))).exp())
                        .collect()
                })
                .collect()
        })
        .collect();
    let kernels: Vec<Vec<Vec<Dist<T>>>> = (0..=n).map(|k| model.kernel_table(flow.at(k))).collect();

    let compose = |k: usize, profile: usize, suffix: &[T]| -> Vec<T> {
        (0..nx)
            .map(|x| {
                let a = profile_action(profile, x, na);
                factor[k][x][a] * kernels[k][x][a].dot(suffix)
            })
            .collect()
    };

    // Tables for suffixes starting at the terminal step.
    let mut tables: Vec<Vec<T>> = (0..profiles)
        .map(|p| {
            (0..nx)
                .map(|x| factor[n][x][profile_action(p, x, na)])
                .collect()
        })
        .collect();
    if n == 0 {
        return entrywise_min(&tables, nx);
    }
    for k in (1..n).rev() {
        let mut next = Vec::with_capacity(profiles * tables.len());
        for p in 0..profiles {
            for suffix in &tables {
                next.push(compose(k, p, suffix));
            }
        }
        tables = next;
    }
    let mut best = vec![T::infinity(); nx];
    for p in 0..profiles {
        for suffix in &tables {
            let v = compose(0, p, suffix);
            for x in 0..nx {
                best[x] = best[x].min(v[x]);
            }
        }
    }
    best
}

fn entrywise_min<T: Real>(tables: &[Vec<T>], nx: usize) -> Vec<T> {
    let mut best = vec![T::infinity(); nx];
    for t in tables {
        for x in 0..nx {
            best[x] = best[x].min(t[x]);
        }
    }
    best
}

/// Visits every deterministic Markov policy sequence (ascending in the
/// action-table encoding) together with its exact per-state trajectory
/// expectation. Only usable on tiny instances.
pub fn for_each_deterministic_policy<T: Real>(
    model: &MfgModel<T>,
    flow: &MeasureFlow<T>,
    n: usize,
    mut visit: impl FnMut(&MarkovPolicy<T>, &[T]),
) {
    let nx = model.nx();
    let na = model.na();
    let digits = nx * (n + 1);
    let count = na
        .checked_pow(digits as u32)
        .filter(|&c| c <= ENUMERATION_CAP)
        .expect("policy space too large for naive enumeration");
    for idx in 0..count {
        let choices: Vec<Vec<usize>> = (0..=n)
            .map(|k| {
                (0..nx)
                    .map(|x| (idx / na.pow((k * nx + x) as u32)) % na)
                    .collect()
            })
            .collect();
        let pi = MarkovPolicy::deterministic(&choices, na);
        let values = exact_policy_values(model, flow, &pi, n);
        visit(&pi, &values);
    }
}

/// The first deterministic policy (in enumeration order) attaining the
/// entry-wise optimal values, together with those values. With strictly
/// positive kernels this is exactly the smallest-action-index greedy policy.
pub fn exact_optimal_policy<T: Real>(
    model: &MfgModel<T>,
    flow: &MeasureFlow<T>,
    n: usize,
) -> (MarkovPolicy<T>, Vec<T>) {
    let nx = model.nx();
    let mut best = vec![T::infinity(); nx];
    for_each_deterministic_policy(model, flow, n, |_, values| {
        for x in 0..nx {
            best[x] = best[x].min(values[x]);
        }
    });
    let mut winner = None;
    for_each_deterministic_policy(model, flow, n, |pi, values| {
        if winner.is_none()
            && (0..nx).all(|x| values[x] <= best[x] * (T::one() + T::epsilon() * crate::real(64.0)))
        {
            winner = Some(pi.clone());
        }
    });
    (winner.expect("some policy attains the minimum"), best)
}

/// Exact value `E[ exp(λ Σ_{t=0}^n β^t c_1(t)) ]` for agent 1 in the
/// `num_agents`-player game, with every agent `i` following `policies[i]`
/// and the coupling running through the empirical state distribution. Initial
/// states are i.i.d. from the model's `μ₀`. Pure joint-trajectory
/// enumeration; feasible only for one or two agents over short horizons.
pub fn exact_joint_agent1_value<T: Real>(
    model: &MfgModel<T>,
    policies: &[&MarkovPolicy<T>],
    n: usize,
) -> T {
    let num_agents = policies.len();
    assert!(num_agents >= 1, "need at least one agent");
    assert!(
        policies.iter().all(|p| p.len() >= n + 1),
        "policies must cover the horizon"
    );
    let mut acc = T::zero();
    let initials: Vec<Vec<(usize, T)>> = (0..num_agents)
        .map(|_| model.mu0().support().collect())
        .collect();
    for combo in initials.iter().map(|s| s.iter()).multi_cartesian_product() {
        let xs: Vec<usize> = combo.iter().map(|&&(x, _)| x).collect();
        let prob: T = combo.iter().map(|&&(_, p)| p).fold(T::one(), |a, b| a * b);
        walk_joint(model, policies, n, 0, &xs, prob, T::zero(), &mut acc);
    }
    acc
}

fn empirical<T: Real>(nx: usize, xs: &[usize]) -> Dist<T> {
    let mut counts = vec![T::zero(); nx];
    for &x in xs {
        counts[x] += T::one();
    }
    Dist::from_unnormalized(counts).expect("non-empty configuration")
}

fn walk_joint<T: Real>(
    model: &MfgModel<T>,
    policies: &[&MarkovPolicy<T>],
    n: usize,
    t: usize,
    xs: &[usize],
    prob: T,
    disc_cost: T,
    acc: &mut T,
) {
    let e_t = empirical(model.nx(), xs);
    let beta_t = model.beta().powi(t as i32);
    let action_sets: Vec<Vec<(usize, T)>> = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| policies[i].at(t, x).support().collect())
        .collect();
    for actions in action_sets.iter().map(|s| s.iter()).multi_cartesian_product() {
        let a_prob: T = actions.iter().map(|&&(_, p)| p).fold(T::one(), |a, b| a * b);
        let a1 = actions[0].0;
        let cost = disc_cost + beta_t * model.cost_at(xs[0], a1, &e_t);
        let p = prob * a_prob;
        if t == n {
            *acc += p * (model.lambda() * cost).exp();
            continue;
        }
        let trans: Vec<Vec<(usize, T)>> = xs
            .iter()
            .enumerate()
            .map(|(i, &x)| model.kernel_at(x, actions[i].0, &e_t).support().collect())
            .collect();
        for nexts in trans.iter().map(|s| s.iter()).multi_cartesian_product() {
            let y_prob: T = nexts.iter().map(|&&(_, p)| p).fold(T::one(), |a, b| a * b);
            let ys: Vec<usize> = nexts.iter().map(|&&(y, _)| y).collect();
            walk_joint(model, policies, n, t + 1, &ys, p * y_prob, cost, acc);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;
    use rand::SeedableRng;

    #[test]
    fn trajectory_weights_sum_to_one() {
        let m = presets::reference_model();
        let flow = MeasureFlow::constant(m.mu0().clone(), 4);
        let pi = MarkovPolicy::uniform(4, 2, 2);
        for x0 in 0..2 {
            let mut total = 0.0;
            walk_paths(&m, &flow, &pi, 3, 0, x0, 1.0, 0.0, &mut |p, _| total += p);
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_cost_value_is_one() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut m = presets::random_model(&mut rng, 2, 2, 0.5, 1.0);
        let file: crate::model::ModelFile<f64> = m.into();
        let mut file = file;
        for pa in &mut file.cost_mix {
            for pz in pa {
                pz.iter_mut().for_each(|c| *c = 0.0);
            }
        }
        file.cost_bound = None;
        m = MfgModel::try_from(file).unwrap();
        let flow = presets::random_flow(&mut rng, 2, 4);
        let pi = presets::random_policy(&mut rng, 2, 2, 4);
        for v in exact_policy_values(&m, &flow, &pi, 3) {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn factored_enumeration_matches_naive_minimum() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        for (nx, na) in [(2, 2), (2, 3), (3, 2)] {
            let m = presets::random_model(&mut rng, nx, na, 0.6, 0.9);
            let flow = presets::random_flow(&mut rng, nx, 3);
            let n = 2;
            let fast = exact_optimal_values(&m, &flow, n);
            let mut naive = vec![f64::INFINITY; nx];
            for_each_deterministic_policy(&m, &flow, n, |_, values| {
                for x in 0..nx {
                    naive[x] = naive[x].min(values[x]);
                }
            });
            for x in 0..nx {
                assert!(
                    (fast[x] - naive[x]).abs() <= 1e-12 * naive[x],
                    "nx={nx} na={na} x={x}: {} vs {}",
                    fast[x],
                    naive[x]
                );
            }
        }
    }

    #[test]
    fn single_agent_joint_value_matches_self_coupled_paths() {
        // With one agent the empirical measure is the Dirac at its own state;
        // spot-check against a hand-rolled two-step sum on the reference model.
        let m = presets::reference_model();
        let pi = MarkovPolicy::deterministic(&vec![vec![0, 1]; 2], 2);
        let v = exact_joint_agent1_value(&m, &[&pi], 1);
        let mut expect = 0.0;
        for (x0, p0) in m.mu0().support() {
            let e0 = Dist::dirac(2, x0);
            let a0 = if x0 == 0 { 0 } else { 1 };
            let c0 = m.cost_at(x0, a0, &e0);
            let trans = m.kernel_at(x0, a0, &e0);
            for (x1, p1) in trans.support() {
                let e1 = Dist::dirac(2, x1);
                let a1 = if x1 == 0 { 0 } else { 1 };
                let c1 = m.cost_at(x1, a1, &e1);
                expect += p0 * p1 * (m.lambda() * (c0 + 0.5 * c1)).exp();
            }
        }
        assert!((v - expect).abs() < 1e-12);
    }
}
