//! Zero-sum / relative-entropy reformulation of the risk-sensitive control
//! problem, used as an independent verification path for the dynamic
//! programming values.
//!
//! The variational identity behind everything here is the log-moment /
//! relative-entropy duality
//!
//! ```text
//!     log Σ_x e^{g(x)} ζ(x)  =  sup_q [ Σ_x g(x) q(x) - KL(q ‖ ζ) ],
//! ```
//!
//! attained at the Gibbs tilt `q*(x) ∝ ζ(x) e^{g(x)}`. Applying it inside the
//! multiplicative Bellman recursion turns the control problem into a zero-sum
//! game whose upper values `W_k` satisfy the Isaacs recursion
//!
//! ```text
//!     W_k(x) = min_a sup_q [ Σ_y W_{k+1}(y) q(y) + λ β^k c_k(x,a) - KL(q ‖ p_k(·|x,a)) ]
//!            = min_a [ λ β^k c_k(x,a) + log Σ_y e^{W_{k+1}(y)} p_k(y|x,a) ],
//! ```
//!
//! so `exp(W_k(x))` must reproduce the risk-sensitive optimal value `J_k(x)`
//! computed by the entirely separate linear-space recursion in [`crate::dp`].

use serde::{Deserialize, Serialize};

use crate::dist::Dist;
use crate::dp::{DpError, ValueTable};
use crate::flow::MeasureFlow;
use crate::model::MfgModel;
use crate::Real;

/// Relative entropy `KL(q ‖ p) = Σ q_i log(q_i/p_i)` with the conventions
/// `0·log(0/·) = 0` and `+∞` as soon as `q` charges a point outside the
/// support of `p`.
pub fn kl_divergence<T: Real>(q: &Dist<T>, p: &Dist<T>) -> T {
    assert_eq!(q.len(), p.len(), "distribution length mismatch");
    let mut sum = T::zero();
    for (i, qi) in q.support() {
        let pi = p.weight(i);
        if pi == T::zero() {
            return T::infinity();
        }
        sum += qi * (qi / pi).ln();
    }
    sum
}

/// Both sides of the duality at `(g, ζ)` plus the attaining tilt.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DualityCheck<T: Real = f64> {
    /// `log Σ e^g dζ`.
    pub lhs: T,
    /// `Σ g dq* - KL(q* ‖ ζ)` at the Gibbs tilt.
    pub rhs: T,
    pub q_star: Dist<T>,
}

/// Evaluates the two routes of the variational identity. `lhs` and `rhs`
/// agree analytically; the returned pair exposes the numerical residual.
pub fn entropy_dual_check<T: Real>(g: &[T], zeta: &Dist<T>) -> DualityCheck<T> {
    assert_eq!(g.len(), zeta.len(), "value vector length mismatch");
    let q_star = gibbs_tilt(zeta, g);
    let m = zeta
        .support()
        .map(|(i, _)| g[i])
        .fold(T::neg_infinity(), T::max);
    let lhs = m + zeta
        .support()
        .map(|(i, w)| w * (g[i] - m).exp())
        .sum::<T>()
        .ln();
    let mean: T = q_star.support().map(|(i, w)| w * g[i]).sum();
    let rhs = mean - kl_divergence(&q_star, zeta);
    DualityCheck { lhs, rhs, q_star }
}

/// Gibbs tilt `q(x) ∝ ζ(x) e^{g(x)}`; zero weights stay zero.
pub fn gibbs_tilt<T: Real>(zeta: &Dist<T>, g: &[T]) -> Dist<T> {
    let m = zeta
        .support()
        .map(|(i, _)| g[i])
        .fold(T::neg_infinity(), T::max);
    let weights: Vec<T> = (0..zeta.len())
        .map(|i| {
            let w = zeta.weight(i);
            if w > T::zero() {
                w * (g[i] - m).exp()
            } else {
                T::zero()
            }
        })
        .collect();
    Dist::from_unnormalized(weights).expect("tilt of a distribution has positive mass")
}

/// Upper values of the equivalent zero-sum game, `w[k][x] = W_k(x)` for
/// `k = 0..=n+1` with `W_{n+1} ≡ 0`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IsaacsTable<T: Real = f64> {
    horizon: usize,
    w: Vec<Vec<T>>,
}

impl<T: Real> IsaacsTable<T> {
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn value(&self, k: usize, x: usize) -> T {
        self.w[k][x]
    }

    pub fn row(&self, k: usize) -> &[T] {
        &self.w[k]
    }

    /// `max_{k,x} |exp(W_k(x)) - J_k(x)| / J_k(x)`, evaluated through logs so
    /// it stays finite in the table's log-space mode.
    pub fn max_identity_residual(&self, values: &ValueTable<T>) -> T {
        assert_eq!(self.horizon, values.horizon(), "horizon mismatch");
        let mut worst = T::zero();
        for k in 0..=self.horizon + 1 {
            for x in 0..self.w[0].len() {
                let r = (self.w[k][x] - values.log_value(k, x)).exp_m1().abs();
                worst = worst.max(r);
            }
        }
        worst
    }
}

/// Backward Isaacs recursion with the inner supremum in closed form via the
/// Gibbs tilt.
pub fn isaacs_values<T: Real>(
    model: &MfgModel<T>,
    flow: &MeasureFlow<T>,
    n: usize,
) -> Result<IsaacsTable<T>, DpError> {
    if flow.len() < n + 1 {
        return Err(DpError::FlowTooShort {
            needed: n + 1,
            got: flow.len(),
        });
    }
    let nx = model.nx();
    let mut w = vec![Vec::new(); n + 2];
    w[n + 1] = vec![T::zero(); nx];
    for k in (0..=n).rev() {
        let scale = model.lambda() * model.beta().powi(k as i32);
        let mu = flow.at(k);
        let next = std::mem::take(&mut w[k + 1]);
        w[k] = (0..nx)
            .map(|x| {
                (0..model.na())
                    .map(|a| {
                        let p = model.kernel_at(x, a, mu);
                        scale * model.cost_at(x, a, mu) + log_partition(&p, &next)
                    })
                    .fold(T::infinity(), T::min)
            })
            .collect();
        w[k + 1] = next;
    }
    Ok(IsaacsTable { horizon: n, w })
}

/// `log Σ_y e^{w(y)} p(y)`.
fn log_partition<T: Real>(p: &Dist<T>, w: &[T]) -> T {
    let m = p
        .support()
        .map(|(y, _)| w[y])
        .fold(T::neg_infinity(), T::max);
    if !m.is_finite() {
        return m;
    }
    m + p
        .support()
        .map(|(y, py)| py * (w[y] - m).exp())
        .sum::<T>()
        .ln()
}

/// The maximizing response of the entropy player at `(k, x, a)`: the tilt of
/// `p_k(·|x,a)` by the continuation values `W_{k+1}`.
pub fn gibbs_maximizer<T: Real>(
    model: &MfgModel<T>,
    flow: &MeasureFlow<T>,
    table: &IsaacsTable<T>,
    k: usize,
    x: usize,
    a: usize,
) -> Dist<T> {
    let p = model.kernel_at(x, a, flow.at(k));
    gibbs_tilt(&p, table.row(k + 1))
}

/// The zero-sum one-step objective
/// `Σ_y W_{k+1}(y) q(y) + λ β^k c_k(x,a) - KL(q ‖ p_k(·|x,a))`; `-∞` when the
/// entropy term is infinite.
pub fn upper_value_objective<T: Real>(
    model: &MfgModel<T>,
    flow: &MeasureFlow<T>,
    w_next: &[T],
    k: usize,
    x: usize,
    a: usize,
    q: &Dist<T>,
) -> T {
    let p = model.kernel_at(x, a, flow.at(k));
    let kl = kl_divergence(q, &p);
    if kl == T::infinity() {
        return T::neg_infinity();
    }
    let mean: T = q.support().map(|(y, qy)| qy * w_next[y]).sum();
    let scale = model.lambda() * model.beta().powi(k as i32);
    mean + scale * model.cost_at(x, a, flow.at(k)) - kl
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dp::finite_horizon_values;
    use crate::presets;
    use rand::SeedableRng;

    #[test]
    fn kl_basics() {
        let p = Dist::new(vec![0.5, 0.5]).unwrap();
        assert_eq!(kl_divergence(&p, &p), 0.0);
        let q = Dist::new(vec![0.9, 0.1]).unwrap();
        assert!(kl_divergence(&q, &p) > 0.0);
        let outside = Dist::new(vec![0.0, 1.0]).unwrap();
        let narrow = Dist::new(vec![1.0, 0.0]).unwrap();
        assert_eq!(kl_divergence(&outside, &narrow), f64::INFINITY);
        // 0·log(0/·) = 0: q supported inside p's support is finite.
        assert!(kl_divergence(&narrow, &p).is_finite());
    }

    #[test]
    fn duality_identity_trivial_cases() {
        let zeta: Dist = Dist::new(vec![0.3, 0.7]).unwrap();
        let check = entropy_dual_check(&[0.0, 0.0], &zeta);
        assert!(check.lhs.abs() < 1e-15);
        assert!(check.rhs.abs() < 1e-15);
        assert!(check.q_star.tv_distance(&zeta) < 1e-15);

        let dirac: Dist = Dist::dirac(3, 1);
        let g = [5.0, -2.0, 7.0];
        let check = entropy_dual_check(&g, &dirac);
        assert!((check.lhs - g[1]).abs() < 1e-15);
        assert!((check.rhs - g[1]).abs() < 1e-15);
        assert_eq!(check.q_star, dirac);
    }

    #[test]
    fn duality_identity_and_supremum_on_random_inputs() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let zeta = presets::random_flow(&mut rng, 5, 1).at(0).clone();
            let g: Vec<f64> = (0..5).map(|_| rand::Rng::random_range(&mut rng, -3.0..3.0)).collect();
            let check = entropy_dual_check(&g, &zeta);
            assert!((check.lhs - check.rhs).abs() <= 1e-12, "{} vs {}", check.lhs, check.rhs);
            for _ in 0..1000 {
                let q = presets::random_flow(&mut rng, 5, 1).at(0).clone();
                let mean: f64 = q.support().map(|(i, w)| w * g[i]).sum();
                let candidate = mean - kl_divergence(&q, &zeta);
                assert!(candidate <= check.rhs + 1e-12);
            }
        }
    }

    #[test]
    fn isaacs_values_vanish_without_cost() {
        let m = MfgModel::new(
            0.5,
            1.0,
            Dist::uniform(2),
            vec![
                vec![vec![Dist::uniform(2); 2]; 2],
                vec![vec![Dist::uniform(2); 2]; 2],
            ],
            vec![vec![vec![0.0; 2]; 2]; 2],
            None,
        )
        .unwrap();
        let flow = MeasureFlow::constant(m.mu0().clone(), 4);
        let table = isaacs_values(&m, &flow, 3).unwrap();
        for k in 0..=4 {
            for x in 0..2 {
                assert_eq!(table.value(k, x), 0.0);
            }
        }
    }

    #[test]
    fn single_state_isaacs_closed_form() {
        let (beta, lambda, c0, n) = (0.6f64, 0.8, 0.9, 5usize);
        let m = MfgModel::new(
            beta,
            lambda,
            Dist::dirac(1, 0),
            vec![vec![vec![Dist::dirac(1, 0)]]],
            vec![vec![vec![c0]]],
            None,
        )
        .unwrap();
        let flow = MeasureFlow::constant(m.mu0().clone(), n + 1);
        let table = isaacs_values(&m, &flow, n).unwrap();
        let expect = lambda * c0 * (1.0 - beta.powi(n as i32 + 1)) / (1.0 - beta);
        assert!((table.value(0, 0) - expect).abs() < 1e-12);
    }

    #[test]
    fn exponentiated_isaacs_matches_dp_values() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        for _ in 0..20 {
            let m = presets::random_model(&mut rng, 3, 2, 0.7, 1.0);
            let n = 5;
            let flow = presets::random_flow(&mut rng, 3, n + 1);
            let dp_table = finite_horizon_values(&m, &flow, n).unwrap();
            let zs_table = isaacs_values(&m, &flow, n).unwrap();
            assert!(zs_table.max_identity_residual(&dp_table) <= 1e-10);
        }
    }

    #[test]
    fn gibbs_tilt_attains_the_inner_supremum() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(41);
        let m = presets::random_model(&mut rng, 3, 2, 0.6, 1.0);
        let n = 3;
        let flow = presets::random_flow(&mut rng, 3, n + 1);
        let table = isaacs_values(&m, &flow, n).unwrap();
        for k in 0..=n {
            for x in 0..3 {
                for a in 0..2 {
                    let q_star = gibbs_maximizer(&m, &flow, &table, k, x, a);
                    let sup = upper_value_objective(&m, &flow, table.row(k + 1), k, x, a, &q_star);
                    for _ in 0..50 {
                        let q = presets::random_flow(&mut rng, 3, 1).at(0).clone();
                        let v = upper_value_objective(&m, &flow, table.row(k + 1), k, x, a, &q);
                        assert!(v <= sup + 1e-12);
                    }
                }
            }
        }
    }
}
