//! Frozen example models and seeded random generators for tests, examples
//! and the command-line tools.

use rand::Rng;

use crate::dist::Dist;
use crate::flow::{MarkovPolicy, MeasureFlow};
use crate::model::MfgModel;

/// Weakly coupled 2-state/2-action model used throughout the test suites and
/// the README walkthrough. Staying put is cheap, moving is expensive, and the
/// population tilts both the kernel and the cost by a small amount
/// (`Lp = 0.105`, `Lc = 0.1`).
pub fn reference_model() -> MfgModel<f64> {
    MfgModel::from_json_str(include_str!("../../../models/reference.json"))
        .expect("embedded reference model is valid")
}

/// Anti-coordination model: action `a` moves deterministically to state `a`
/// and the one-stage cost is the population mass at the agent's current
/// state. The only equilibria randomize (the population must split evenly),
/// so a deterministic greedy fixed-point iteration flip-flops between the two
/// crowd states forever — the canonical honest non-convergence case.
pub fn anticoordination_model() -> MfgModel<f64> {
    MfgModel::from_json_str(include_str!("../../../models/anticoord.json"))
        .expect("embedded anti-coordination model is valid")
}

fn random_dist<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Dist<f64> {
    // Exponential draws normalized: uniform on the simplex.
    let w: Vec<f64> = (0..n).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    Dist::from_unnormalized(w).expect("positive draws normalize")
}

/// Fully random mixture model: independent kernel components and costs.
pub fn random_model<R: Rng + ?Sized>(
    rng: &mut R,
    nx: usize,
    na: usize,
    beta: f64,
    lambda: f64,
) -> MfgModel<f64> {
    let kernel_mix = (0..nx)
        .map(|_z| {
            (0..nx)
                .map(|_x| (0..na).map(|_a| random_dist(rng, nx)).collect())
                .collect()
        })
        .collect();
    let cost_mix = (0..nx)
        .map(|_x| {
            (0..na)
                .map(|_a| (0..nx).map(|_z| rng.random::<f64>()).collect())
                .collect()
        })
        .collect();
    MfgModel::new(
        beta,
        lambda,
        random_dist(rng, nx),
        kernel_mix,
        cost_mix,
        None,
    )
    .expect("randomly generated model is valid")
}

/// Random model whose kernel and cost depend on the mean-field term only
/// through a `coupling`-sized perturbation of a shared base, so the
/// total-variation Lipschitz constants satisfy `Lp ≤ coupling` and
/// `Lc ≤ coupling`.
pub fn random_weakly_coupled<R: Rng + ?Sized>(
    rng: &mut R,
    nx: usize,
    na: usize,
    beta: f64,
    lambda: f64,
    coupling: f64,
) -> MfgModel<f64> {
    assert!((0.0..=1.0).contains(&coupling));
    let base_kernel: Vec<Vec<Dist<f64>>> = (0..nx)
        .map(|_x| (0..na).map(|_a| random_dist(rng, nx)).collect())
        .collect();
    let base_cost: Vec<Vec<f64>> = (0..nx)
        .map(|_x| (0..na).map(|_a| rng.random::<f64>() * (1.0 - coupling)).collect())
        .collect();
    let kernel_mix = (0..nx)
        .map(|_z| {
            (0..nx)
                .map(|x| {
                    (0..na)
                        .map(|a| base_kernel[x][a].mix(&random_dist(rng, nx), coupling))
                        .collect()
                })
                .collect()
        })
        .collect();
    let cost_mix = (0..nx)
        .map(|x| {
            (0..na)
                .map(|a| {
                    (0..nx)
                        .map(|_z| base_cost[x][a] + coupling * rng.random::<f64>())
                        .collect()
                })
                .collect()
        })
        .collect();
    MfgModel::new(
        beta,
        lambda,
        random_dist(rng, nx),
        kernel_mix,
        cost_mix,
        None,
    )
    .expect("randomly generated model is valid")
}

/// Random measure flow of the given length (entries independent).
pub fn random_flow<R: Rng + ?Sized>(rng: &mut R, nx: usize, len: usize) -> MeasureFlow<f64> {
    MeasureFlow::new((0..len).map(|_| random_dist(rng, nx)).collect())
        .expect("non-empty random flow")
}

/// Random Markov policy of the given length (rows independent).
pub fn random_policy<R: Rng + ?Sized>(
    rng: &mut R,
    nx: usize,
    na: usize,
    len: usize,
) -> MarkovPolicy<f64> {
    MarkovPolicy::new(
        (0..len)
            .map(|_t| (0..nx).map(|_x| random_dist(rng, na)).collect())
            .collect(),
    )
    .expect("non-empty random policy")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_model_is_weakly_coupled() {
        let m = reference_model();
        let (lp, lc) = m.lipschitz_constants();
        assert!((lp - 0.105).abs() < 1e-12, "Lp = {lp}");
        assert!((lc - 0.1).abs() < 1e-12, "Lc = {lc}");
        assert_eq!(m.cost_bound(), 0.6);
    }

    #[test]
    fn anticoordination_kernel_is_decoupled_but_cost_is_not() {
        let m = anticoordination_model();
        let (lp, lc) = m.lipschitz_constants();
        assert_eq!(lp, 0.0);
        assert_eq!(lc, 1.0);
    }

    #[test]
    fn weakly_coupled_generator_respects_the_coupling_bound() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let m = random_weakly_coupled(&mut rng, 3, 2, 0.6, 1.0, 0.2);
            let (lp, lc) = m.lipschitz_constants();
            assert!(lp <= 0.2 + 1e-12, "Lp = {lp}");
            assert!(lc <= 0.2 + 1e-12, "Lc = {lc}");
        }
    }
}
