use nalgebra::DMatrix;
use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::mdp::{solve_q_star, Discount, FeatureMap, Policy, QTable, StateActionDist, TabularMdp};
use crate::seeding::{derive_seed, rng_from};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GarnetParams {
    pub seed: u64,
    pub n_states: usize,
    pub n_actions: usize,
    pub branching: usize,
    pub gamma: f64,
    /// Feature dimension, `Q*` included.
    pub d: usize,
    pub epsilon: f64,
    /// Symmetric Dirichlet concentration of transition rows.
    pub transition_alpha: f64,
    /// Symmetric Dirichlet concentration of target-policy rows.
    pub policy_alpha: f64,
}

impl Default for GarnetParams {
    fn default() -> Self {
        GarnetParams {
            seed: 0,
            n_states: 100,
            n_actions: 4,
            branching: 5,
            gamma: 0.99,
            d: 5,
            epsilon: 0.1,
            transition_alpha: 1.0,
            policy_alpha: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GarnetInstance {
    pub mdp: TabularMdp,
    pub target: Policy,
    /// Epsilon-greedy with respect to `q_star`.
    pub behavior: Policy,
    pub features: FeatureMap,
    pub q_star: QTable,
    pub gamma: Discount,
    pub seed: u64,
}

fn dirichlet(rng: &mut ChaCha8Rng, alpha: f64, k: usize) -> Result<Vec<f64>> {
    let gamma =
        Gamma::new(alpha, 1.0).map_err(|e| Error::invalid("dirichlet alpha", e.to_string()))?;
    loop {
        let draws: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
        let total: f64 = draws.iter().sum();
        if total > 0.0 {
            return Ok(draws.into_iter().map(|g| g / total).collect());
        }
    }
}

pub fn garnet_generate(params: GarnetParams) -> Result<GarnetInstance> {
    let GarnetParams {
        seed,
        n_states,
        n_actions,
        branching,
        d,
        epsilon,
        ..
    } = params;
    if n_states == 0 || n_actions == 0 {
        return Err(Error::invalid("n_states/n_actions", "must be positive"));
    }
    if branching == 0 || branching > n_states {
        return Err(Error::invalid(
            "branching",
            format!("{branching} not in [1, n_states = {n_states}]"),
        ));
    }
    if d < 2 {
        return Err(Error::invalid("d", "feature dimension must be at least 2"));
    }
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::invalid(
            "epsilon",
            format!("{epsilon} not in [0, 1]"),
        ));
    }
    let gamma = Discount::new(params.gamma)?;

    let mut rng = rng_from(derive_seed(seed, &["garnet", "mdp"]));
    let n_pairs = n_states * n_actions;
    let mut transition = vec![0.0; n_pairs * n_states];
    for pair in 0..n_pairs {
        let successors = index::sample(&mut rng, n_states, branching).into_vec();
        let probs = dirichlet(&mut rng, params.transition_alpha, branching)?;
        for (s_next, p) in successors.into_iter().zip(probs) {
            transition[pair * n_states + s_next] = p;
        }
    }
    let reward: Vec<f64> = (0..n_pairs).map(|_| rng.sample(StandardNormal)).collect();
    let mdp = TabularMdp::new(n_states, n_actions, transition, reward)?;

    let mut target_probs = Vec::with_capacity(n_pairs);
    for _ in 0..n_states {
        target_probs.extend(dirichlet(&mut rng, params.policy_alpha, n_actions)?);
    }
    let target = Policy::new(n_states, n_actions, target_probs)?;

    let q_star = solve_q_star(&mdp, &target, gamma)?;
    let behavior = epsilon_greedy(&q_star, n_states, n_actions, epsilon)?;
    let features = embed_qstar_features(&q_star, d, derive_seed(seed, &["garnet", "features"]))?;

    Ok(GarnetInstance {
        mdp,
        target,
        behavior,
        features,
        q_star,
        gamma,
        seed,
    })
}

/// Ties in the argmax go to the smallest action index.
pub fn epsilon_greedy(
    q: &QTable,
    n_states: usize,
    n_actions: usize,
    epsilon: f64,
) -> Result<Policy> {
    let mut probs = vec![epsilon / n_actions as f64; n_states * n_actions];
    for s in 0..n_states {
        let row = &q.values()[s * n_actions..(s + 1) * n_actions];
        let mut best = 0;
        for (a, v) in row.iter().enumerate() {
            if *v > row[best] {
                best = a;
            }
        }
        probs[s * n_actions + best] += 1.0 - epsilon;
    }
    Policy::new(n_states, n_actions, probs)
}

/// Column 0 is `q_star`; columns `1..d` are i.i.d. standard normal draws.
pub fn embed_qstar_features(q_star: &QTable, d: usize, seed: u64) -> Result<FeatureMap> {
    if d < 2 {
        return Err(Error::invalid("d", "feature dimension must be at least 2"));
    }
    let mut rng = rng_from(seed);
    let n = q_star.len();
    let mut phi = DMatrix::zeros(n, d);
    phi.set_column(0, &q_star.as_dvector());
    for j in 1..d {
        for i in 0..n {
            phi[(i, j)] = rng.sample(StandardNormal);
        }
    }
    FeatureMap::new(phi)
}

impl GarnetInstance {
    pub fn n_states(&self) -> usize {
        self.mdp.n_states()
    }

    pub fn n_actions(&self) -> usize {
        self.mdp.n_actions()
    }

    /// Sampling law of the reset scheme: uniform state, behavior action.
    pub fn reset_distribution(&self) -> Result<StateActionDist> {
        let uniform = vec![1.0 / self.n_states() as f64; self.n_states()];
        StateActionDist::from_state_marginal(&uniform, &self.behavior)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> GarnetParams {
        GarnetParams {
            seed,
            n_states: 12,
            n_actions: 3,
            branching: 4,
            gamma: 0.9,
            d: 3,
            ..Default::default()
        }
    }

    #[test]
    fn rows_have_exact_branching() {
        let g = garnet_generate(small(5)).unwrap();
        for row in g.mdp.transition().chunks(12) {
            assert_eq!(row.iter().filter(|p| **p > 0.0).count(), 4);
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn full_branching_is_fully_supported() {
        let g = garnet_generate(GarnetParams {
            branching: 12,
            ..small(1)
        })
        .unwrap();
        assert!(g.mdp.transition().iter().all(|p| *p > 0.0));
    }

    #[test]
    fn same_seed_is_bitwise_identical() {
        let a = garnet_generate(small(42)).unwrap();
        let b = garnet_generate(small(42)).unwrap();
        assert_eq!(a.mdp, b.mdp);
        assert_eq!(a.target, b.target);
        assert_eq!(a.behavior, b.behavior);
        assert_eq!(a.features, b.features);
        assert_eq!(a.q_star, b.q_star);
        let c = garnet_generate(small(43)).unwrap();
        assert_ne!(a.mdp, c.mdp);
    }

    #[test]
    fn behavior_is_epsilon_greedy() {
        let g = garnet_generate(small(9)).unwrap();
        let eps = 0.1;
        for s in 0..12 {
            let row = g.behavior.row(s);
            let q = &g.q_star.values()[s * 3..s * 3 + 3];
            let best = (0..3).fold(0, |b, a| if q[a] > q[b] { a } else { b });
            for (a, p) in row.iter().enumerate() {
                let expected = if a == best {
                    1.0 - eps + eps / 3.0
                } else {
                    eps / 3.0
                };
                assert!((p - expected).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn greedy_ties_go_to_smallest_index() {
        let q = QTable(vec![1.0, 1.0, 0.0]);
        let p = epsilon_greedy(&q, 1, 3, 0.0).unwrap();
        assert_eq!(p.row(0), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn parameter_violations() {
        assert!(garnet_generate(GarnetParams {
            branching: 13,
            ..small(0)
        })
        .is_err());
        assert!(garnet_generate(GarnetParams { d: 1, ..small(0) }).is_err());
        assert!(garnet_generate(GarnetParams {
            gamma: 1.0,
            ..small(0)
        })
        .is_err());
        assert!(embed_qstar_features(&QTable(vec![1.0; 4]), 1, 0).is_err());
    }

    #[test]
    fn q_star_is_column_zero() {
        let g = garnet_generate(small(3)).unwrap();
        let col: Vec<f64> = g.features.matrix().column(0).iter().copied().collect();
        assert_eq!(col, g.q_star.values());
    }
}
