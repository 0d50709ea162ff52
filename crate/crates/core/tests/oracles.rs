//! Library results against independent reference computations: value
//! iteration, eigenvector solves, normal equations and brute-force sums.

use nalgebra::{DMatrix, DVector};
use swfqe::env::{
    build_baird, exact_stationary_ratio, garnet_generate, GarnetInstance, GarnetParams,
};
use swfqe::estimators::{
    resolvent_ratio, variational_residual, DiceMoments, IdentitySource, ResolventSource,
};
use swfqe::fqe::{fqe_run, weighted_ridge, FqeConfig, FqeOracles, Weighting};
use swfqe::mdp::{
    solve_q_star, stationary_distribution, Discount, FeatureMap, Policy, StateActionDist,
    TabularMdp,
};
use swfqe::sampling::{empirical_distribution, sample_dataset, Scheme};

fn garnet(seed: u64, n_states: usize, n_actions: usize, gamma: f64) -> GarnetInstance {
    garnet_generate(GarnetParams {
        seed,
        n_states,
        n_actions,
        branching: n_states.min(4),
        gamma,
        d: 3,
        ..Default::default()
    })
    .unwrap()
}

/// Plain value iteration straight from the transition and policy arrays.
fn value_iteration(mdp: &TabularMdp, pi: &Policy, gamma: f64, sweeps: usize) -> Vec<f64> {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let mut q = vec![0.0; ns * na];
    for _ in 0..sweeps {
        let v: Vec<f64> = (0..ns)
            .map(|s| (0..na).map(|a| pi.prob(s, a) * q[s * na + a]).sum())
            .collect();
        q = (0..ns * na)
            .map(|i| {
                let next = mdp.next_states(i / na, i % na);
                mdp.reward()[i] + gamma * next.iter().zip(&v).map(|(p, x)| p * x).sum::<f64>()
            })
            .collect();
    }
    q
}

/// Stationary law of the state-action chain by solving `(M^T - I) mu = 0`
/// with one equation replaced by the normalization.
fn stationary_by_solve(mdp: &TabularMdp, pi: &Policy) -> Vec<f64> {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let n = ns * na;
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n {
        let next = mdp.next_states(i / na, i % na);
        for s2 in 0..ns {
            for a2 in 0..na {
                a[(s2 * na + a2, i)] += next[s2] * pi.prob(s2, a2);
            }
        }
        a[(i, i)] -= 1.0;
    }
    let mut b = DVector::zeros(n);
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    b[n - 1] = 1.0;
    a.lu().solve(&b).unwrap().iter().copied().collect()
}

#[test]
fn q_star_matches_value_iteration() {
    for seed in 0..5 {
        let g = garnet(seed, 12, 3, 0.9);
        let direct = solve_q_star(&g.mdp, &g.target, Discount::new(0.9).unwrap()).unwrap();
        let vi = value_iteration(&g.mdp, &g.target, 0.9, 800);
        for (x, y) in direct.values().iter().zip(&vi) {
            assert!((x - y).abs() < 1e-9, "{x} vs {y}");
        }
    }
}

#[test]
fn baird_q_star_is_zero() {
    // all rewards vanish
    let b = build_baird(0.7).unwrap();
    let q = solve_q_star(&b.mdp, &b.target, Discount::new(0.99).unwrap()).unwrap();
    assert!(q.sup_norm() == 0.0);
}

#[test]
fn stationary_matches_eigenvector_solve() {
    for seed in 0..5 {
        let g = garnet(100 + seed, 10, 2, 0.9);
        let mu = stationary_distribution(&g.mdp, &g.target, Default::default()).unwrap();
        let reference = stationary_by_solve(&g.mdp, &g.target);
        for (x, y) in mu.mass().iter().zip(&reference) {
            assert!((x - y).abs() < 1e-9, "{x} vs {y}");
        }
    }
}

#[test]
fn baird_target_stationary_is_hub_solid() {
    let b = build_baird(0.8).unwrap();
    let mu = b.target_stationary().unwrap();
    let hub_solid = swfqe::env::HUB * b.mdp.n_actions() + swfqe::env::SOLID;
    assert!((mu.mass()[hub_solid] - 1.0).abs() < 1e-12);
}

#[test]
fn weighted_ridge_matches_normal_equations() {
    let x = DMatrix::from_fn(9, 3, |i, j| {
        ((i * 7 + j * 3) % 5) as f64 - 1.5 + 0.1 * j as f64
    });
    let y: Vec<f64> = (0..9).map(|i| (i as f64).sin()).collect();
    let w: Vec<f64> = (0..9).map(|i| 0.5 + (i % 3) as f64).collect();
    let lambda = 0.3;
    let theta = weighted_ridge(&x, &y, &w, lambda).unwrap();
    // brute force: sum_i w_i x_i x_i^T + lambda I, sum_i w_i y_i x_i
    let mut g = DMatrix::identity(3, 3) * lambda;
    let mut rhs = DVector::zeros(3);
    for i in 0..9 {
        let xi = x.row(i).transpose();
        g += &xi * xi.transpose() * w[i];
        rhs += &xi * (w[i] * y[i]);
    }
    let reference = g.lu().solve(&rhs).unwrap();
    assert!((theta - reference).amax() < 1e-12);
}

#[test]
fn dice_sample_moments_match_brute_force_sums() {
    let g = garnet(7, 6, 2, 0.9);
    let data = sample_dataset(&g.mdp, &g.behavior, &g.target, 500, Scheme::Reset, 3, 0.0).unwrap();
    let gf = &g.features;
    let hf = FeatureMap::new(DMatrix::from_fn(12, 4, |i, j| {
        ((i + 2 * j) % 5) as f64 - 2.0
    }))
    .unwrap();
    let m = DiceMoments::from_samples(&data, gf, &hf, 0.1, 2).unwrap();
    let n = data.len() as f64;
    let mut a = DMatrix::zeros(gf.dim(), 4);
    let mut b = DMatrix::identity(4, 4) * 0.1;
    let mut mm = DVector::zeros(gf.dim());
    for t in &data.transitions {
        let i = t.s * 2 + t.a;
        let j = t.s_next * 2 + t.a_next;
        let gi = gf.row(i).transpose();
        let hi = hf.row(i);
        a += &gi * (&hi - hf.row(j)) / n;
        b += hi.transpose() * &hi / n;
        mm += gi / n;
    }
    assert!((&m.a - a).amax() < 1e-12);
    assert!((&m.b - b).amax() < 1e-12);
    assert!((&m.m - mm).amax() < 1e-12);
}

#[test]
fn empirical_distribution_converges_to_reset_law() {
    let g = garnet(11, 8, 2, 0.9);
    let nu = g.reset_distribution().unwrap();
    let data = sample_dataset(
        &g.mdp,
        &g.behavior,
        &g.target,
        200_000,
        Scheme::Reset,
        5,
        0.0,
    )
    .unwrap();
    let emp = empirical_distribution(&data, 8, 2).unwrap();
    assert!(emp.l1_distance(&nu) < 0.02, "{}", emp.l1_distance(&nu));
}

#[test]
fn trajectory_counts_converge_to_behavior_stationary() {
    let g = garnet(12, 8, 2, 0.9);
    let nu = stationary_distribution(&g.mdp, &g.behavior, Default::default()).unwrap();
    let data = sample_dataset(
        &g.mdp,
        &g.behavior,
        &g.target,
        200_000,
        Scheme::Trajectory,
        6,
        0.0,
    )
    .unwrap();
    let emp = empirical_distribution(&data, 8, 2).unwrap();
    assert!(emp.l1_distance(&nu) < 0.03, "{}", emp.l1_distance(&nu));
}

#[test]
fn on_policy_weighting_is_identical() {
    // behavior = target, so the stationary ratio is identically one
    let g = garnet(21, 10, 2, 0.9);
    let data = sample_dataset(
        &g.mdp,
        &g.target,
        &g.target,
        3000,
        Scheme::Trajectory,
        9,
        0.0,
    )
    .unwrap();
    let ones = data.clone().with_weights(vec![1.0; data.len()]).unwrap();
    let unweighted = FqeConfig::new(g.gamma, 30, Weighting::Unweighted);
    let weighted = FqeConfig::new(g.gamma, 30, Weighting::ExactRatio);
    let a = fqe_run(&data, &g.features, &g.target, &unweighted, None).unwrap();
    let b = fqe_run(&ones, &g.features, &g.target, &weighted, None).unwrap();
    for (x, y) in a.rows.iter().zip(&b.rows) {
        assert_eq!(x.theta, y.theta, "iterate {}", x.k);
    }
}

#[test]
fn realizable_population_fqe_reaches_q_star() {
    // Q* is a feature column, so the weighted fixed point is Q* itself
    let g = garnet(31, 10, 2, 0.9);
    let mu = stationary_distribution(&g.mdp, &g.target, Default::default()).unwrap();
    let oracles =
        FqeOracles::new(&g.mdp, &g.target, g.gamma, &g.features, &mu, &g.q_star, 0.0).unwrap();
    let gap = oracles
        .fixed_point()
        .values()
        .iter()
        .zip(g.q_star.values())
        .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
    assert!(gap < 1e-8, "{gap}");
}

#[test]
fn exact_resolvent_matches_discounted_occupancy() {
    // occupancy by summing (1 - g') sum_t g'^t rho M^t directly
    let g = garnet(41, 6, 2, 0.9);
    let nu = g.reset_distribution().unwrap();
    let gp = 0.8;
    let (ns, na) = (6, 2);
    let mut step: Vec<f64> = (0..ns * na)
        .map(|i| g.target.prob(i / na, i % na) / ns as f64)
        .collect();
    let mut occupancy = vec![0.0; ns * na];
    let mut scale = 1.0 - gp;
    for _ in 0..400 {
        occupancy
            .iter_mut()
            .zip(&step)
            .for_each(|(o, x)| *o += scale * x);
        let mut next = vec![0.0; ns * na];
        for (i, x) in step.iter().enumerate() {
            let row = g.mdp.next_states(i / na, i % na);
            for s2 in 0..ns {
                for a2 in 0..na {
                    next[s2 * na + a2] += x * row[s2] * g.target.prob(s2, a2);
                }
            }
        }
        step = next;
        scale *= gp;
    }
    let est = resolvent_ratio(
        ResolventSource::Exact {
            mdp: &g.mdp,
            nu_b: &nu,
        },
        &g.target,
        gp,
        Default::default(),
    )
    .unwrap();
    for (i, w) in est.values.values().iter().enumerate() {
        let reference = occupancy[i] / nu.mass()[i];
        assert!((w - reference).abs() < 1e-8, "pair {i}: {w} vs {reference}");
    }
}

#[test]
fn exact_ratio_is_stationary_on_garnets() {
    for seed in 0..3 {
        let g = garnet(50 + seed, 10, 3, 0.9);
        let mu = stationary_distribution(&g.mdp, &g.target, Default::default()).unwrap();
        let nu = g.reset_distribution().unwrap();
        let w = exact_stationary_ratio(&mu, &nu).unwrap();
        let residual = variational_residual(
            &w,
            IdentitySource::Exact {
                mdp: &g.mdp,
                nu_b: &nu,
            },
            &g.target,
        )
        .unwrap();
        assert!(residual < 1e-10, "{residual}");
        // the ratio integrates to one under nu
        let mean: f64 = w.values().iter().zip(nu.mass()).map(|(a, b)| a * b).sum();
        assert!((mean - 1.0).abs() < 1e-12);
    }
}

#[test]
fn uniform_on_single_state_chain() {
    let mdp = TabularMdp::new(1, 2, vec![1.0, 1.0], vec![1.0, 3.0]).unwrap();
    let pi = Policy::new(1, 2, vec![0.25, 0.75]).unwrap();
    let mu = stationary_distribution(&mdp, &pi, Default::default()).unwrap();
    assert_eq!(mu, StateActionDist::new(1, 2, vec![0.25, 0.75]).unwrap());
    // V = (0.25 + 2.25) / (1 - gamma)
    let q = solve_q_star(&mdp, &pi, Discount::new(0.5).unwrap()).unwrap();
    assert!((q.values()[0] - (1.0 + 0.5 * 5.0)).abs() < 1e-12);
}
