use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::{Discount, Policy, QTable, StateActionDist, TabularMdp};
use crate::error::{check_len, Error, Result};

/// Sup-norm Bellman residual accepted from the direct Q* solve.
const Q_STAR_RESIDUAL: f64 = 1e-9;

/// `(pi Q)(s) = sum_a pi(a|s) Q(s, a)`.
pub fn policy_average(q: &[f64], pi: &Policy) -> Vec<f64> {
    (0..pi.n_states())
        .map(|s| {
            pi.row(s)
                .iter()
                .zip(&q[s * pi.n_actions()..(s + 1) * pi.n_actions()])
                .map(|(p, v)| p * v)
                .sum()
        })
        .collect()
}

/// Policy-evaluation Bellman operator `r + gamma * P pi Q`.
pub fn bellman_apply(q: &QTable, mdp: &TabularMdp, pi: &Policy, gamma: Discount) -> Result<QTable> {
    pi.check_against(mdp)?;
    check_len("q table", mdp.n_pairs(), q.len())?;
    Ok(QTable(bellman_with_reward(
        q.values(),
        mdp.reward(),
        mdp,
        pi,
        gamma.value(),
    )))
}

pub(crate) fn bellman_with_reward(
    q: &[f64],
    reward: &[f64],
    mdp: &TabularMdp,
    pi: &Policy,
    gamma: f64,
) -> Vec<f64> {
    let v = policy_average(q, pi);
    let n_states = mdp.n_states();
    mdp.transition()
        .chunks(n_states)
        .zip(reward)
        .map(|(row, r)| r + gamma * row.iter().zip(&v).map(|(p, x)| p * x).sum::<f64>())
        .collect()
}

/// Dense state-action chain `M[(s,a), (s',a')] = P(s'|s,a) pi(a'|s')`.
pub fn state_action_chain(mdp: &TabularMdp, pi: &Policy) -> Result<DMatrix<f64>> {
    pi.check_against(mdp)?;
    let n = mdp.n_pairs();
    let n_actions = mdp.n_actions();
    let mut chain = DMatrix::zeros(n, n);
    for i in 0..n {
        for (s_next, p) in mdp.transition()[i * mdp.n_states()..(i + 1) * mdp.n_states()]
            .iter()
            .enumerate()
        {
            if *p == 0.0 {
                continue;
            }
            for (a_next, pa) in pi.row(s_next).iter().enumerate() {
                chain[(i, s_next * n_actions + a_next)] = p * pa;
            }
        }
    }
    Ok(chain)
}

/// Solves `(I - gamma M) Q = r` directly.
pub fn solve_q_star(mdp: &TabularMdp, pi: &Policy, gamma: Discount) -> Result<QTable> {
    solve_q_with_reward(mdp, pi, gamma, mdp.reward())
}

pub(crate) fn solve_q_with_reward(
    mdp: &TabularMdp,
    pi: &Policy,
    gamma: Discount,
    reward: &[f64],
) -> Result<QTable> {
    let n = mdp.n_pairs();
    check_len("reward table", n, reward.len())?;
    let chain = state_action_chain(mdp, pi)?;
    let system = DMatrix::identity(n, n) - chain * gamma.value();
    let lu = system.clone().lu();
    let rhs = DVector::from_column_slice(reward);
    let mut q = lu.solve(&rhs).ok_or(Error::Singular {
        context: "Bellman equations",
        hint: "",
    })?;
    // one round of iterative refinement
    let correction = lu.solve(&(&rhs - &system * &q)).ok_or(Error::Singular {
        context: "Bellman equations",
        hint: "",
    })?;
    q += correction;

    let q = QTable(q.iter().copied().collect());
    let image = bellman_with_reward(q.values(), reward, mdp, pi, gamma.value());
    let residual = q
        .values()
        .iter()
        .zip(&image)
        .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
    let scale = q.sup_norm().max(1.0);
    if residual > Q_STAR_RESIDUAL * scale {
        return Err(Error::CrossCheck {
            context: "Q* Bellman residual",
            gap: residual,
        });
    }
    Ok(q)
}

#[derive(Debug, Clone, Copy)]
pub struct StationaryOptions {
    /// l1 tolerance on `||mu - mu M||`.
    pub tol: f64,
    pub max_iters: usize,
    /// Mixing weight toward uniform per step; `None` is plain power iteration.
    pub damping: Option<f64>,
}

impl Default for StationaryOptions {
    fn default() -> Self {
        StationaryOptions {
            tol: 1e-12,
            max_iters: 100_000,
            damping: None,
        }
    }
}

fn push_forward(mass: &[f64], mdp: &TabularMdp, pi: &Policy, out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    let n_states = mdp.n_states();
    let n_actions = mdp.n_actions();
    let mut next_state = vec![0.0; n_states];
    for (i, m) in mass.iter().enumerate() {
        if *m == 0.0 {
            continue;
        }
        for (s_next, p) in mdp.transition()[i * n_states..(i + 1) * n_states]
            .iter()
            .enumerate()
        {
            next_state[s_next] += m * p;
        }
    }
    for (s_next, ms) in next_state.iter().enumerate() {
        if *ms == 0.0 {
            continue;
        }
        for (a_next, pa) in pi.row(s_next).iter().enumerate() {
            out[s_next * n_actions + a_next] += ms * pa;
        }
    }
}

/// Power iteration on the state-action chain, started from uniform.
pub fn stationary_distribution(
    mdp: &TabularMdp,
    pi: &Policy,
    opts: StationaryOptions,
) -> Result<StateActionDist> {
    pi.check_against(mdp)?;
    if !(opts.tol > 0.0) {
        return Err(Error::invalid("tol", "must be positive"));
    }
    if let Some(d) = opts.damping {
        if !(0.0..1.0).contains(&d) {
            return Err(Error::invalid("damping", format!("{d} not in [0, 1)")));
        }
    }
    let n = mdp.n_pairs();
    let uniform = 1.0 / n as f64;
    let mut mass = vec![uniform; n];
    let mut next = vec![0.0; n];
    let mut residual = f64::INFINITY;
    for _ in 0..opts.max_iters {
        push_forward(&mass, mdp, pi, &mut next);
        if let Some(d) = opts.damping {
            next.iter_mut()
                .for_each(|v| *v = (1.0 - d) * *v + d * uniform);
        }
        let total: f64 = next.iter().sum();
        next.iter_mut().for_each(|v| *v /= total);
        residual = mass.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut mass, &mut next);
        if residual <= opts.tol {
            return StateActionDist::new(mdp.n_states(), mdp.n_actions(), mass);
        }
    }
    Err(Error::NoConvergence {
        iters: opts.max_iters,
        residual,
    })
}

/// `||d - d M||_1` for the undamped target chain.
pub fn stationarity_residual(dist: &StateActionDist, mdp: &TabularMdp, pi: &Policy) -> Result<f64> {
    pi.check_against(mdp)?;
    dist.check_pairs(mdp.n_pairs())?;
    let mut next = vec![0.0; mdp.n_pairs()];
    push_forward(dist.mass(), mdp, pi, &mut next);
    Ok(dist
        .mass()
        .iter()
        .zip(&next)
        .map(|(a, b)| (a - b).abs())
        .sum())
}

pub fn is_stationary(
    dist: &StateActionDist,
    mdp: &TabularMdp,
    pi: &Policy,
    tol: f64,
) -> Result<bool> {
    Ok(stationarity_residual(dist, mdp, pi)? <= tol)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContractionEstimate {
    /// Operator norm of `Q -> gamma M Q` in `L2(dist)`.
    pub factor: f64,
    pub support_size: usize,
    /// Whether `dist` has zeros, so the norm is taken on its support only.
    pub restricted: bool,
}

/// Exact `L2(dist)` operator norm of `gamma * M` via a symmetric eigensolve on
/// the support of `dist`. The support must be closed under the chain.
pub fn contraction_factor_estimate(
    mdp: &TabularMdp,
    pi: &Policy,
    gamma: Discount,
    dist: &StateActionDist,
) -> Result<ContractionEstimate> {
    dist.check_pairs(mdp.n_pairs())?;
    let chain = state_action_chain(mdp, pi)?;
    let support = dist.support();
    let mut in_support = vec![false; mdp.n_pairs()];
    support.iter().for_each(|&i| in_support[i] = true);
    let leaks: Vec<(usize, usize)> = support
        .iter()
        .flat_map(|&i| (0..mdp.n_pairs()).map(move |j| (i, j)))
        .filter(|&(i, j)| chain[(i, j)] > 0.0 && !in_support[j])
        .map(|(_, j)| (j / mdp.n_actions(), j % mdp.n_actions()))
        .collect();
    if !leaks.is_empty() {
        return Err(Error::invalid(
            "dist",
            format!(
                "support not closed under the chain ({} reachable pairs have zero mass, first {:?})",
                leaks.len(),
                leaks[0]
            ),
        ));
    }

    let k = support.len();
    let sqrt_d: Vec<f64> = support.iter().map(|&i| dist.mass()[i].sqrt()).collect();
    let scaled = DMatrix::from_fn(k, k, |r, c| {
        sqrt_d[r] * chain[(support[r], support[c])] / sqrt_d[c]
    });
    let gram = scaled.transpose() * &scaled;
    let top = SymmetricEigen::new(gram)
        .eigenvalues
        .iter()
        .fold(0.0_f64, |m, v| m.max(*v));
    Ok(ContractionEstimate {
        factor: gamma.value() * top.sqrt(),
        support_size: k,
        restricted: k < mdp.n_pairs(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_state(reward: f64) -> TabularMdp {
        TabularMdp::new(1, 1, vec![1.0], vec![reward]).unwrap()
    }

    fn two_state_swap() -> TabularMdp {
        // each action flips the state with prob 1/2
        TabularMdp::new(
            2,
            2,
            vec![0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5],
            vec![1.0, -1.0, 0.5, 2.0],
        )
        .unwrap()
    }

    #[test]
    fn bellman_gamma_zero_is_reward() {
        let mdp = two_state_swap();
        let pi = Policy::uniform(2, 2);
        let q = QTable(vec![3.0, -7.0, 11.0, 0.25]);
        let out = bellman_apply(&q, &mdp, &pi, Discount::new(0.0).unwrap()).unwrap();
        assert_eq!(out.values(), mdp.reward());
    }

    #[test]
    fn bellman_single_state() {
        let out = bellman_apply(
            &QTable(vec![4.0]),
            &single_state(1.0),
            &Policy::uniform(1, 1),
            Discount::new(0.5).unwrap(),
        )
        .unwrap();
        assert_eq!(out.values(), &[3.0]);
    }

    #[test]
    fn bellman_rejects_shape_mismatch() {
        let err = bellman_apply(
            &QTable(vec![0.0; 3]),
            &two_state_swap(),
            &Policy::uniform(2, 2),
            Discount::new(0.5).unwrap(),
        );
        assert!(matches!(err, Err(Error::Dimension { .. })));
    }

    #[test]
    fn q_star_geometric_series() {
        let q = solve_q_star(
            &single_state(1.0),
            &Policy::uniform(1, 1),
            Discount::new(0.9).unwrap(),
        )
        .unwrap();
        assert!((q.values()[0] - 10.0).abs() < 1e-12);
    }

    #[test]
    fn q_star_gamma_zero_is_reward() {
        let mdp = two_state_swap();
        let q = solve_q_star(&mdp, &Policy::uniform(2, 2), Discount::new(0.0).unwrap()).unwrap();
        assert_eq!(q.values(), mdp.reward());
    }

    #[test]
    fn symmetric_chain_has_uniform_stationary() {
        let mu = stationary_distribution(
            &two_state_swap(),
            &Policy::uniform(2, 2),
            StationaryOptions::default(),
        )
        .unwrap();
        for m in mu.mass() {
            assert!((m - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn periodic_chain_needs_damping() {
        // 0 <-> 1 is a 2-cycle and 2 feeds into 0: the uniform start oscillates forever
        let mdp = TabularMdp::new(
            3,
            1,
            vec![0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0],
            vec![0.0; 3],
        )
        .unwrap();
        let pi = Policy::uniform(3, 1);
        let plain = stationary_distribution(
            &mdp,
            &pi,
            StationaryOptions {
                max_iters: 5_000,
                ..Default::default()
            },
        );
        assert!(matches!(plain, Err(Error::NoConvergence { .. })));
        let damped = stationary_distribution(
            &mdp,
            &pi,
            StationaryOptions {
                damping: Some(1e-3),
                ..Default::default()
            },
        )
        .unwrap();
        assert!((damped.mass()[0] - 0.5).abs() < 1e-3);
        assert!((damped.mass()[1] - 0.5).abs() < 1e-3);
        assert!(damped.mass()[2] < 1e-3);
    }

    #[test]
    fn non_convergence_reports_residual() {
        // absorbing split: from uniform, converges. Force failure with max_iters = 1.
        let mdp = TabularMdp::new(2, 1, vec![0.0, 1.0, 0.0, 1.0], vec![0.0, 0.0]).unwrap();
        let err = stationary_distribution(
            &mdp,
            &Policy::uniform(2, 1),
            StationaryOptions {
                max_iters: 1,
                ..Default::default()
            },
        );
        match err {
            Err(Error::NoConvergence { residual, .. }) => assert!(residual > 0.0),
            other => panic!("expected NoConvergence, got {other:?}"),
        }
    }

    #[test]
    fn contraction_single_state_is_gamma() {
        let est = contraction_factor_estimate(
            &single_state(0.0),
            &Policy::uniform(1, 1),
            Discount::new(0.7).unwrap(),
            &StateActionDist::uniform(1, 1),
        )
        .unwrap();
        assert!((est.factor - 0.7).abs() < 1e-15);
        assert!(!est.restricted);
    }

    #[test]
    fn contraction_rejects_leaking_support() {
        let mdp = TabularMdp::new(2, 1, vec![0.0, 1.0, 0.0, 1.0], vec![0.0, 0.0]).unwrap();
        let dist = StateActionDist::new(2, 1, vec![1.0, 0.0]).unwrap();
        assert!(contraction_factor_estimate(
            &mdp,
            &Policy::uniform(2, 1),
            Discount::new(0.5).unwrap(),
            &dist
        )
        .is_err());
    }

    #[test]
    fn contraction_restricts_to_closed_support() {
        let mdp = TabularMdp::new(2, 1, vec![0.0, 1.0, 0.0, 1.0], vec![0.0, 0.0]).unwrap();
        let dist = StateActionDist::new(2, 1, vec![0.0, 1.0]).unwrap();
        let est = contraction_factor_estimate(
            &mdp,
            &Policy::uniform(2, 1),
            Discount::new(0.5).unwrap(),
            &dist,
        )
        .unwrap();
        assert!(est.restricted);
        assert_eq!(est.support_size, 1);
        assert!((est.factor - 0.5).abs() < 1e-15);
    }
}
