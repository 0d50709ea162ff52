use crate::error::{check_len, Error, Result};
use crate::mdp::StateActionDist;

/// Density ratio over state-action pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioTable {
    n_states: usize,
    n_actions: usize,
    w: Vec<f64>,
}

impl RatioTable {
    pub fn new(n_states: usize, n_actions: usize, w: Vec<f64>) -> Result<Self> {
        check_len("ratio table", n_states * n_actions, w.len())?;
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid(
                "ratio",
                "entries must be finite and nonnegative",
            ));
        }
        Ok(RatioTable {
            n_states,
            n_actions,
            w,
        })
    }

    pub fn constant(n_states: usize, n_actions: usize, value: f64) -> Self {
        RatioTable {
            n_states,
            n_actions,
            w: vec![value; n_states * n_actions],
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.w
    }

    pub fn at(&self, s: usize, a: usize) -> f64 {
        self.w[s * self.n_actions + a]
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    /// `E_dist[w]`.
    pub fn mean_under(&self, dist: &StateActionDist) -> f64 {
        self.w.iter().zip(dist.mass()).map(|(w, m)| w * m).sum()
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.n_states,
            self.n_actions,
            self.w.iter().map(|v| v * factor).collect(),
        )
    }
}

/// `w = mu / nu_b` on the support of `nu_b`, zero elsewhere.
pub fn exact_stationary_ratio(mu: &StateActionDist, nu_b: &StateActionDist) -> Result<RatioTable> {
    check_len("distribution", mu.mass().len(), nu_b.mass().len())?;
    let n_actions = mu.n_actions();
    let uncovered: Vec<(usize, usize)> = mu
        .mass()
        .iter()
        .zip(nu_b.mass())
        .enumerate()
        .filter(|(_, (m, b))| **m > 0.0 && **b == 0.0)
        .map(|(i, _)| (i / n_actions, i % n_actions))
        .collect();
    if !uncovered.is_empty() {
        return Err(Error::Coverage { pairs: uncovered });
    }
    let w = mu
        .mass()
        .iter()
        .zip(nu_b.mass())
        .map(|(m, b)| if *b > 0.0 { m / b } else { 0.0 })
        .collect();
    RatioTable::new(mu.n_states(), n_actions, w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_distributions_give_unit_ratio() {
        let d = StateActionDist::new(2, 2, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let w = exact_stationary_ratio(&d, &d).unwrap();
        assert!(w.values().iter().all(|v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn zero_behavior_mass_outside_target_support_is_fine() {
        let mu = StateActionDist::new(1, 3, vec![0.5, 0.5, 0.0]).unwrap();
        let nu = StateActionDist::new(1, 3, vec![0.25, 0.75, 0.0]).unwrap();
        let w = exact_stationary_ratio(&mu, &nu).unwrap();
        assert_eq!(w.values(), &[2.0, 0.5 / 0.75, 0.0]);
        assert!((w.mean_under(&nu) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn coverage_violation_lists_pairs() {
        let mu = StateActionDist::new(2, 1, vec![0.5, 0.5]).unwrap();
        let nu = StateActionDist::new(2, 1, vec![1.0, 0.0]).unwrap();
        match exact_stationary_ratio(&mu, &nu) {
            Err(Error::Coverage { pairs }) => assert_eq!(pairs, vec![(1, 0)]),
            other => panic!("expected coverage error, got {other:?}"),
        }
    }
}
