//! Exact tabular MDP machinery.
//!
//! Every state-action table in the crate is flattened row-major by state,
//! then action: pair `(s, a)` lives at `s * n_actions + a`.

pub(crate) mod operators;
pub(crate) mod projection;

pub use operators::{
    bellman_apply, contraction_factor_estimate, is_stationary, policy_average, solve_q_star,
    state_action_chain, stationarity_residual, stationary_distribution, ContractionEstimate,
    StationaryOptions,
};
pub use projection::{
    projected_fixed_point, weighted_norm, weighted_projection, FixedPointOptions, Projector,
};

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, Error, Result};

const ROW_TOL: f64 = 1e-12;
const DIST_TOL: f64 = 1e-10;

/// Discount factor in `[0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Discount(f64);

impl Discount {
    pub fn new(gamma: f64) -> Result<Self> {
        if (0.0..1.0).contains(&gamma) {
            Ok(Discount(gamma))
        } else {
            Err(Error::invalid("gamma", format!("{gamma} not in [0, 1)")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Finite MDP: transition tensor `[s][a][s']` and reward table `[s][a]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    transition: Vec<f64>,
    reward: Vec<f64>,
}

impl TabularMdp {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transition: Vec<f64>,
        reward: Vec<f64>,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::invalid("n_states/n_actions", "must be positive"));
        }
        let n_pairs = n_states * n_actions;
        check_len("transition tensor", n_pairs * n_states, transition.len())?;
        check_len("reward table", n_pairs, reward.len())?;
        for (idx, row) in transition.chunks(n_states).enumerate() {
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::invalid(
                    "transition",
                    format!("row {idx} has a negative or non-finite entry"),
                ));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > ROW_TOL {
                return Err(Error::invalid(
                    "transition",
                    format!("row {idx} sums to {total}"),
                ));
            }
        }
        if reward.iter().any(|r| !r.is_finite()) {
            return Err(Error::invalid("reward", "non-finite entry"));
        }
        Ok(TabularMdp {
            n_states,
            n_actions,
            transition,
            reward,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn n_pairs(&self) -> usize {
        self.n_states * self.n_actions
    }

    pub fn index(&self, s: usize, a: usize) -> usize {
        s * self.n_actions + a
    }

    /// Next-state distribution `P(. | s, a)`.
    pub fn next_states(&self, s: usize, a: usize) -> &[f64] {
        let start = self.index(s, a) * self.n_states;
        &self.transition[start..start + self.n_states]
    }

    pub fn transition(&self) -> &[f64] {
        &self.transition
    }

    pub fn reward(&self) -> &[f64] {
        &self.reward
    }

    pub fn reward_at(&self, s: usize, a: usize) -> f64 {
        self.reward[self.index(s, a)]
    }

    /// Same dynamics with a different reward table.
    pub fn with_reward(&self, reward: Vec<f64>) -> Result<Self> {
        check_len("reward table", self.n_pairs(), reward.len())?;
        if reward.iter().any(|r| !r.is_finite()) {
            return Err(Error::invalid("reward", "non-finite entry"));
        }
        Ok(TabularMdp {
            reward,
            ..self.clone()
        })
    }
}

/// Stochastic policy `probs[s][a]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    n_states: usize,
    n_actions: usize,
    probs: Vec<f64>,
}

impl Policy {
    pub fn new(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        check_len("policy table", n_states * n_actions, probs.len())?;
        for (s, row) in probs.chunks(n_actions).enumerate() {
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::invalid(
                    "policy",
                    format!("state {s} has a negative or non-finite entry"),
                ));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > ROW_TOL {
                return Err(Error::invalid(
                    "policy",
                    format!("state {s} sums to {total}"),
                ));
            }
        }
        Ok(Policy {
            n_states,
            n_actions,
            probs,
        })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Policy {
            n_states,
            n_actions,
            probs: vec![1.0 / n_actions as f64; n_states * n_actions],
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.n_actions + a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub(crate) fn check_against(&self, mdp: &TabularMdp) -> Result<()> {
        check_len("policy states", mdp.n_states(), self.n_states)?;
        check_len("policy actions", mdp.n_actions(), self.n_actions)
    }
}

/// Probability vector over flattened state-action pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct StateActionDist {
    n_states: usize,
    n_actions: usize,
    mass: Vec<f64>,
}

impl StateActionDist {
    pub fn new(n_states: usize, n_actions: usize, mass: Vec<f64>) -> Result<Self> {
        check_len("distribution", n_states * n_actions, mass.len())?;
        if mass.iter().any(|m| !m.is_finite() || *m < 0.0) {
            return Err(Error::invalid(
                "distribution",
                "negative or non-finite mass",
            ));
        }
        let total: f64 = mass.iter().sum();
        if (total - 1.0).abs() > DIST_TOL {
            return Err(Error::invalid(
                "distribution",
                format!("total mass {total} is not 1"),
            ));
        }
        Ok(StateActionDist {
            n_states,
            n_actions,
            mass,
        })
    }

    /// Normalizes nonnegative masses to sum to one.
    pub fn from_unnormalized(n_states: usize, n_actions: usize, mass: Vec<f64>) -> Result<Self> {
        let total: f64 = mass.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::invalid(
                "distribution",
                "total mass must be positive",
            ));
        }
        Self::new(
            n_states,
            n_actions,
            mass.into_iter().map(|m| m / total).collect(),
        )
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        let n = n_states * n_actions;
        StateActionDist {
            n_states,
            n_actions,
            mass: vec![1.0 / n as f64; n],
        }
    }

    /// Product of a state marginal with a policy.
    pub fn from_state_marginal(marginal: &[f64], policy: &Policy) -> Result<Self> {
        check_len("state marginal", policy.n_states(), marginal.len())?;
        let mass = (0..policy.n_states())
            .flat_map(|s| policy.row(s).iter().map(move |p| marginal[s] * p))
            .collect();
        Self::from_unnormalized(policy.n_states(), policy.n_actions(), mass)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn at(&self, s: usize, a: usize) -> f64 {
        self.mass[s * self.n_actions + a]
    }

    pub fn state_marginal(&self) -> Vec<f64> {
        self.mass
            .chunks(self.n_actions)
            .map(|row| row.iter().sum())
            .collect()
    }

    pub fn support(&self) -> Vec<usize> {
        (0..self.mass.len())
            .filter(|&i| self.mass[i] > 0.0)
            .collect()
    }

    pub fn l1_distance(&self, other: &StateActionDist) -> f64 {
        self.mass
            .iter()
            .zip(&other.mass)
            .map(|(a, b)| (a - b).abs())
            .sum()
    }

    pub(crate) fn check_pairs(&self, n_pairs: usize) -> Result<()> {
        check_len("distribution", n_pairs, self.mass.len())
    }
}

/// Real values over flattened state-action pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable(pub Vec<f64>);

impl QTable {
    pub fn zeros(n_pairs: usize) -> Self {
        QTable(vec![0.0; n_pairs])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn sub(&self, other: &QTable) -> QTable {
        QTable(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    pub fn sup_norm(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub(crate) fn as_dvector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.0)
    }
}

/// Linear function class `{ phi * theta }` over state-action pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    phi: DMatrix<f64>,
}

impl FeatureMap {
    pub fn new(phi: DMatrix<f64>) -> Result<Self> {
        if phi.ncols() == 0 || phi.nrows() == 0 {
            return Err(Error::invalid(
                "features",
                "need at least one row and column",
            ));
        }
        if phi.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("features", "non-finite entry"));
        }
        Ok(FeatureMap { phi })
    }

    /// Builds from row-major `n_pairs x dim` data.
    pub fn from_rows(n_pairs: usize, dim: usize, data: &[f64]) -> Result<Self> {
        check_len("feature data", n_pairs * dim, data.len())?;
        Self::new(DMatrix::from_row_slice(n_pairs, dim, data))
    }

    /// Identity class: one indicator per pair.
    pub fn one_hot(n_pairs: usize) -> Self {
        FeatureMap {
            phi: DMatrix::identity(n_pairs, n_pairs),
        }
    }

    pub fn dim(&self) -> usize {
        self.phi.ncols()
    }

    pub fn n_pairs(&self) -> usize {
        self.phi.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.phi
    }

    pub fn row(&self, idx: usize) -> nalgebra::RowDVector<f64> {
        self.phi.row(idx).into_owned()
    }

    pub fn eval(&self, theta: &DVector<f64>) -> QTable {
        QTable((&self.phi * theta).iter().copied().collect())
    }
}

/// Member of a linear class, stored by coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearQ {
    pub theta: DVector<f64>,
}

impl LinearQ {
    pub fn new(theta: DVector<f64>) -> Self {
        LinearQ { theta }
    }

    pub fn zeros(dim: usize) -> Self {
        LinearQ {
            theta: DVector::zeros(dim),
        }
    }

    pub fn eval(&self, features: &FeatureMap) -> Result<QTable> {
        check_len("coefficients", features.dim(), self.theta.len())?;
        Ok(features.eval(&self.theta))
    }
}
