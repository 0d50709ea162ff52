use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use super::operators::{bellman_with_reward, stationarity_residual};
use super::{Discount, FeatureMap, LinearQ, Policy, QTable, StateActionDist, TabularMdp};
use crate::error::{check_len, Error, Result};

/// Condition-number floor below which an unregularized Gram matrix counts as singular.
const RANK_TOL: f64 = 1e-13;

/// `sqrt(sum dist * f^2)`.
pub fn weighted_norm(f: &QTable, dist: &StateActionDist) -> Result<f64> {
    check_len("function", dist.mass().len(), f.len())?;
    Ok(weighted_norm_slice(f.values(), dist.mass()))
}

pub(crate) fn weighted_norm_slice(f: &[f64], mass: &[f64]) -> f64 {
    f.iter()
        .zip(mass)
        .map(|(v, m)| m * v * v)
        .sum::<f64>()
        .sqrt()
}

/// Cached ridge projection onto `span(phi)` in `L2(dist)`.
#[derive(Debug, Clone)]
pub struct Projector {
    /// `phi^T D`, shape `d x n_pairs`.
    weighted_t: DMatrix<f64>,
    gram: Cholesky<f64, Dyn>,
}

impl Projector {
    pub fn new(features: &FeatureMap, dist: &StateActionDist, ridge: f64) -> Result<Self> {
        Self::from_mass(features, dist.mass(), ridge)
    }

    /// Same as [`Projector::new`] with unnormalized nonnegative weights.
    pub(crate) fn from_mass(features: &FeatureMap, mass: &[f64], ridge: f64) -> Result<Self> {
        check_len("distribution", features.n_pairs(), mass.len())?;
        if !(ridge >= 0.0) {
            return Err(Error::invalid("ridge", "must be nonnegative"));
        }
        let phi = features.matrix();
        let mut weighted_t = phi.transpose();
        for (j, m) in mass.iter().enumerate() {
            weighted_t.column_mut(j).scale_mut(*m);
        }
        let mut gram = &weighted_t * phi;
        let d = gram.nrows();
        for i in 0..d {
            gram[(i, i)] += ridge;
        }
        let gram = factor_gram(gram, ridge, "weighted projection")?;
        Ok(Projector { weighted_t, gram })
    }

    pub fn project(&self, target: &[f64]) -> Result<DVector<f64>> {
        check_len("projection target", self.weighted_t.ncols(), target.len())?;
        let rhs = &self.weighted_t * DVector::from_column_slice(target);
        Ok(self.gram.solve(&rhs))
    }

    pub(crate) fn weighted_t(&self) -> &DMatrix<f64> {
        &self.weighted_t
    }

    pub(crate) fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        self.gram.solve(rhs)
    }
}

/// Cholesky of a symmetric Gram matrix; rank-deficient systems are rejected
/// when no ridge is present.
pub(crate) fn factor_gram(
    gram: DMatrix<f64>,
    ridge: f64,
    context: &'static str,
) -> Result<Cholesky<f64, Dyn>> {
    let singular = Error::Singular {
        context,
        hint: "; use a ridge > 0",
    };
    if ridge == 0.0 {
        let eig = SymmetricEigen::new(gram.clone()).eigenvalues;
        let max = eig.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let min = eig.iter().fold(f64::INFINITY, |m, v| m.min(*v));
        if !(max > 0.0) || min <= RANK_TOL * max {
            return Err(singular);
        }
    }
    Cholesky::new(gram).ok_or(singular)
}

/// `argmin ||phi theta - target||^2_dist + ridge ||theta||^2`.
pub fn weighted_projection(
    target: &QTable,
    features: &FeatureMap,
    dist: &StateActionDist,
    ridge: f64,
) -> Result<LinearQ> {
    check_len("projection target", features.n_pairs(), target.len())?;
    let projector = Projector::new(features, dist, ridge)?;
    Ok(LinearQ::new(projector.project(target.values())?))
}

#[derive(Debug, Clone, Copy)]
pub struct FixedPointOptions {
    /// Ridge used by the projection inside the operator.
    pub ridge: f64,
    /// l1 stationarity residual tolerated for `dist`.
    pub stationarity_tol: f64,
    /// Allowed `L2(dist)` gap between the Picard and direct solutions,
    /// relative to `max(1, ||Q||)`.
    pub agreement_tol: f64,
    pub picard_max_iters: usize,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        FixedPointOptions {
            ridge: 0.0,
            stationarity_tol: 1e-8,
            agreement_tol: 1e-8,
            picard_max_iters: 1_000_000,
        }
    }
}

/// Matrices of the projected Bellman map `theta -> G^{-1} (b + gamma C theta)`.
pub(crate) struct ProjectedBellman {
    pub projector: Projector,
    /// `phi^T D r`.
    pub b: DVector<f64>,
    /// `phi^T D M phi`.
    pub c: DMatrix<f64>,
}

impl ProjectedBellman {
    pub fn new(
        mdp: &TabularMdp,
        pi: &Policy,
        features: &FeatureMap,
        mass: &[f64],
        reward: &[f64],
        ridge: f64,
    ) -> Result<Self> {
        pi.check_against(mdp)?;
        check_len("features", mdp.n_pairs(), features.n_pairs())?;
        check_len("reward table", mdp.n_pairs(), reward.len())?;
        let projector = Projector::from_mass(features, mass, ridge)?;
        let zero = vec![0.0; mdp.n_pairs()];
        let phi = features.matrix();
        let mut chain_phi = DMatrix::zeros(phi.nrows(), phi.ncols());
        for j in 0..phi.ncols() {
            let col: Vec<f64> = phi.column(j).iter().copied().collect();
            let pushed = bellman_with_reward(&col, &zero, mdp, pi, 1.0);
            chain_phi.set_column(j, &DVector::from_vec(pushed));
        }
        let b = projector.weighted_t() * DVector::from_column_slice(reward);
        let c = projector.weighted_t() * chain_phi;
        Ok(ProjectedBellman { projector, b, c })
    }

    /// `Pi T (phi theta)` as coefficients.
    pub fn apply(&self, theta: &DVector<f64>, gamma: f64) -> DVector<f64> {
        self.projector.solve(&(&self.b + &self.c * theta * gamma))
    }
}

/// Fixed point of the projected operator `Pi_F T` in `L2(dist)`, solved directly
/// and cross-checked against Picard iteration.
pub fn projected_fixed_point(
    mdp: &TabularMdp,
    pi: &Policy,
    gamma: Discount,
    features: &FeatureMap,
    dist: &StateActionDist,
    reward_override: Option<&QTable>,
    opts: FixedPointOptions,
) -> Result<LinearQ> {
    dist.check_pairs(mdp.n_pairs())?;
    let residual = stationarity_residual(dist, mdp, pi)?;
    if residual > opts.stationarity_tol {
        return Err(Error::NotStationary { residual });
    }
    let reward = match reward_override {
        Some(r) => r.values(),
        None => mdp.reward(),
    };
    let op = ProjectedBellman::new(mdp, pi, features, dist.mass(), reward, opts.ridge)?;
    let g = gamma.value();
    let phi = features.matrix();

    // direct: (G - gamma C) theta = b
    let mut gram = &op.projector.weighted_t * phi;
    for i in 0..gram.nrows() {
        gram[(i, i)] += opts.ridge;
    }
    let system = gram - &op.c * g;
    let direct = system.lu().solve(&op.b).ok_or(Error::Singular {
        context: "projected fixed point",
        hint: "; use a ridge > 0",
    })?;

    let seminorm =
        |theta: &DVector<f64>| weighted_norm_slice((phi * theta).as_slice(), dist.mass());
    let scale = seminorm(&direct).max(1.0);

    // picard
    let step_tol = (opts.agreement_tol * 1e-3 * (1.0 - g)).max(1e-15 * scale);
    let mut theta = DVector::zeros(features.dim());
    let mut last_step = f64::INFINITY;
    let mut stalls = 0;
    for _ in 0..opts.picard_max_iters {
        let next = op.apply(&theta, g);
        let step = seminorm(&(&next - &theta));
        theta = next;
        if step <= step_tol {
            break;
        }
        if step >= last_step {
            stalls += 1;
            if stalls > 50 {
                break;
            }
        }
        last_step = step;
    }
    let gap = seminorm(&(&theta - &direct));
    if !(gap <= opts.agreement_tol * scale) {
        return Err(Error::CrossCheck {
            context: "projected fixed point (Picard vs direct)",
            gap,
        });
    }
    Ok(LinearQ::new(direct))
}
