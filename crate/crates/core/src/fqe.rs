//! Fitted Q-evaluation with optional stationary weighting.
//!
//! Each iteration regresses Bellman targets `r + gamma (pi Q_k)(s')` onto the
//! linear class with per-sample weights. With unit weights this is standard
//! FQE; with stationary density ratios the regression norm becomes `L2(mu)`.

use std::io::Write;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::mdp::projection::{factor_gram, weighted_norm_slice, ProjectedBellman};
use crate::mdp::{
    bellman_apply, policy_average, projected_fixed_point, stationarity_residual,
    weighted_projection, Discount, FeatureMap, FixedPointOptions, LinearQ, Policy, QTable,
    StateActionDist, TabularMdp,
};
use crate::sampling::{empirical_distribution, fmt_f64, TransitionDataset};

pub const DEFAULT_RIDGE: f64 = 1e-6;
pub const DIVERGENCE_THRESHOLD: f64 = 1e12;

/// Slack allowed in the Picard bound: absolute plus relative to the bound.
const PICARD_ABS_TOL: f64 = 1e-8;
const PICARD_REL_TOL: f64 = 1e-10;

/// `argmin_theta sum_i w_i (y_i - x_i theta)^2 + lambda ||theta||^2`.
pub fn weighted_ridge(
    design: &DMatrix<f64>,
    targets: &[f64],
    weights: &[f64],
    lambda: f64,
) -> Result<DVector<f64>> {
    let solver = WeightedRidge::new(design, weights, lambda)?;
    solver.solve(targets)
}

/// Weighted ridge regression with a fixed design and weights, factored once.
#[derive(Debug, Clone)]
pub struct WeightedRidge {
    /// `X^T W`, shape `d x n`.
    weighted_t: DMatrix<f64>,
    gram: Cholesky<f64, Dyn>,
}

impl WeightedRidge {
    pub fn new(design: &DMatrix<f64>, weights: &[f64], lambda: f64) -> Result<Self> {
        check_len("weights", design.nrows(), weights.len())?;
        if !(lambda >= 0.0) {
            return Err(Error::invalid("lambda", "must be nonnegative"));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::invalid("weights", "must be finite and nonnegative"));
        }
        let mut weighted_t = design.transpose();
        for (j, w) in weights.iter().enumerate() {
            weighted_t.column_mut(j).scale_mut(*w);
        }
        let mut gram = &weighted_t * design;
        for i in 0..gram.nrows() {
            gram[(i, i)] += lambda;
        }
        let gram = factor_gram(gram, lambda, "weighted ridge regression")?;
        Ok(WeightedRidge { weighted_t, gram })
    }

    pub fn solve(&self, targets: &[f64]) -> Result<DVector<f64>> {
        check_len("targets", self.weighted_t.ncols(), targets.len())?;
        let rhs = &self.weighted_t * DVector::from_column_slice(targets);
        Ok(self.gram.solve(&rhs))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    Unweighted,
    ExactRatio,
    EstimatedRatio,
    Custom,
}

impl Weighting {
    pub fn as_str(self) -> &'static str {
        match self {
            Weighting::Unweighted => "unweighted",
            Weighting::ExactRatio => "exact_ratio",
            Weighting::EstimatedRatio => "estimated_ratio",
            Weighting::Custom => "custom",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "unweighted" => Some(Weighting::Unweighted),
            "exact_ratio" => Some(Weighting::ExactRatio),
            "estimated_ratio" => Some(Weighting::EstimatedRatio),
            "custom" => Some(Weighting::Custom),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NextValue {
    /// `(pi Q)(s') = sum_a' pi(a'|s') Q(s', a')`.
    Expected,
    /// `Q(s', a')` at the logged next action.
    Sampled,
}

#[derive(Debug, Clone)]
pub struct FqeConfig {
    pub gamma: Discount,
    pub iterations: usize,
    pub ridge: f64,
    pub weighting: Weighting,
    /// Defaults to zero.
    pub theta0: Option<DVector<f64>>,
    pub next_value: NextValue,
    pub divergence_threshold: f64,
}

impl FqeConfig {
    pub fn new(gamma: Discount, iterations: usize, weighting: Weighting) -> Self {
        FqeConfig {
            gamma,
            iterations,
            ridge: DEFAULT_RIDGE,
            weighting,
            theta0: None,
            next_value: NextValue::Expected,
            divergence_threshold: DIVERGENCE_THRESHOLD,
        }
    }
}

/// Ground truth used for the trace diagnostics. Only available in simulation.
#[derive(Debug, Clone)]
pub struct FqeOracles {
    mdp: TabularMdp,
    target: Policy,
    mu: StateActionDist,
    q_star: QTable,
    fixed_point: QTable,
    ridge: f64,
    behavior_dist: Option<StateActionDist>,
}

impl FqeOracles {
    /// Computes `Q*_F`, the fixed point of the `L2(mu)` projected Bellman
    /// operator with projection ridge `ridge`.
    pub fn new(
        mdp: &TabularMdp,
        target: &Policy,
        gamma: Discount,
        features: &FeatureMap,
        mu: &StateActionDist,
        q_star: &QTable,
        ridge: f64,
    ) -> Result<Self> {
        let theta = projected_fixed_point(
            mdp,
            target,
            gamma,
            features,
            mu,
            None,
            FixedPointOptions {
                ridge,
                ..Default::default()
            },
        )?;
        Ok(FqeOracles {
            mdp: mdp.clone(),
            target: target.clone(),
            mu: mu.clone(),
            q_star: q_star.clone(),
            fixed_point: theta.eval(features)?,
            ridge,
            behavior_dist: None,
        })
    }

    /// Measures `err_behavior` against this distribution instead of the
    /// dataset's empirical pair frequencies.
    pub fn with_behavior_dist(mut self, dist: StateActionDist) -> Self {
        self.behavior_dist = Some(dist);
        self
    }

    pub fn fixed_point(&self) -> &QTable {
        &self.fixed_point
    }

    pub fn mu(&self) -> &StateActionDist {
        &self.mu
    }

    pub fn q_star(&self) -> &QTable {
        &self.q_star
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub k: usize,
    pub theta: DVector<f64>,
    /// `||Q_k - Q*||_{2,mu}`.
    pub err_mu: Option<f64>,
    /// `||Q_k - Q*||` under the behavior distribution.
    pub err_behavior: Option<f64>,
    /// `||Q_k - Pi T Q_{k-1}||_{2,mu}`; absent at `k = 0`.
    pub eta: Option<f64>,
    /// `||Q_k - Q*_F||_{2,mu}`.
    pub err_fixed_point: Option<f64>,
    pub diverged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FqeTrace {
    pub rows: Vec<TraceRow>,
    /// First iteration whose iterate crossed the divergence threshold.
    pub diverged_at: Option<usize>,
}

impl FqeTrace {
    pub fn last(&self) -> &TraceRow {
        self.rows.last().expect("trace has at least iterate 0")
    }

    pub fn diverged(&self) -> bool {
        self.diverged_at.is_some()
    }

    /// CSV with header `k,err_mu,err_behavior,eta_k,err_fixed_point,diverged`,
    /// preceded by `# key=value` metadata lines.
    pub fn write_csv<W: Write>(&self, mut out: W, metadata: &[(&str, String)]) -> Result<()> {
        for (key, value) in metadata {
            writeln!(out, "# {key}={value}")?;
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "k",
            "err_mu",
            "err_behavior",
            "eta_k",
            "err_fixed_point",
            "diverged",
        ])?;
        let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
        for row in &self.rows {
            w.write_record([
                row.k.to_string(),
                opt(row.err_mu),
                opt(row.err_behavior),
                opt(row.eta),
                opt(row.err_fixed_point),
                row.diverged.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

struct Diagnostics<'a> {
    oracles: &'a FqeOracles,
    op: ProjectedBellman,
    behavior: StateActionDist,
}

impl Diagnostics<'_> {
    fn measure(
        &self,
        features: &FeatureMap,
        theta: &DVector<f64>,
        prev: Option<&DVector<f64>>,
        gamma: f64,
    ) -> (f64, f64, Option<f64>, f64) {
        let q = features.eval(theta);
        let mu = self.oracles.mu.mass();
        let err_mu = weighted_norm_slice(&q.sub(&self.oracles.q_star).0, mu);
        let err_behavior =
            weighted_norm_slice(&q.sub(&self.oracles.q_star).0, self.behavior.mass());
        let err_fixed_point = weighted_norm_slice(&q.sub(&self.oracles.fixed_point).0, mu);
        let eta = prev.map(|p| {
            let image = features.eval(&self.op.apply(p, gamma));
            weighted_norm_slice(&q.sub(&image).0, mu)
        });
        (err_mu, err_behavior, eta, err_fixed_point)
    }
}

/// Runs `config.iterations` FQE steps. Weighted modes read per-sample weights
/// from `data.weights`. Never fails on divergence: once `||theta||_inf`
/// exceeds the threshold (or turns non-finite) the trace is flagged and the
/// iterate frozen.
pub fn fqe_run(
    data: &TransitionDataset,
    features: &FeatureMap,
    target: &Policy,
    config: &FqeConfig,
    oracles: Option<&FqeOracles>,
) -> Result<FqeTrace> {
    if config.iterations < 1 {
        return Err(Error::invalid("iterations", "K must be at least 1"));
    }
    if data.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let n_actions = target.n_actions();
    check_len(
        "features",
        target.n_states() * n_actions,
        features.n_pairs(),
    )?;
    let dim = features.dim();
    let theta0 = match &config.theta0 {
        Some(t) => {
            check_len("theta0", dim, t.len())?;
            t.clone()
        }
        None => DVector::zeros(dim),
    };

    let unit;
    let weights: &[f64] = match config.weighting {
        Weighting::Unweighted => {
            unit = vec![1.0; data.len()];
            &unit
        }
        _ => data.weights.as_deref().ok_or_else(|| {
            Error::invalid(
                "weighting",
                format!("{} requires per-sample weights", config.weighting.as_str()),
            )
        })?,
    };

    let n_pairs = features.n_pairs();
    let mut design = DMatrix::zeros(data.len(), dim);
    for (i, t) in data.transitions.iter().enumerate() {
        if t.s >= target.n_states()
            || t.s_next >= target.n_states()
            || t.a >= n_actions
            || t.a_next >= n_actions
        {
            return Err(Error::DataInconsistency(format!(
                "transition {i} out of range"
            )));
        }
        design.set_row(i, &features.matrix().row(t.s * n_actions + t.a));
    }
    let solver = WeightedRidge::new(&design, weights, config.ridge)?;

    let diagnostics = match oracles {
        Some(o) => {
            check_len("oracle pairs", n_pairs, o.mdp.n_pairs())?;
            let behavior = match &o.behavior_dist {
                Some(d) => d.clone(),
                None => empirical_distribution(data, target.n_states(), n_actions)?,
            };
            Some(Diagnostics {
                oracles: o,
                op: ProjectedBellman::new(
                    &o.mdp,
                    &o.target,
                    features,
                    o.mu.mass(),
                    o.mdp.reward(),
                    o.ridge,
                )?,
                behavior,
            })
        }
        None => None,
    };

    let gamma = config.gamma.value();
    let make_row = |k: usize, theta: &DVector<f64>, prev: Option<&DVector<f64>>, diverged| {
        let (err_mu, err_behavior, eta, err_fp) = match &diagnostics {
            Some(d) => {
                let (a, b, c, e) = d.measure(features, theta, prev, gamma);
                (Some(a), Some(b), c, Some(e))
            }
            None => (None, None, None, None),
        };
        TraceRow {
            k,
            theta: theta.clone(),
            err_mu,
            err_behavior,
            eta,
            err_fixed_point: err_fp,
            diverged,
        }
    };

    let mut rows = Vec::with_capacity(config.iterations + 1);
    rows.push(make_row(0, &theta0, None, false));
    let mut theta = theta0;
    let mut diverged_at = None;
    let mut targets = vec![0.0; data.len()];
    for k in 1..=config.iterations {
        if diverged_at.is_some() {
            let mut frozen = rows.last().cloned().expect("row 0 exists");
            frozen.k = k;
            rows.push(frozen);
            continue;
        }
        let q = features.eval(&theta);
        match config.next_value {
            NextValue::Expected => {
                let v = policy_average(q.values(), target);
                for (y, t) in targets.iter_mut().zip(&data.transitions) {
                    *y = t.r + gamma * v[t.s_next];
                }
            }
            NextValue::Sampled => {
                for (y, t) in targets.iter_mut().zip(&data.transitions) {
                    *y = t.r + gamma * q.values()[t.s_next * n_actions + t.a_next];
                }
            }
        }
        let next = solver.solve(&targets)?;
        let blown = next
            .iter()
            .any(|v| !v.is_finite() || v.abs() > config.divergence_threshold);
        if blown {
            diverged_at = Some(k);
            if next.iter().all(|v| v.is_finite()) {
                rows.push(make_row(k, &next, None, true));
                theta = next;
            } else {
                let mut frozen = rows.last().cloned().expect("row 0 exists");
                frozen.k = k;
                frozen.eta = None;
                frozen.diverged = true;
                rows.push(frozen);
            }
            continue;
        }
        rows.push(make_row(k, &next, Some(&theta), false));
        theta = next;
    }
    Ok(FqeTrace { rows, diverged_at })
}

/// One exact-expectation step: `Pi_F T (q_init)` in `L2(mu)` without ridge.
pub fn population_step_oracle(
    q_init: &LinearQ,
    mdp: &TabularMdp,
    target: &Policy,
    gamma: Discount,
    features: &FeatureMap,
    mu: &StateActionDist,
) -> Result<LinearQ> {
    let residual = stationarity_residual(mu, mdp, target)?;
    if residual > FixedPointOptions::default().stationarity_tol {
        return Err(Error::NotStationary { residual });
    }
    let image = bellman_apply(&q_init.eval(features)?, mdp, target, gamma)?;
    weighted_projection(&image, features, mu, 0.0)
}

/// Population-limit FQE: `iterations` exact ridge-projected Bellman steps in
/// `L2(dist)`, so `dist = mu` is SW-FQE and `dist = nu_b` the unweighted
/// variant. Returns `theta_0 ..= theta_K`.
#[allow(clippy::too_many_arguments)]
pub fn population_fqe(
    mdp: &TabularMdp,
    target: &Policy,
    gamma: Discount,
    features: &FeatureMap,
    dist: &StateActionDist,
    ridge: f64,
    theta0: DVector<f64>,
    iterations: usize,
) -> Result<Vec<DVector<f64>>> {
    check_len("theta0", features.dim(), theta0.len())?;
    let op = ProjectedBellman::new(mdp, target, features, dist.mass(), mdp.reward(), ridge)?;
    let mut iterates = vec![theta0];
    for _ in 0..iterations {
        let next = op.apply(iterates.last().expect("nonempty"), gamma.value());
        iterates.push(next);
    }
    Ok(iterates)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PicardReport {
    /// Iterations checked (all of them unless the run diverged).
    pub checked: usize,
    pub min_slack: f64,
    pub max_slack: f64,
}

/// Checks `a_k <= gamma^k a_0 + sum_{j<=k} gamma^{k-j} eta_j` on every
/// iterate before divergence, where `a_k` is the distance to `Q*_F`.
pub fn picard_diagnostics(trace: &FqeTrace, gamma: Discount) -> Result<PicardReport> {
    let g = gamma.value();
    let usable: Vec<&TraceRow> = trace.rows.iter().take_while(|r| !r.diverged).collect();
    let a0 = usable
        .first()
        .and_then(|r| r.err_fixed_point)
        .ok_or(Error::Empty(
            "trace diagnostics (oracles were not supplied)",
        ))?;
    let mut min_slack = f64::INFINITY;
    let mut max_slack = f64::NEG_INFINITY;
    // recursive form of the bound: b_k = gamma b_{k-1} + eta_k, b_0 = a_0
    let mut bound = a0;
    for row in usable.iter().skip(1) {
        let eta = row
            .eta
            .ok_or(Error::Empty("trace diagnostics (missing eta)"))?;
        let a = row
            .err_fixed_point
            .ok_or(Error::Empty("trace diagnostics (missing error)"))?;
        bound = g * bound + eta;
        let slack = bound - a;
        if slack < -(PICARD_ABS_TOL + PICARD_REL_TOL * bound) {
            return Err(Error::PicardViolation {
                k: row.k,
                lhs: a,
                rhs: bound,
            });
        }
        min_slack = min_slack.min(slack);
        max_slack = max_slack.max(slack);
    }
    if usable.len() == 1 {
        min_slack = 0.0;
        max_slack = 0.0;
    }
    Ok(PicardReport {
        checked: usable.len(),
        min_slack,
        max_slack,
    })
}
