//! Stationary density-ratio estimators and ratio quality metrics.
//!
//! Two estimators: a DICE-style saddle point with linear classes, solved in
//! closed form, and Picard iteration of the discounted resolvent equation
//! `w = (1 - g') pi/mu_b + g' K w`.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::env::RatioTable;
use crate::error::{check_len, Error, Result};
use crate::mdp::projection::factor_gram;
use crate::mdp::{state_action_chain, FeatureMap, Policy, StateActionDist, TabularMdp};
use crate::sampling::{empirical_distribution, TransitionDataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RatioMethod {
    Dice,
    Resolvent,
    Exact,
}

#[derive(Debug, Clone)]
pub struct RatioEstimate {
    pub values: RatioTable,
    pub method: RatioMethod,
    pub gamma_prime: Option<f64>,
    /// DICE: mass of the clipped negative part. Resolvent: `|E_nu[w] - 1|`.
    pub normalization_residual: f64,
    /// Pairs that should carry mass but were never observed (empirical
    /// resolvent) or have no behavior mass (exact resolvent). They get weight 0.
    pub uncovered: Vec<(usize, usize)>,
    /// l1 step sizes of the Picard iteration (resolvent only).
    pub residuals: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct DiceOptions {
    /// Ridge added to the critic second-moment matrix.
    pub critic_reg: f64,
    /// Ridge added to the outer system in `c`; needed when some `g` features
    /// are never observed.
    pub outer_ridge: f64,
    /// Weight of the `(mean g - 1)^2` penalty.
    pub normalization_coef: f64,
}

impl Default for DiceOptions {
    fn default() -> Self {
        DiceOptions {
            critic_reg: 1e-8,
            outer_ridge: 0.0,
            normalization_coef: 1.0,
        }
    }
}

/// Moments defining the linear saddle point
/// `min_c max_beta c^T A beta - beta^T B beta / 2 + coef (m^T c - 1)^2`.
#[derive(Debug, Clone)]
pub struct DiceMoments {
    /// `E[phi_g(s,a) (phi_h(s,a) - phi_h(s',a'))^T]`.
    pub a: DMatrix<f64>,
    /// `E[phi_h phi_h^T] + reg I`.
    pub b: DMatrix<f64>,
    /// `E[phi_g]`.
    pub m: DVector<f64>,
    /// Distribution used to renormalize the clipped estimate.
    norm_dist: Vec<f64>,
    reg: f64,
}

fn check_reg(reg: f64) -> Result<()> {
    if !(reg >= 0.0) {
        return Err(Error::invalid("reg", "must be nonnegative"));
    }
    Ok(())
}

impl DiceMoments {
    /// Sample means over `(s_i, a_i, s'_i, a'_i)`.
    pub fn from_samples(
        data: &TransitionDataset,
        g_features: &FeatureMap,
        h_features: &FeatureMap,
        reg: f64,
        n_actions: usize,
    ) -> Result<Self> {
        check_reg(reg)?;
        if data.is_empty() {
            return Err(Error::Empty("dataset"));
        }
        check_len(
            "h feature pairs",
            g_features.n_pairs(),
            h_features.n_pairs(),
        )?;
        let n_pairs = g_features.n_pairs();
        let dh = h_features.dim();
        // the moments only depend on the (pair, next pair) counts
        let mut counts = vec![0.0; n_pairs];
        let mut flow: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for t in &data.transitions {
            let i = t.s * n_actions + t.a;
            let j = t.s_next * n_actions + t.a_next;
            if i >= n_pairs || j >= n_pairs || t.a >= n_actions || t.a_next >= n_actions {
                return Err(Error::DataInconsistency(format!(
                    "transition ({}, {}) -> ({}, {}) out of range",
                    t.s, t.a, t.s_next, t.a_next
                )));
            }
            counts[i] += 1.0;
            *flow.entry((i, j)).or_default() += 1.0;
        }
        let n = data.len() as f64;
        counts.iter_mut().for_each(|c| *c /= n);
        let (g, h) = (g_features.matrix(), h_features.matrix());
        let weighted_h = DMatrix::from_fn(n_pairs, dh, |i, k| counts[i] * h[(i, k)]);
        // E[1{pair i} (h_i - h_j)] per pair, accumulated in a fixed order
        let mut diff = weighted_h.clone();
        for (&(i, j), &c) in &flow {
            for k in 0..dh {
                diff[(i, k)] -= c / n * h[(j, k)];
            }
        }
        let a = g.transpose() * diff;
        let mut b = h.transpose() * &weighted_h;
        let m = g.transpose() * DVector::from_column_slice(&counts);
        for k in 0..dh {
            b[(k, k)] += reg;
        }
        Ok(DiceMoments {
            a,
            b,
            m,
            norm_dist: counts,
            reg,
        })
    }

    /// Exact expectations with `(s,a) ~ nu_b`, `s' ~ P`, `a' ~ pi`.
    pub fn population(
        mdp: &TabularMdp,
        nu_b: &StateActionDist,
        target: &Policy,
        g_features: &FeatureMap,
        h_features: &FeatureMap,
        reg: f64,
    ) -> Result<Self> {
        check_reg(reg)?;
        check_len("g feature pairs", mdp.n_pairs(), g_features.n_pairs())?;
        check_len("h feature pairs", mdp.n_pairs(), h_features.n_pairs())?;
        check_len("behavior distribution", mdp.n_pairs(), nu_b.mass().len())?;
        let chain = state_action_chain(mdp, target)?;
        let phi_g = g_features.matrix();
        let phi_h = h_features.matrix();
        let mut g_weighted = phi_g.transpose();
        for (j, w) in nu_b.mass().iter().enumerate() {
            g_weighted.column_mut(j).scale_mut(*w);
        }
        let next_h = &chain * phi_h;
        let a = &g_weighted * (phi_h - next_h);
        let mut h_weighted = phi_h.transpose();
        for (j, w) in nu_b.mass().iter().enumerate() {
            h_weighted.column_mut(j).scale_mut(*w);
        }
        let mut b = &h_weighted * phi_h;
        for k in 0..b.nrows() {
            b[(k, k)] += reg;
        }
        let m = phi_g.transpose() * DVector::from_column_slice(nu_b.mass());
        Ok(DiceMoments {
            a,
            b,
            m,
            norm_dist: nu_b.mass().to_vec(),
            reg,
        })
    }

    fn critic_factor(&self) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
        // the critic ridge is already inside b
        factor_gram(self.b.clone(), self.reg, "DICE critic moments")
    }

    /// `max_beta c^T A beta - beta^T B beta / 2 = c^T A B^{-1} A^T c / 2`.
    pub fn inner_value(&self, c: &DVector<f64>) -> Result<f64> {
        check_len("critic coefficients", self.a.nrows(), c.len())?;
        let atc = self.a.transpose() * c;
        let beta = self.critic_factor()?.solve(&atc);
        Ok(0.5 * atc.dot(&beta))
    }
}

/// Closed-form DICE estimate from logged transitions (uses the stored `a'`).
pub fn dice_estimate(
    data: &TransitionDataset,
    g_features: &FeatureMap,
    h_features: &FeatureMap,
    n_states: usize,
    n_actions: usize,
    opts: DiceOptions,
) -> Result<RatioEstimate> {
    check_len(
        "g feature pairs",
        n_states * n_actions,
        g_features.n_pairs(),
    )?;
    let moments =
        DiceMoments::from_samples(data, g_features, h_features, opts.critic_reg, n_actions)?;
    dice_solve(&moments, g_features, n_states, n_actions, opts)
}

/// Minimizes the saddle-point objective given its moments. The inner
/// supremum is `beta = B^{-1} A^T c`, leaving
/// `(A B^{-1} A^T + 2 coef m m^T + outer_ridge I) c = 2 coef m`.
pub fn dice_solve(
    moments: &DiceMoments,
    g_features: &FeatureMap,
    n_states: usize,
    n_actions: usize,
    opts: DiceOptions,
) -> Result<RatioEstimate> {
    if !(opts.outer_ridge >= 0.0) || !(opts.normalization_coef > 0.0) {
        return Err(Error::invalid(
            "dice options",
            "outer_ridge must be >= 0 and normalization_coef > 0",
        ));
    }
    let critic = moments.critic_factor()?;
    let b_inv_at = critic.solve(&moments.a.transpose());
    let mut system = &moments.a * b_inv_at;
    system += (2.0 * opts.normalization_coef) * &moments.m * moments.m.transpose();
    for k in 0..system.nrows() {
        system[(k, k)] += opts.outer_ridge;
    }
    // symmetrize away rounding before the factorization
    let system = (&system + system.transpose()) * 0.5;
    let factor = factor_gram(system, opts.outer_ridge, "DICE outer system")?;
    let c = factor.solve(&(2.0 * opts.normalization_coef * &moments.m));
    let raw = g_features.matrix() * c;

    let clipped: f64 = raw
        .iter()
        .zip(&moments.norm_dist)
        .map(|(w, p)| p * (-w).max(0.0))
        .sum();
    let mut w: Vec<f64> = raw.iter().map(|v| v.max(0.0)).collect();
    let mean: f64 = w.iter().zip(&moments.norm_dist).map(|(w, p)| w * p).sum();
    if !(mean > 0.0) {
        return Err(Error::DataInconsistency(
            "DICE estimate is nonpositive on every observed pair".into(),
        ));
    }
    w.iter_mut().for_each(|v| *v /= mean);
    Ok(RatioEstimate {
        values: RatioTable::new(n_states, n_actions, w)?,
        method: RatioMethod::Dice,
        gamma_prime: None,
        normalization_residual: clipped,
        uncovered: Vec::new(),
        residuals: Vec::new(),
    })
}

/// Where the resolvent operator comes from.
#[derive(Debug, Clone, Copy)]
pub enum ResolventSource<'a> {
    /// True dynamics and behavior distribution.
    Exact {
        mdp: &'a TabularMdp,
        nu_b: &'a StateActionDist,
    },
    /// Count-based plug-in from logged `(s, a, s')`.
    Empirical {
        data: &'a TransitionDataset,
        n_states: usize,
        n_actions: usize,
    },
}

#[derive(Debug, Clone, Copy)]
pub struct ResolventOptions {
    /// Bound on the remaining `nu_b`-weighted l1 error, `gamma' step / (1 - gamma')`.
    pub tol: f64,
    pub max_iters: usize,
    /// Agreement demanded between Picard and the direct solve (exact mode).
    pub agreement_tol: f64,
}

impl Default for ResolventOptions {
    fn default() -> Self {
        ResolventOptions {
            tol: 1e-10,
            max_iters: 1_000_000,
            agreement_tol: 1e-8,
        }
    }
}

/// Sparse `nu_b`-weighted flow: `flows[i] = [(s', nu(i) P(s'|i))]`.
struct Flow {
    n_states: usize,
    n_actions: usize,
    nu: Vec<f64>,
    flows: Vec<Vec<(usize, f64)>>,
}

impl Flow {
    fn exact(mdp: &TabularMdp, nu_b: &StateActionDist) -> Result<Self> {
        check_len("behavior distribution", mdp.n_pairs(), nu_b.mass().len())?;
        let flows = (0..mdp.n_pairs())
            .map(|i| {
                let nu = nu_b.mass()[i];
                mdp.transition()[i * mdp.n_states()..(i + 1) * mdp.n_states()]
                    .iter()
                    .enumerate()
                    .filter(|(_, p)| **p > 0.0 && nu > 0.0)
                    .map(|(s, p)| (s, nu * p))
                    .collect()
            })
            .collect();
        Ok(Flow {
            n_states: mdp.n_states(),
            n_actions: mdp.n_actions(),
            nu: nu_b.mass().to_vec(),
            flows,
        })
    }

    fn empirical(data: &TransitionDataset, n_states: usize, n_actions: usize) -> Result<Self> {
        let nu = empirical_distribution(data, n_states, n_actions)?;
        let n = data.len() as f64;
        let mut dense = vec![0.0; n_states * n_actions * n_states];
        for t in &data.transitions {
            if t.s_next >= n_states {
                return Err(Error::DataInconsistency(format!(
                    "next state {} out of range",
                    t.s_next
                )));
            }
            dense[(t.s * n_actions + t.a) * n_states + t.s_next] += 1.0 / n;
        }
        let flows = dense
            .chunks(n_states)
            .map(|row| {
                row.iter()
                    .enumerate()
                    .filter(|(_, v)| **v > 0.0)
                    .map(|(s, v)| (s, *v))
                    .collect()
            })
            .collect();
        Ok(Flow {
            n_states,
            n_actions,
            nu: nu.mass().to_vec(),
            flows,
        })
    }

    fn state_marginal(&self) -> Vec<f64> {
        self.nu
            .chunks(self.n_actions)
            .map(|row| row.iter().sum())
            .collect()
    }

    /// Occupancy update `m' = (1 - g') rho pi + g' (m P) pi`, with `m = nu w`.
    fn apply(&self, base: &[f64], w: &[f64], target: &Policy, gamma_prime: f64) -> Vec<f64> {
        let mut inflow = vec![0.0; self.n_states];
        for (wi, row) in w.iter().zip(&self.flows) {
            if *wi == 0.0 {
                continue;
            }
            for (s, f) in row {
                inflow[*s] += wi * f;
            }
        }
        let mut next = base.to_vec();
        for (s, &flow_in) in inflow.iter().enumerate() {
            for a in 0..self.n_actions {
                let i = s * self.n_actions + a;
                if self.nu[i] > 0.0 {
                    next[i] = (next[i] + gamma_prime * target.prob(s, a) * flow_in) / self.nu[i];
                } else {
                    next[i] = 0.0;
                }
            }
        }
        next
    }
}

/// Solves the discounted resolvent equation by Picard iteration. The
/// fixed point `w` is the ratio of the `g'`-discounted occupancy started from
/// the behavior state marginal, `m = (1-g') rho pi + g' (m P) pi`, to `nu_b`.
pub fn resolvent_ratio(
    source: ResolventSource<'_>,
    target: &Policy,
    gamma_prime: f64,
    opts: ResolventOptions,
) -> Result<RatioEstimate> {
    if !(0.0..1.0).contains(&gamma_prime) {
        return Err(Error::invalid(
            "gamma_prime",
            format!("{gamma_prime} not in [0, 1)"),
        ));
    }
    let flow = match source {
        ResolventSource::Exact { mdp, nu_b } => {
            target.check_against(mdp)?;
            Flow::exact(mdp, nu_b)?
        }
        ResolventSource::Empirical {
            data,
            n_states,
            n_actions,
        } => {
            check_len("target states", n_states, target.n_states())?;
            check_len("target actions", n_actions, target.n_actions())?;
            Flow::empirical(data, n_states, n_actions)?
        }
    };
    let rho = flow.state_marginal();
    let n_actions = flow.n_actions;
    let base: Vec<f64> = (0..flow.nu.len())
        .map(|i| {
            (1.0 - gamma_prime) * rho[i / n_actions] * target.prob(i / n_actions, i % n_actions)
        })
        .collect();

    let mut w = flow.apply(&base, &vec![0.0; flow.nu.len()], target, gamma_prime);
    let mut residuals = Vec::new();
    let mut converged = false;
    for _ in 0..opts.max_iters {
        let next = flow.apply(&base, &w, target, gamma_prime);
        let step: f64 = next
            .iter()
            .zip(&w)
            .zip(&flow.nu)
            .map(|((a, b), p)| p * (a - b).abs())
            .sum();
        w = next;
        residuals.push(step);
        // the flow is a gamma'-contraction in l1
        if step * gamma_prime <= opts.tol * (1.0 - gamma_prime) {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NoConvergence {
            iters: opts.max_iters,
            residual: residuals.last().copied().unwrap_or(f64::NAN),
        });
    }

    if let ResolventSource::Exact { mdp, nu_b } = source {
        let direct = resolvent_direct(mdp, nu_b, target, gamma_prime)?;
        let gap = direct
            .iter()
            .zip(&w)
            .zip(nu_b.mass())
            .map(|((a, b), p)| p * (a - b).abs())
            .sum::<f64>();
        if gap > opts.agreement_tol {
            return Err(Error::CrossCheck {
                context: "resolvent Picard vs direct solve",
                gap,
            });
        }
    }

    // mass the target flow sends to pairs outside the behavior support
    let mut uncovered = Vec::new();
    let mut inflow = vec![0.0; flow.n_states];
    for (wi, row) in w.iter().zip(&flow.flows) {
        for (s, f) in row {
            inflow[*s] += wi * f;
        }
    }
    for (i, nu) in flow.nu.iter().enumerate() {
        let (s, a) = (i / n_actions, i % n_actions);
        if *nu == 0.0 && target.prob(s, a) > 0.0 && (rho[s] > 0.0 || inflow[s] > 0.0) {
            uncovered.push((s, a));
        }
    }

    let mean: f64 = w.iter().zip(&flow.nu).map(|(w, p)| w * p).sum();
    Ok(RatioEstimate {
        values: RatioTable::new(flow.n_states, n_actions, w)?,
        method: RatioMethod::Resolvent,
        gamma_prime: Some(gamma_prime),
        normalization_residual: (mean - 1.0).abs(),
        uncovered,
        residuals,
    })
}

/// Direct LU solve of `(I - g' M^T) m = (1 - g') rho pi`, returned as `m / nu_b`.
fn resolvent_direct(
    mdp: &TabularMdp,
    nu_b: &StateActionDist,
    target: &Policy,
    gamma_prime: f64,
) -> Result<Vec<f64>> {
    let n = mdp.n_pairs();
    let n_actions = mdp.n_actions();
    let rho = nu_b.state_marginal();
    // drop outflow from pairs nu_b never visits: their weight is fixed at 0
    let mut chain = state_action_chain(mdp, target)?;
    for (i, nu) in nu_b.mass().iter().enumerate() {
        if *nu == 0.0 {
            chain.row_mut(i).fill(0.0);
        }
    }
    let lhs = DMatrix::identity(n, n) - gamma_prime * chain.transpose();
    let rhs = DVector::from_fn(n, |i, _| {
        (1.0 - gamma_prime) * rho[i / n_actions] * target.prob(i / n_actions, i % n_actions)
    });
    let m = lhs.lu().solve(&rhs).ok_or(Error::Singular {
        context: "resolvent direct solve",
        hint: "",
    })?;
    Ok(m.iter()
        .zip(nu_b.mass())
        .map(|(m, nu)| if *nu > 0.0 { m / nu } else { 0.0 })
        .collect())
}

/// Where the variational identity is evaluated.
#[derive(Debug, Clone, Copy)]
pub enum IdentitySource<'a> {
    Exact {
        mdp: &'a TabularMdp,
        nu_b: &'a StateActionDist,
    },
    Samples(&'a TransitionDataset),
}

/// `max_f |E_nu[w (f(s,a) - f(s',a'))]|` over one-hot test functions `f`.
/// With `m = nu_b w` this is `max |m - m M|`, zero iff `m` is stationary.
pub fn variational_residual(
    w: &RatioTable,
    source: IdentitySource<'_>,
    target: &Policy,
) -> Result<f64> {
    let n_actions = w.n_actions();
    let n_pairs = w.n_states() * n_actions;
    check_len(
        "target pairs",
        n_pairs,
        target.n_states() * target.n_actions(),
    )?;
    let mut balance = vec![0.0; n_pairs];
    match source {
        IdentitySource::Exact { mdp, nu_b } => {
            check_len("mdp pairs", n_pairs, mdp.n_pairs())?;
            check_len("behavior distribution", n_pairs, nu_b.mass().len())?;
            for i in 0..n_pairs {
                let m = nu_b.mass()[i] * w.values()[i];
                if m == 0.0 {
                    continue;
                }
                balance[i] += m;
                let row = &mdp.transition()[i * mdp.n_states()..(i + 1) * mdp.n_states()];
                for (s, p) in row.iter().enumerate() {
                    if *p == 0.0 {
                        continue;
                    }
                    for (a, pa) in target.row(s).iter().enumerate() {
                        balance[s * n_actions + a] -= m * p * pa;
                    }
                }
            }
        }
        IdentitySource::Samples(data) => {
            if data.is_empty() {
                return Err(Error::Empty("dataset"));
            }
            let n = data.len() as f64;
            for t in &data.transitions {
                let i = t.s * n_actions + t.a;
                let j = t.s_next * n_actions + t.a_next;
                if i >= n_pairs || j >= n_pairs {
                    return Err(Error::DataInconsistency("transition out of range".into()));
                }
                let wi = w.values()[i] / n;
                balance[i] += wi;
                balance[j] -= wi;
            }
        }
    }
    Ok(balance.iter().fold(0.0, |m, v| m.max(v.abs())))
}

/// `||w_hat / w - 1||_{2,mu}` over the support of `mu`.
pub fn ratio_error(w_hat: &RatioTable, w: &RatioTable, mu: &StateActionDist) -> Result<f64> {
    check_len("estimated ratio", w.values().len(), w_hat.values().len())?;
    check_len("distribution", w.values().len(), mu.mass().len())?;
    let n_actions = w.n_actions();
    let mut total = 0.0;
    for (i, m) in mu.mass().iter().enumerate() {
        if *m == 0.0 {
            continue;
        }
        let wi = w.values()[i];
        if wi == 0.0 {
            return Err(Error::UndefinedRatio((i / n_actions, i % n_actions)));
        }
        total += m * (w_hat.values()[i] / wi - 1.0).powi(2);
    }
    Ok(total.sqrt())
}
