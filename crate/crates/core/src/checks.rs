//! Invariant suite: the contraction, projection and error-bound properties,
//! checked by exact computation on seeded instances.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::env::{
    build_baird, exact_stationary_ratio, garnet_generate, GarnetInstance, GarnetParams,
};
use crate::error::Result;
use crate::estimators::{
    dice_solve, ratio_error, resolvent_ratio, variational_residual, DiceMoments, DiceOptions,
    IdentitySource, ResolventSource,
};
use crate::experiment::{misspec_measure, orthogonal_perturbation};
use crate::fqe::{fqe_run, population_step_oracle, FqeConfig, Weighting};
use crate::mdp::{
    bellman_apply, contraction_factor_estimate, policy_average, projected_fixed_point,
    solve_q_star, stationary_distribution, weighted_norm, weighted_projection, Discount,
    FeatureMap, FixedPointOptions, LinearQ, QTable, StateActionDist, StationaryOptions,
};
use crate::sampling::{exhaustive_dataset, fmt_f64};
use crate::seeding::{derive_seed, rng_from};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    /// Worst measured statistic (meaning depends on the check).
    pub worst: f64,
    pub tolerance: f64,
    pub instances: usize,
    pub detail: String,
}

fn outcome(
    name: &'static str,
    worst: f64,
    tolerance: f64,
    instances: usize,
    detail: String,
) -> CheckOutcome {
    CheckOutcome {
        name,
        passed: worst <= tolerance,
        worst,
        tolerance,
        instances,
        detail,
    }
}

fn failed(name: &'static str, err: impl std::fmt::Display) -> CheckOutcome {
    CheckOutcome {
        name,
        passed: false,
        worst: f64::NAN,
        tolerance: f64::NAN,
        instances: 0,
        detail: err.to_string(),
    }
}

const GAMMAS: [f64; 3] = [0.9, 0.95, 0.99];

/// Default-size Garnet instance `i` of a check, with its stationary `mu`.
pub fn check_instance(
    base: u64,
    check: &str,
    i: usize,
    gamma: f64,
) -> Result<(GarnetInstance, StateActionDist)> {
    let g = garnet_generate(GarnetParams {
        seed: derive_seed(base, &[check, &i.to_string()]),
        gamma,
        ..Default::default()
    })?;
    let mu = stationary_distribution(&g.mdp, &g.target, StationaryOptions::default())?;
    Ok((g, mu))
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Random feature map without `Q*` in its span.
pub fn random_features(rng: &mut ChaCha8Rng, n_pairs: usize, d: usize) -> FeatureMap {
    FeatureMap::new(DMatrix::from_fn(n_pairs, d, |_, _| {
        rng.sample(StandardNormal)
    }))
    .expect("finite features")
}

/// `||T Q1 - T Q2||_mu <= gamma ||Q1 - Q2||_mu`, `||P pi h||_mu <= ||h||_mu`
/// and the projected analogue with ridge 0, over random pairs.
/// `worst` is the largest `lhs - rhs` seen.
pub fn check_contraction(base: u64, instances: usize, pairs: usize) -> CheckOutcome {
    let name = "contraction";
    let run = || -> Result<(f64, usize)> {
        let mut worst = f64::NEG_INFINITY;
        let mut violations = 0;
        for i in 0..instances {
            let gamma = GAMMAS[i % GAMMAS.len()];
            let (g, mu) = check_instance(base, name, i, gamma)?;
            let n = g.mdp.n_pairs();
            let mut rng = rng_from(derive_seed(base, &[name, "pairs", &i.to_string()]));
            for _ in 0..pairs {
                let scale = 10f64.powi(rng.random_range(-2..3));
                let q1 = QTable(normal_vec(&mut rng, n, scale));
                let q2 = QTable(normal_vec(&mut rng, n, scale));
                let gap = weighted_norm(&q1.sub(&q2), &mu)?;
                let t1 = bellman_apply(&q1, &g.mdp, &g.target, g.gamma)?;
                let t2 = bellman_apply(&q2, &g.mdp, &g.target, g.gamma)?;
                let p1 = weighted_projection(&t1, &g.features, &mu, 0.0)?.eval(&g.features)?;
                let p2 = weighted_projection(&t2, &g.features, &mu, 0.0)?.eval(&g.features)?;
                // nonexpansiveness of P pi, from the gamma = 0 difference
                let h = q1.sub(&q2);
                let v = policy_average(h.values(), &g.target);
                let ph = QTable(
                    g.mdp
                        .transition()
                        .chunks(g.mdp.n_states())
                        .map(|row| row.iter().zip(&v).map(|(p, x)| p * x).sum())
                        .collect(),
                );
                for slack in [
                    weighted_norm(&t1.sub(&t2), &mu)? - (gamma * gap + 1e-10),
                    weighted_norm(&p1.sub(&p2), &mu)? - (gamma * gap + 1e-10),
                    weighted_norm(&ph, &mu)? - (gap + 1e-10),
                ] {
                    worst = worst.max(slack + 1e-10);
                    if slack > 0.0 {
                        violations += 1;
                    }
                }
            }
        }
        Ok((worst, violations))
    };
    match run() {
        Ok((worst, violations)) => outcome(
            name,
            worst,
            1e-10,
            instances,
            format!("{violations} violations over {instances} x {pairs} pairs"),
        ),
        Err(e) => failed(name, e),
    }
}

/// `||Q*_F - Q*||_mu <= (1-gamma)^-1 inf_f ||f - Q*||_mu` with random features.
/// `worst` is the largest `lhs - rhs`.
pub fn check_approximation_bound(base: u64, instances: usize) -> CheckOutcome {
    let name = "approximation_bound";
    let run = || -> Result<f64> {
        let mut worst = f64::NEG_INFINITY;
        for i in 0..instances {
            let gamma = GAMMAS[i % GAMMAS.len()];
            let (g, mu) = check_instance(base, name, i, gamma)?;
            let mut rng = rng_from(derive_seed(base, &[name, "features", &i.to_string()]));
            let features = random_features(&mut rng, g.mdp.n_pairs(), 5);
            let fixed = projected_fixed_point(
                &g.mdp,
                &g.target,
                g.gamma,
                &features,
                &mu,
                None,
                FixedPointOptions::default(),
            )?
            .eval(&features)?;
            let best = weighted_projection(&g.q_star, &features, &mu, 0.0)?.eval(&features)?;
            let lhs = weighted_norm(&fixed.sub(&g.q_star), &mu)?;
            let inf = weighted_norm(&best.sub(&g.q_star), &mu)?;
            worst = worst.max(lhs - inf / (1.0 - gamma));
        }
        Ok(worst)
    };
    match run() {
        Ok(worst) => outcome(name, worst, 1e-8, instances, "max(lhs - rhs)".into()),
        Err(e) => failed(name, e),
    }
}

/// One ratio-weighted regression on the exhaustive `nu_b (x) P` dataset equals
/// the population step `Pi_F T`. `worst` is the relative coefficient gap.
pub fn check_population_step(base: u64, instances: usize) -> CheckOutcome {
    let name = "population_step";
    let run = || -> Result<f64> {
        let mut worst: f64 = 0.0;
        for i in 0..instances {
            let gamma = GAMMAS[i % GAMMAS.len()];
            let (g, mu) = check_instance(base, name, i, gamma)?;
            let nu = g.reset_distribution()?;
            let w = exact_stationary_ratio(&mu, &nu)?;
            let data = exhaustive_dataset(&g.mdp, &nu, g.mdp.reward())?;
            // probability weight nu(s,a) P(s'|s,a) times the ratio at (s,a)
            let weights: Vec<f64> = data
                .transitions
                .iter()
                .zip(data.weights.as_deref().unwrap_or_default())
                .map(|(t, p)| p * w.at(t.s, t.a))
                .collect();
            let data = data.with_weights(weights)?;
            let mut rng = rng_from(derive_seed(base, &[name, "theta", &i.to_string()]));
            let theta0 = DVector::from_vec(normal_vec(&mut rng, g.features.dim(), 1.0));
            let mut cfg = FqeConfig::new(g.gamma, 1, Weighting::ExactRatio);
            cfg.ridge = 0.0;
            cfg.theta0 = Some(theta0.clone());
            let trace = fqe_run(&data, &g.features, &g.target, &cfg, None)?;
            let oracle = population_step_oracle(
                &LinearQ::new(theta0),
                &g.mdp,
                &g.target,
                g.gamma,
                &g.features,
                &mu,
            )?;
            let gap = (&trace.last().theta - &oracle.theta).amax();
            worst = worst.max(gap / oracle.theta.amax().max(1.0));
        }
        Ok(worst)
    };
    match run() {
        Ok(worst) => outcome(
            name,
            worst,
            1e-8,
            instances,
            "max relative coefficient gap".into(),
        ),
        Err(e) => failed(name, e),
    }
}

/// `E_nu[w_mu f (T Q - Pi_F T Q)] = 0` for every feature column `f`,
/// summed over pairs with the exact ratio. `worst` is the largest |moment|.
pub fn check_orthogonality(base: u64, instances: usize) -> CheckOutcome {
    let name = "projection_orthogonality";
    let run = || -> Result<f64> {
        let mut worst: f64 = 0.0;
        for i in 0..instances {
            let (g, mu) = check_instance(base, name, i, 0.9)?;
            let nu = g.reset_distribution()?;
            let w = exact_stationary_ratio(&mu, &nu)?;
            let mut rng = rng_from(derive_seed(base, &[name, "q", &i.to_string()]));
            let q = QTable(normal_vec(&mut rng, g.mdp.n_pairs(), 1.0));
            let tq = bellman_apply(&q, &g.mdp, &g.target, g.gamma)?;
            let ptq = weighted_projection(&tq, &g.features, &mu, 0.0)?.eval(&g.features)?;
            for col in 0..g.features.dim() {
                let moment: f64 = (0..g.mdp.n_pairs())
                    .map(|p| {
                        nu.mass()[p]
                            * w.values()[p]
                            * g.features.matrix()[(p, col)]
                            * (tq.values()[p] - ptq.values()[p])
                    })
                    .sum();
                worst = worst.max(moment.abs());
            }
        }
        Ok(worst)
    };
    match run() {
        Ok(worst) => outcome(name, worst, 1e-9, instances, "max |moment|".into()),
        Err(e) => failed(name, e),
    }
}

/// Both reward-misspecification bounds on random perturbations, and an exact
/// fixed-point match for mu-orthogonal ones. `worst` is the largest
/// `gap - bound` (orthogonal case: the gap itself).
pub fn check_reward_misspec(base: u64, instances: usize) -> CheckOutcome {
    let name = "reward_misspecification";
    let run = || -> Result<(f64, f64)> {
        let mut worst = f64::NEG_INFINITY;
        let mut orth_worst: f64 = 0.0;
        for i in 0..instances {
            let gamma = GAMMAS[i % GAMMAS.len()];
            let (g, mu) = check_instance(base, name, i, gamma)?;
            let mut rng = rng_from(derive_seed(base, &[name, "r", &i.to_string()]));
            let scale = 10f64.powi(rng.random_range(-2..2));
            let noise = normal_vec(&mut rng, g.mdp.n_pairs(), scale);
            let r_hat = QTable(
                g.mdp
                    .reward()
                    .iter()
                    .zip(&noise)
                    .map(|(r, e)| r + e)
                    .collect(),
            );
            let m = misspec_measure(&g.mdp, &g.target, g.gamma, &g.features, &mu, &r_hat)?;
            worst = worst
                .max(m.fixed_point_gap - m.bound_reward)
                .max(m.fixed_point_gap - m.bound_projected);
            let orth = orthogonal_perturbation(
                g.mdp.reward(),
                &g.features,
                &mu,
                scale,
                derive_seed(base, &[name, "orth", &i.to_string()]),
            )?;
            let m = misspec_measure(&g.mdp, &g.target, g.gamma, &g.features, &mu, &orth)?;
            orth_worst = orth_worst.max(m.fixed_point_gap);
        }
        Ok((worst, orth_worst))
    };
    match run() {
        Ok((worst, orth)) => {
            let mut o = outcome(
                name,
                worst.max(orth),
                1e-8,
                instances,
                format!("max(gap - bound) = {worst:e}; orthogonal gap = {orth:e}"),
            );
            o.passed = worst <= 1e-8 && orth <= 1e-8;
            o
        }
        Err(e) => failed(name, e),
    }
}

/// Contraction factor under multiplicatively perturbed `mu` stays below
/// `gamma sqrt((1+eps)/(1-eps))`. `worst` is the largest `factor - bound`.
pub fn check_perturbed_weights(base: u64, instances: usize, epsilons: &[f64]) -> CheckOutcome {
    let name = "perturbed_weight_contraction";
    let run = || -> Result<f64> {
        let mut worst = f64::NEG_INFINITY;
        for i in 0..instances {
            let gamma = GAMMAS[i % GAMMAS.len()];
            let (g, mu) = check_instance(base, name, i, gamma)?;
            for &eps in epsilons {
                let mut rng = rng_from(derive_seed(base, &[name, &fmt_f64(eps), &i.to_string()]));
                let mass: Vec<f64> = mu
                    .mass()
                    .iter()
                    .map(|m| m * rng.random_range(1.0 - eps..=1.0 + eps))
                    .collect();
                let perturbed =
                    StateActionDist::from_unnormalized(mu.n_states(), mu.n_actions(), mass)?;
                let est = contraction_factor_estimate(&g.mdp, &g.target, g.gamma, &perturbed)?;
                let bound = gamma * ((1.0 + eps) / (1.0 - eps)).sqrt();
                worst = worst.max(est.factor - bound);
            }
        }
        Ok(worst)
    };
    match run() {
        Ok(worst) => outcome(name, worst, 1e-8, instances, "max(factor - bound)".into()),
        Err(e) => failed(name, e),
    }
}

/// Population DICE with one-hot classes recovers the exact ratio.
/// `worst` is the sup-norm error.
pub fn check_population_dice(base: u64, instances: usize) -> CheckOutcome {
    let name = "population_dice";
    let run = || -> Result<f64> {
        let mut worst: f64 = 0.0;
        for i in 0..instances {
            let (g, mu) = check_instance(base, name, i, GAMMAS[i % GAMMAS.len()])?;
            let nu = g.reset_distribution()?;
            let w = exact_stationary_ratio(&mu, &nu)?;
            let one_hot = FeatureMap::one_hot(g.mdp.n_pairs());
            let moments = DiceMoments::population(&g.mdp, &nu, &g.target, &one_hot, &one_hot, 0.0)?;
            let est = dice_solve(
                &moments,
                &one_hot,
                g.n_states(),
                g.n_actions(),
                DiceOptions {
                    critic_reg: 0.0,
                    ..Default::default()
                },
            )?;
            let err = est
                .values
                .values()
                .iter()
                .zip(w.values())
                .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
            worst = worst.max(err);
        }
        Ok(worst)
    };
    match run() {
        Ok(worst) => outcome(name, worst, 1e-6, instances, "max |w_hat - w|".into()),
        Err(e) => failed(name, e),
    }
}

pub const RESOLVENT_GAMMAS: [f64; 3] = [0.9, 0.99, 0.999];

/// Exact-mode resolvent ratio error to `w_mu`, per instance, over
/// [`RESOLVENT_GAMMAS`]. Instances use full branching so the chain is ergodic.
pub fn resolvent_errors(base: u64, instances: usize) -> Result<Vec<[f64; 3]>> {
    let mut out = Vec::new();
    for i in 0..instances {
        let g = garnet_generate(GarnetParams {
            seed: derive_seed(base, &["resolvent", &i.to_string()]),
            n_states: 30,
            n_actions: 3,
            branching: 30,
            gamma: 0.9,
            ..Default::default()
        })?;
        let mu = stationary_distribution(&g.mdp, &g.target, StationaryOptions::default())?;
        let nu = g.reset_distribution()?;
        let w = exact_stationary_ratio(&mu, &nu)?;
        let mut errs = [0.0; 3];
        for (e, gp) in errs.iter_mut().zip(RESOLVENT_GAMMAS) {
            let est = resolvent_ratio(
                ResolventSource::Exact {
                    mdp: &g.mdp,
                    nu_b: &nu,
                },
                &g.target,
                gp,
                Default::default(),
            )?;
            *e = ratio_error(&est.values, &w, &mu)?;
        }
        out.push(errs);
    }
    Ok(out)
}

/// `worst` is the largest increase of the error along the `gamma'` grid.
pub fn check_resolvent_monotone(base: u64, instances: usize) -> CheckOutcome {
    let name = "resolvent_monotone";
    match resolvent_errors(base, instances) {
        Ok(errs) => {
            let worst = errs
                .iter()
                .map(|e| (e[1] - e[0]).max(e[2] - e[1]))
                .fold(f64::NEG_INFINITY, f64::max);
            outcome(
                name,
                worst,
                0.0,
                instances,
                format!("first instance errors {:?}", errs[0]),
            )
        }
        Err(e) => failed(name, e),
    }
}

/// The exact ratio satisfies the stationarity identity on Garnet and Baird.
pub fn check_variational_identity(base: u64, instances: usize) -> CheckOutcome {
    let name = "variational_identity";
    let run = || -> Result<f64> {
        let mut worst: f64 = 0.0;
        for i in 0..instances {
            let (g, mu) = check_instance(base, name, i, 0.9)?;
            let nu = g.reset_distribution()?;
            let w = exact_stationary_ratio(&mu, &nu)?;
            let r = variational_residual(
                &w,
                IdentitySource::Exact {
                    mdp: &g.mdp,
                    nu_b: &nu,
                },
                &g.target,
            )?;
            worst = worst.max(r);
        }
        for kappa in [1.0, 0.7, 0.05] {
            let b = build_baird(kappa)?;
            let nu = b.behavior_stationary()?;
            let w = exact_stationary_ratio(&b.target_stationary()?, &nu)?;
            let r = variational_residual(
                &w,
                IdentitySource::Exact {
                    mdp: &b.mdp,
                    nu_b: &nu,
                },
                &b.target,
            )?;
            worst = worst.max(r);
        }
        Ok(worst)
    };
    match run() {
        Ok(worst) => outcome(name, worst, 1e-9, instances + 3, "max residual".into()),
        Err(e) => failed(name, e),
    }
}

/// `Q*` from the direct solve agrees with 2000 sweeps of value iteration.
pub fn check_q_star(base: u64, instances: usize) -> CheckOutcome {
    let name = "q_star_vs_value_iteration";
    let run = || -> Result<f64> {
        let mut worst: f64 = 0.0;
        for i in 0..instances {
            let (g, _) = check_instance(base, name, i, 0.9)?;
            let mut q = QTable::zeros(g.mdp.n_pairs());
            for _ in 0..2000 {
                q = bellman_apply(&q, &g.mdp, &g.target, g.gamma)?;
            }
            let direct = solve_q_star(&g.mdp, &g.target, Discount::new(0.9)?)?;
            worst = worst.max(direct.sub(&q).sup_norm());
        }
        Ok(worst)
    };
    match run() {
        Ok(worst) => outcome(name, worst, 1e-8, instances, "sup-norm gap".into()),
        Err(e) => failed(name, e),
    }
}

/// Fast checks, instance counts as in the acceptance suite.
pub fn run_suite(base: u64) -> Vec<CheckOutcome> {
    vec![
        check_q_star(base, 5),
        check_contraction(base, 20, 50),
        check_approximation_bound(base, 50),
        check_population_step(base, 20),
        check_orthogonality(base, 20),
        check_reward_misspec(base, 50),
        check_perturbed_weights(base, 10, &[0.1, 0.2, 0.4]),
        check_population_dice(base, 10),
        check_resolvent_monotone(base, 5),
        check_variational_identity(base, 10),
    ]
}

pub fn write_checks<W: Write>(
    mut out: W,
    checks: &[CheckOutcome],
    metadata: &[(&str, String)],
) -> Result<()> {
    writeln!(out, "# swfqe {}", env!("CARGO_PKG_VERSION"))?;
    for (key, value) in metadata {
        writeln!(out, "# {key}={value}")?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "check",
        "passed",
        "worst",
        "tolerance",
        "instances",
        "detail",
    ])?;
    for c in checks {
        w.write_record([
            c.name.to_string(),
            c.passed.to_string(),
            fmt_f64(c.worst),
            fmt_f64(c.tolerance),
            c.instances.to_string(),
            c.detail.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
