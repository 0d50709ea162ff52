//! Python bindings: environments, datasets, FQE runs, ratio estimators and
//! the experiment runner. Tables cross the boundary as flat lists indexed
//! `s * n_actions + a`.

use std::path::Path;

use nalgebra::DVector;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use swfqe::env::{build_baird, exact_stationary_ratio, garnet_generate, GarnetParams, RatioTable};
use swfqe::estimators::{
    dice_estimate, ratio_error as core_ratio_error, resolvent_ratio, DiceOptions, ResolventSource,
};
use swfqe::experiment::{
    preset as core_preset, run_config, write_outputs, ExperimentConfig, PRESET_NAMES,
};
use swfqe::fqe::{fqe_run, FqeConfig, FqeOracles, Weighting};
use swfqe::mdp::{
    solve_q_star, stationary_distribution, Discount, FeatureMap, Policy, QTable, StateActionDist,
    TabularMdp,
};
use swfqe::sampling::{sample_dataset, Scheme, TransitionDataset};

fn py_err(e: swfqe::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_scheme(name: &str) -> PyResult<Scheme> {
    match name {
        "reset" => Ok(Scheme::Reset),
        "trajectory" => Ok(Scheme::Trajectory),
        other => Err(PyValueError::new_err(format!(
            "unknown scheme `{other}` (expected reset or trajectory)"
        ))),
    }
}

fn policy_rows(pi: &Policy) -> Vec<Vec<f64>> {
    (0..pi.n_states()).map(|s| pi.row(s).to_vec()).collect()
}

/// A tabular environment: MDP, target and behavior policies, features, `Q*`.
#[pyclass(name = "Environment", frozen)]
struct PyEnvironment {
    kind: &'static str,
    mdp: TabularMdp,
    target: Policy,
    behavior: Policy,
    features: FeatureMap,
    gamma: Discount,
    q_star: QTable,
    mu: StateActionDist,
}

impl PyEnvironment {
    fn sampling_law(&self, scheme: Scheme) -> swfqe::Result<StateActionDist> {
        match scheme {
            Scheme::Trajectory => {
                stationary_distribution(&self.mdp, &self.behavior, Default::default())
            }
            _ => {
                let n = self.mdp.n_states();
                StateActionDist::from_state_marginal(&vec![1.0 / n as f64; n], &self.behavior)
            }
        }
    }

    fn ratio(&self, scheme: Scheme) -> swfqe::Result<RatioTable> {
        exact_stationary_ratio(&self.mu, &self.sampling_law(scheme)?)
    }
}

#[pymethods]
impl PyEnvironment {
    #[staticmethod]
    #[pyo3(signature = (seed, n_states=100, n_actions=4, branching=5, gamma=0.99, d=5, epsilon=0.1))]
    fn garnet(
        seed: u64,
        n_states: usize,
        n_actions: usize,
        branching: usize,
        gamma: f64,
        d: usize,
        epsilon: f64,
    ) -> PyResult<Self> {
        let g = garnet_generate(GarnetParams {
            seed,
            n_states,
            n_actions,
            branching,
            gamma,
            d,
            epsilon,
            ..Default::default()
        })
        .map_err(py_err)?;
        let mu = stationary_distribution(&g.mdp, &g.target, Default::default()).map_err(py_err)?;
        Ok(PyEnvironment {
            kind: "garnet",
            mdp: g.mdp,
            target: g.target,
            behavior: g.behavior,
            features: g.features,
            gamma: g.gamma,
            q_star: g.q_star,
            mu,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (kappa, gamma=0.95))]
    fn baird(kappa: f64, gamma: f64) -> PyResult<Self> {
        let b = build_baird(kappa).map_err(py_err)?;
        let gamma = Discount::new(gamma).map_err(py_err)?;
        let q_star = solve_q_star(&b.mdp, &b.target, gamma).map_err(py_err)?;
        let mu = b.target_stationary().map_err(py_err)?;
        Ok(PyEnvironment {
            kind: "baird",
            mdp: b.mdp,
            target: b.target,
            behavior: b.behavior,
            features: b.features,
            gamma,
            q_star,
            mu,
        })
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.kind
    }

    #[getter]
    fn n_states(&self) -> usize {
        self.mdp.n_states()
    }

    #[getter]
    fn n_actions(&self) -> usize {
        self.mdp.n_actions()
    }

    #[getter]
    fn gamma(&self) -> f64 {
        self.gamma.value()
    }

    #[getter]
    fn q_star(&self) -> Vec<f64> {
        self.q_star.values().to_vec()
    }

    #[getter]
    fn reward(&self) -> Vec<f64> {
        self.mdp.reward().to_vec()
    }

    /// Feature matrix, one row per state-action pair.
    #[getter]
    fn features(&self) -> Vec<Vec<f64>> {
        let phi = self.features.matrix();
        (0..phi.nrows())
            .map(|i| phi.row(i).iter().copied().collect())
            .collect()
    }

    #[getter]
    fn target_policy(&self) -> Vec<Vec<f64>> {
        policy_rows(&self.target)
    }

    #[getter]
    fn behavior_policy(&self) -> Vec<Vec<f64>> {
        policy_rows(&self.behavior)
    }

    /// Stationary state-action distribution of the target chain.
    fn stationary(&self) -> Vec<f64> {
        self.mu.mass().to_vec()
    }

    /// Exact law of logged pairs under `scheme`.
    #[pyo3(signature = (scheme="reset"))]
    fn behavior_distribution(&self, scheme: &str) -> PyResult<Vec<f64>> {
        Ok(self
            .sampling_law(parse_scheme(scheme)?)
            .map_err(py_err)?
            .mass()
            .to_vec())
    }

    /// Stationary density ratio `mu / nu_b` under `scheme`.
    #[pyo3(signature = (scheme="reset"))]
    fn exact_ratio(&self, scheme: &str) -> PyResult<Vec<f64>> {
        Ok(self
            .ratio(parse_scheme(scheme)?)
            .map_err(py_err)?
            .values()
            .to_vec())
    }

    /// Fixed point of the `mu`-weighted projected Bellman operator.
    #[pyo3(signature = (ridge=0.0))]
    fn projected_fixed_point(&self, ridge: f64) -> PyResult<Vec<f64>> {
        let oracles = FqeOracles::new(
            &self.mdp,
            &self.target,
            self.gamma,
            &self.features,
            &self.mu,
            &self.q_star,
            ridge,
        )
        .map_err(py_err)?;
        Ok(oracles.fixed_point().values().to_vec())
    }

    fn __repr__(&self) -> String {
        format!(
            "Environment({}, n_states={}, n_actions={}, gamma={})",
            self.kind,
            self.mdp.n_states(),
            self.mdp.n_actions(),
            self.gamma.value()
        )
    }
}

/// Logged transitions `(s, a, r, s_next, a_next)` with optional weights.
#[pyclass(name = "Dataset", frozen)]
struct PyDataset(TransitionDataset);

#[pymethods]
impl PyDataset {
    #[staticmethod]
    #[pyo3(signature = (env, n, scheme="reset", seed=0, reward_noise_sd=0.0))]
    fn sample(
        env: &PyEnvironment,
        n: usize,
        scheme: &str,
        seed: u64,
        reward_noise_sd: f64,
    ) -> PyResult<Self> {
        sample_dataset(
            &env.mdp,
            &env.behavior,
            &env.target,
            n,
            parse_scheme(scheme)?,
            seed,
            reward_noise_sd,
        )
        .map(PyDataset)
        .map_err(py_err)
    }

    #[staticmethod]
    #[pyo3(signature = (text, seed=0, scheme="reset"))]
    fn from_csv(text: &str, seed: u64, scheme: &str) -> PyResult<Self> {
        TransitionDataset::read_csv(text.as_bytes(), seed, parse_scheme(scheme)?)
            .map(PyDataset)
            .map_err(py_err)
    }

    fn to_csv(&self) -> PyResult<String> {
        let mut buf = Vec::new();
        self.0.write_csv(&mut buf).map_err(py_err)?;
        String::from_utf8(buf).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    fn with_weights(&self, weights: Vec<f64>) -> PyResult<Self> {
        self.0
            .clone()
            .with_weights(weights)
            .map(PyDataset)
            .map_err(py_err)
    }

    #[getter]
    fn transitions(&self) -> Vec<(usize, usize, f64, usize, usize)> {
        self.0
            .transitions
            .iter()
            .map(|t| (t.s, t.a, t.r, t.s_next, t.a_next))
            .collect()
    }

    #[getter]
    fn weights(&self) -> Option<Vec<f64>> {
        self.0.weights.clone()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }
}

/// Runs FQE and returns one dict per iterate. `exact_ratio` weighting on an
/// unweighted dataset uses the environment's exact ratio per sample.
#[pyfunction]
#[pyo3(signature = (env, data, iterations, weighting="unweighted", ridge=1e-6, theta0=None, oracle_ridge=0.0))]
#[allow(clippy::too_many_arguments)]
fn fqe<'py>(
    py: Python<'py>,
    env: &PyEnvironment,
    data: &PyDataset,
    iterations: usize,
    weighting: &str,
    ridge: f64,
    theta0: Option<Vec<f64>>,
    oracle_ridge: f64,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let weighting = Weighting::parse(weighting)
        .ok_or_else(|| PyValueError::new_err(format!("unknown weighting `{weighting}`")))?;
    let mut data = data.0.clone();
    if weighting == Weighting::ExactRatio && data.weights.is_none() {
        let w = env.ratio(data.scheme).map_err(py_err)?;
        let per_sample = data.transitions.iter().map(|t| w.at(t.s, t.a)).collect();
        data = data.with_weights(per_sample).map_err(py_err)?;
    }
    let mut cfg = FqeConfig::new(env.gamma, iterations, weighting);
    cfg.ridge = ridge;
    cfg.theta0 = theta0.map(DVector::from_vec);
    let oracles = FqeOracles::new(
        &env.mdp,
        &env.target,
        env.gamma,
        &env.features,
        &env.mu,
        &env.q_star,
        oracle_ridge,
    )
    .map_err(py_err)?;
    let trace = fqe_run(&data, &env.features, &env.target, &cfg, Some(&oracles)).map_err(py_err)?;
    trace
        .rows
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("k", r.k)?;
            d.set_item("theta", r.theta.iter().copied().collect::<Vec<f64>>())?;
            d.set_item("err_mu", r.err_mu)?;
            d.set_item("err_behavior", r.err_behavior)?;
            d.set_item("eta", r.eta)?;
            d.set_item("err_fixed_point", r.err_fixed_point)?;
            d.set_item("diverged", r.diverged)?;
            Ok(d)
        })
        .collect()
}

/// Estimated stationary ratio table from `data` (`dice` or `resolvent`).
#[pyfunction]
#[pyo3(signature = (env, data, method="dice", gamma_prime=0.99, critic_reg=1e-8, outer_ridge=1e-6))]
fn estimate_ratio(
    env: &PyEnvironment,
    data: &PyDataset,
    method: &str,
    gamma_prime: f64,
    critic_reg: f64,
    outer_ridge: f64,
) -> PyResult<Vec<f64>> {
    let (ns, na) = (env.mdp.n_states(), env.mdp.n_actions());
    let est = match method {
        "dice" => {
            let one_hot = FeatureMap::one_hot(ns * na);
            dice_estimate(
                &data.0,
                &one_hot,
                &one_hot,
                ns,
                na,
                DiceOptions {
                    critic_reg,
                    outer_ridge,
                    ..Default::default()
                },
            )
        }
        "resolvent" => resolvent_ratio(
            ResolventSource::Empirical {
                data: &data.0,
                n_states: ns,
                n_actions: na,
            },
            &env.target,
            gamma_prime,
            Default::default(),
        ),
        other => return Err(PyValueError::new_err(format!("unknown method `{other}`"))),
    }
    .map_err(py_err)?;
    Ok(est.values.values().to_vec())
}

/// `||w_hat / w - 1||_{2,mu}` on the environment's stationary distribution.
#[pyfunction]
fn ratio_error(env: &PyEnvironment, w_hat: Vec<f64>, w: Vec<f64>) -> PyResult<f64> {
    let (ns, na) = (env.mdp.n_states(), env.mdp.n_actions());
    let w_hat = RatioTable::new(ns, na, w_hat).map_err(py_err)?;
    let w = RatioTable::new(ns, na, w).map_err(py_err)?;
    core_ratio_error(&w_hat, &w, &env.mu).map_err(py_err)
}

#[pyfunction]
fn preset_names() -> Vec<&'static str> {
    PRESET_NAMES.to_vec()
}

/// TOML text of a named preset.
#[pyfunction]
fn preset(name: &str) -> PyResult<&'static str> {
    core_preset(name).ok_or_else(|| PyValueError::new_err(format!("unknown preset `{name}`")))
}

/// Runs a TOML experiment config and returns the written CSV paths.
#[pyfunction]
fn run_experiment(py: Python<'_>, config: &str, out_dir: &str) -> PyResult<Vec<String>> {
    let cfg = ExperimentConfig::from_toml(config).map_err(py_err)?;
    let paths = py
        .detach(|| run_config(&cfg).and_then(|out| write_outputs(&cfg, &out, Path::new(out_dir))))
        .map_err(py_err)?;
    Ok(paths.iter().map(|p| p.display().to_string()).collect())
}

/// The invariant suite, one dict per check.
#[pyfunction]
#[pyo3(signature = (base_seed=0))]
fn check_suite<'py>(py: Python<'py>, base_seed: u64) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let checks = py.detach(|| swfqe::checks::run_suite(base_seed));
    checks
        .iter()
        .map(|c| {
            let d = PyDict::new(py);
            d.set_item("name", c.name)?;
            d.set_item("passed", c.passed)?;
            d.set_item("worst", c.worst)?;
            d.set_item("tolerance", c.tolerance)?;
            d.set_item("instances", c.instances)?;
            d.set_item("detail", &c.detail)?;
            Ok(d)
        })
        .collect()
}

#[pymodule]
#[pyo3(name = "swfqe")]
pub fn swfqe_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyEnvironment>()?;
    m.add_class::<PyDataset>()?;
    m.add_function(wrap_pyfunction!(fqe, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(ratio_error, m)?)?;
    m.add_function(wrap_pyfunction!(preset_names, m)?)?;
    m.add_function(wrap_pyfunction!(preset, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(check_suite, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
