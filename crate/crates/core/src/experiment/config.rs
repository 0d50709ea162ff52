use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fqe::Weighting;
use crate::sampling::Scheme;
use crate::seeding::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    BairdSweep,
    GarnetSweep,
    RewardMisspec,
    /// First grid value of each axis only.
    SingleRun,
    InvariantSuite,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::BairdSweep => "baird_sweep",
            ExperimentKind::GarnetSweep => "garnet_sweep",
            ExperimentKind::RewardMisspec => "reward_misspec",
            ExperimentKind::SingleRun => "single_run",
            ExperimentKind::InvariantSuite => "invariant_suite",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Environment {
    Baird,
    Garnet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatioMethodName {
    Dice,
    Resolvent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Theta0 {
    Zeros,
    Ones,
}

/// Experiment description. Every field except `experiment` and `name` is
/// optional; [`ExperimentConfig::resolved`] fills in the defaults that depend
/// on the experiment kind. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    /// Output file stem and the `experiment` column of result rows.
    pub name: String,
    /// Only read by `single_run`.
    pub environment: Option<Environment>,
    pub seeds: Option<usize>,
    pub base_seed: Option<u64>,
    pub kappa: Option<Vec<f64>>,
    pub gamma: Option<Vec<f64>>,
    /// Transitions per dataset.
    pub n: Option<usize>,
    /// FQE iterations K.
    pub iterations: Option<usize>,
    pub lambda: Option<f64>,
    pub d: Option<usize>,
    pub epsilon: Option<f64>,
    pub branching: Option<usize>,
    pub n_states: Option<usize>,
    pub n_actions: Option<usize>,
    pub weightings: Option<Vec<Weighting>>,
    pub ratio_method: Option<RatioMethodName>,
    pub gamma_prime: Option<f64>,
    pub dice_reg: Option<f64>,
    pub dice_outer_ridge: Option<f64>,
    pub theta0: Option<Theta0>,
    pub scheme: Option<Scheme>,
    pub reward_noise_sd: Option<f64>,
    /// Scale of the synthetic reward perturbations (reward_misspec).
    pub perturbation_scale: Option<f64>,
    pub self_normalize: Option<bool>,
    /// Ridge of the projection inside the `Q*_F` and `eta_k` oracles.
    pub oracle_ridge: Option<f64>,
    /// Default output directory for the CLI; not part of the hash.
    pub output: Option<String>,
}

pub const BAIRD_KAPPAS: [f64; 4] = [1.0, 0.9, 0.8, 0.7];
pub const GARNET_GAMMAS: [f64; 7] = [0.90, 0.925, 0.95, 0.96, 0.97, 0.98, 0.99];

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::config(config_field(&e), e.message()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Environment actually simulated.
    pub fn environment(&self) -> Environment {
        match self.experiment {
            ExperimentKind::BairdSweep => Environment::Baird,
            ExperimentKind::SingleRun => self.environment.unwrap_or(Environment::Garnet),
            _ => Environment::Garnet,
        }
    }

    /// Copy with every kind-dependent default filled in.
    pub fn resolved(&self) -> Self {
        let baird = self.environment() == Environment::Baird;
        let misspec = self.experiment == ExperimentKind::RewardMisspec;
        let mut c = self.clone();
        c.environment = Some(self.environment());
        c.seeds.get_or_insert(if baird { 100 } else { 50 });
        c.base_seed.get_or_insert(0);
        if baird {
            c.kappa.get_or_insert(BAIRD_KAPPAS.to_vec());
        }
        c.gamma.get_or_insert(if baird {
            vec![0.95]
        } else if misspec {
            vec![0.9]
        } else {
            GARNET_GAMMAS.to_vec()
        });
        c.n.get_or_insert(if baird { 5000 } else { 10_000 });
        c.iterations.get_or_insert(if baird { 100 } else { 200 });
        c.lambda.get_or_insert(1e-6);
        if !baird {
            c.d.get_or_insert(5);
            c.epsilon.get_or_insert(0.1);
            c.branching.get_or_insert(5);
            c.n_states.get_or_insert(100);
            c.n_actions.get_or_insert(4);
        }
        c.weightings
            .get_or_insert(vec![Weighting::Unweighted, Weighting::ExactRatio]);
        if c.weightings
            .as_ref()
            .is_some_and(|w| w.contains(&Weighting::EstimatedRatio))
        {
            c.ratio_method.get_or_insert(RatioMethodName::Dice);
            match c.ratio_method {
                Some(RatioMethodName::Dice) => {
                    c.dice_reg.get_or_insert(1e-8);
                    c.dice_outer_ridge.get_or_insert(1e-6);
                }
                _ => {
                    c.gamma_prime.get_or_insert(0.99);
                }
            }
        }
        c.theta0
            .get_or_insert(if baird { Theta0::Ones } else { Theta0::Zeros });
        c.scheme.get_or_insert(if baird {
            Scheme::Trajectory
        } else {
            Scheme::Reset
        });
        c.reward_noise_sd
            .get_or_insert(if misspec { 0.5 } else { 0.0 });
        if misspec {
            c.perturbation_scale.get_or_insert(0.5);
        }
        c.self_normalize.get_or_insert(false);
        c.oracle_ridge.get_or_insert(if baird { 1e-6 } else { 0.0 });
        c
    }

    /// Hash of the resolved config, written into every output header.
    pub fn hash(&self) -> u64 {
        let mut c = self.resolved();
        c.output = None;
        derive_seed(0, &[c.to_toml()])
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.resolved();
        if c.name.is_empty() || c.name.contains(['/', '\\']) {
            return Err(Error::config("name", "must be a nonempty file stem"));
        }
        if c.seeds == Some(0) {
            return Err(Error::config("seeds", "need at least one seed"));
        }
        if let Some(k) = &c.kappa {
            nonempty("kappa", k)?;
            if let Some(bad) = k.iter().find(|v| !(**v > 0.0 && **v <= 1.0)) {
                return Err(Error::config("kappa", format!("{bad} not in (0, 1]")));
            }
        }
        let g = c.gamma.as_deref().unwrap_or_default();
        nonempty("gamma", g)?;
        if let Some(bad) = g.iter().find(|v| !(0.0..1.0).contains(*v)) {
            return Err(Error::config("gamma", format!("{bad} not in [0, 1)")));
        }
        if c.n == Some(0) {
            return Err(Error::config("n", "need at least one transition"));
        }
        if c.iterations == Some(0) {
            return Err(Error::config("iterations", "K must be at least 1"));
        }
        nonneg("lambda", c.lambda)?;
        nonneg("dice_reg", c.dice_reg)?;
        nonneg("dice_outer_ridge", c.dice_outer_ridge)?;
        nonneg("reward_noise_sd", c.reward_noise_sd)?;
        nonneg("perturbation_scale", c.perturbation_scale)?;
        nonneg("oracle_ridge", c.oracle_ridge)?;
        if let Some(e) = c.epsilon {
            if !(0.0..=1.0).contains(&e) {
                return Err(Error::config("epsilon", format!("{e} not in [0, 1]")));
            }
        }
        if let Some(gp) = c.gamma_prime {
            if !(0.0..1.0).contains(&gp) {
                return Err(Error::config("gamma_prime", format!("{gp} not in [0, 1)")));
            }
        }
        let w = c.weightings.as_deref().unwrap_or_default();
        nonempty("weightings", w)?;
        if w.contains(&Weighting::Custom) {
            return Err(Error::config(
                "weightings",
                "custom weights cannot be swept",
            ));
        }
        if c.scheme == Some(Scheme::Iid) {
            return Err(Error::config(
                "scheme",
                "sweeps sample with reset or trajectory",
            ));
        }
        Ok(())
    }
}

fn nonempty<T>(field: &str, v: &[T]) -> Result<()> {
    if v.is_empty() {
        return Err(Error::config(field, "grid must be nonempty"));
    }
    Ok(())
}

fn nonneg(field: &str, v: Option<f64>) -> Result<()> {
    match v {
        Some(x) if !(x >= 0.0) => Err(Error::config(field, format!("{x} must be nonnegative"))),
        _ => Ok(()),
    }
}

/// Best-effort name of the offending key from a TOML error.
fn config_field(e: &toml::de::Error) -> String {
    let msg = e.message();
    if let Some(rest) = msg.strip_prefix("unknown field `") {
        return rest.split('`').next().unwrap_or("").to_string();
    }
    if let Some(rest) = msg.strip_prefix("missing field `") {
        return rest.split('`').next().unwrap_or("").to_string();
    }
    "<config>".to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_key_names_the_field() {
        let err = ExperimentConfig::from_toml(
            "experiment = \"garnet_sweep\"\nname = \"x\"\nkapa = [1.0]\n",
        )
        .unwrap_err();
        match err {
            Error::Config { field, .. } => assert_eq!(field, "kapa"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn invalid_values_name_the_field() {
        for (line, field) in [
            ("seeds = 0", "seeds"),
            ("gamma = []", "gamma"),
            ("gamma = [1.0]", "gamma"),
            ("kappa = [0.0]", "kappa"),
            ("iterations = 0", "iterations"),
            ("lambda = -1.0", "lambda"),
            ("weightings = []", "weightings"),
        ] {
            let text = format!("experiment = \"baird_sweep\"\nname = \"x\"\n{line}\n");
            match ExperimentConfig::from_toml(&text) {
                Err(Error::Config { field: f, .. }) => assert_eq!(f, field, "{line}"),
                other => panic!("{line}: {other:?}"),
            }
        }
    }

    #[test]
    fn kind_defaults() {
        let b = ExperimentConfig::from_toml("experiment = \"baird_sweep\"\nname = \"b\"\n")
            .unwrap()
            .resolved();
        assert_eq!(b.seeds, Some(100));
        assert_eq!(b.kappa.as_deref(), Some(&BAIRD_KAPPAS[..]));
        assert_eq!(b.gamma, Some(vec![0.95]));
        assert_eq!(b.n, Some(5000));
        assert_eq!(b.scheme, Some(Scheme::Trajectory));
        let g = ExperimentConfig::from_toml("experiment = \"garnet_sweep\"\nname = \"g\"\n")
            .unwrap()
            .resolved();
        assert_eq!(g.seeds, Some(50));
        assert_eq!(g.gamma.as_deref(), Some(&GARNET_GAMMAS[..]));
        assert_eq!((g.n, g.iterations, g.d), (Some(10_000), Some(200), Some(5)));
        assert_eq!((g.lambda, g.epsilon), (Some(1e-6), Some(0.1)));
    }

    #[test]
    fn hash_ignores_spelled_out_defaults() {
        let a =
            ExperimentConfig::from_toml("experiment = \"garnet_sweep\"\nname = \"g\"\n").unwrap();
        let b = ExperimentConfig::from_toml(
            "experiment = \"garnet_sweep\"\nname = \"g\"\nseeds = 50\nlambda = 1e-6\n",
        )
        .unwrap();
        assert_eq!(a.hash(), b.hash());
        let c =
            ExperimentConfig::from_toml("experiment = \"garnet_sweep\"\nname = \"g\"\nseeds = 5\n")
                .unwrap();
        assert_ne!(a.hash(), c.hash());
    }
}
