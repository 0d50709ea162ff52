/// Paper-default configurations, by name.
pub const PRESET_NAMES: [&str; 6] = [
    "baird_095",
    "baird_099",
    "baird_0999",
    "garnet_main",
    "garnet_estimated",
    "reward_misspec",
];

pub fn preset(name: &str) -> Option<&'static str> {
    Some(match name {
        "baird_095" => BAIRD_095,
        "baird_099" => BAIRD_099,
        "baird_0999" => BAIRD_0999,
        "garnet_main" => GARNET_MAIN,
        "garnet_estimated" => GARNET_ESTIMATED,
        "reward_misspec" => REWARD_MISSPEC,
        _ => return None,
    })
}

const BAIRD_095: &str = r#"experiment = "baird_sweep"
name = "baird_095"
seeds = 100
base_seed = 0
kappa = [1.0, 0.9, 0.8, 0.7]
gamma = [0.95]
n = 5000
iterations = 100
lambda = 1e-6
scheme = "trajectory"
theta0 = "ones"
oracle_ridge = 1e-6
weightings = ["unweighted", "exact_ratio"]
"#;

const BAIRD_099: &str = r#"experiment = "baird_sweep"
name = "baird_099"
seeds = 100
base_seed = 0
kappa = [1.0, 0.9, 0.8, 0.7, 0.05]
gamma = [0.99]
n = 5000
iterations = 100
lambda = 1e-6
scheme = "trajectory"
theta0 = "ones"
oracle_ridge = 1e-6
weightings = ["unweighted", "exact_ratio"]
"#;

const BAIRD_0999: &str = r#"experiment = "baird_sweep"
name = "baird_0999"
seeds = 100
base_seed = 0
kappa = [1.0, 0.9, 0.8, 0.7, 0.05]
gamma = [0.999]
n = 5000
iterations = 100
lambda = 1e-6
scheme = "trajectory"
theta0 = "ones"
oracle_ridge = 1e-6
weightings = ["unweighted", "exact_ratio"]
"#;

const GARNET_MAIN: &str = r#"experiment = "garnet_sweep"
name = "garnet_main"
seeds = 50
base_seed = 0
gamma = [0.90, 0.925, 0.95, 0.96, 0.97, 0.98, 0.99]
n = 10000
iterations = 200
lambda = 1e-6
n_states = 100
n_actions = 4
branching = 5
d = 5
epsilon = 0.1
scheme = "reset"
theta0 = "zeros"
weightings = ["unweighted", "exact_ratio"]
"#;

const GARNET_ESTIMATED: &str = r#"experiment = "garnet_sweep"
name = "garnet_estimated"
seeds = 50
base_seed = 0
gamma = [0.90, 0.925, 0.95, 0.96, 0.97, 0.98, 0.99]
n = 10000
iterations = 200
lambda = 1e-6
n_states = 100
n_actions = 4
branching = 5
d = 5
epsilon = 0.1
scheme = "reset"
theta0 = "zeros"
weightings = ["unweighted", "exact_ratio", "estimated_ratio"]
ratio_method = "dice"
dice_reg = 1e-8
dice_outer_ridge = 1e-6
"#;

const REWARD_MISSPEC: &str = r#"experiment = "reward_misspec"
name = "reward_misspec"
seeds = 50
base_seed = 0
gamma = [0.9]
n = 10000
iterations = 200
lambda = 1e-6
n_states = 100
n_actions = 4
branching = 5
d = 5
epsilon = 0.1
reward_noise_sd = 0.5
perturbation_scale = 0.5
"#;
