use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::mdp::{FeatureMap, Policy, StateActionDist, StationaryOptions, TabularMdp};

pub const HUB: usize = 0;
pub const SOLID: usize = 0;
pub const DASHED: usize = 1;

const N_STATES: usize = 7;
const N_ACTIONS: usize = 2;
const STATE_DIM: usize = 7;

/// Hub-and-spokes counterexample: state 0 is the hub, 1..=6 are spokes.
#[derive(Debug, Clone)]
pub struct BairdInstance {
    pub mdp: TabularMdp,
    pub target: Policy,
    pub behavior: Policy,
    /// Action-lifted features `e_a (x) x(s)`, dimension 14.
    pub features: FeatureMap,
    pub kappa: f64,
}

/// State features: spoke `i` owns coordinate `i - 1`; the hub is the sum of
/// all spoke coordinates plus the bias coordinate 6.
pub fn baird_state_features() -> DMatrix<f64> {
    DMatrix::from_fn(N_STATES, STATE_DIM, |s, j| {
        if s == HUB || j + 1 == s {
            1.0
        } else {
            0.0
        }
    })
}

pub fn build_baird(kappa: f64) -> Result<BairdInstance> {
    if !(kappa > 0.0 && kappa <= 1.0) {
        return Err(Error::invalid("kappa", format!("{kappa} not in (0, 1]")));
    }
    let n_pairs = N_STATES * N_ACTIONS;
    let mut transition = vec![0.0; n_pairs * N_STATES];
    for s in 0..N_STATES {
        let solid = (s * N_ACTIONS + SOLID) * N_STATES;
        transition[solid + HUB] = 1.0;
        let dashed = (s * N_ACTIONS + DASHED) * N_STATES;
        for spoke in 1..N_STATES {
            transition[dashed + spoke] = 1.0 / 6.0;
        }
    }
    let mdp = TabularMdp::new(N_STATES, N_ACTIONS, transition, vec![0.0; n_pairs])?;

    let target = Policy::new(
        N_STATES,
        N_ACTIONS,
        (0..N_STATES).flat_map(|_| [1.0, 0.0]).collect(),
    )?;
    let behavior = Policy::new(
        N_STATES,
        N_ACTIONS,
        (0..N_STATES).flat_map(|_| [kappa, 1.0 - kappa]).collect(),
    )?;

    let x = baird_state_features();
    let phi = DMatrix::from_fn(n_pairs, N_ACTIONS * STATE_DIM, |row, col| {
        let (s, a) = (row / N_ACTIONS, row % N_ACTIONS);
        if col / STATE_DIM == a {
            x[(s, col % STATE_DIM)]
        } else {
            0.0
        }
    });

    Ok(BairdInstance {
        mdp,
        target,
        behavior,
        features: FeatureMap::new(phi)?,
        kappa,
    })
}

impl BairdInstance {
    /// Stationary distribution of the target chain: a point mass on (hub, solid).
    pub fn target_stationary(&self) -> Result<StateActionDist> {
        crate::mdp::stationary_distribution(&self.mdp, &self.target, StationaryOptions::default())
    }

    /// Long-run state-action distribution of trajectories under the behavior policy.
    pub fn behavior_stationary(&self) -> Result<StateActionDist> {
        crate::mdp::stationary_distribution(&self.mdp, &self.behavior, StationaryOptions::default())
    }
}
