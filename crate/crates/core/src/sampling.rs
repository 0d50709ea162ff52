//! Offline transition datasets under a behavior policy.

use std::io::{Read, Write};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::mdp::{Policy, StateActionDist, TabularMdp};
use crate::seeding::rng_from;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub s: usize,
    pub a: usize,
    pub r: f64,
    pub s_next: usize,
    /// Drawn from the target policy at `s_next`.
    pub a_next: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Every record starts from an independent uniform state.
    Reset,
    /// One behavior-policy chain from a uniform initial state.
    Trajectory,
    /// Independent `(s, a)` draws from a given distribution.
    Iid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionDataset {
    pub transitions: Vec<Transition>,
    pub weights: Option<Vec<f64>>,
    pub seed: u64,
    pub scheme: Scheme,
}

fn categorical(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, p) in probs.iter().enumerate() {
        if *p <= 0.0 {
            continue;
        }
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

struct Simulator<'a> {
    mdp: &'a TabularMdp,
    target: &'a Policy,
    reward: &'a [f64],
    noise_sd: f64,
    rng: ChaCha8Rng,
}

impl Simulator<'_> {
    fn step(&mut self, s: usize, a: usize) -> Transition {
        let mut r = self.reward[self.mdp.index(s, a)];
        if self.noise_sd > 0.0 {
            let z: f64 = self.rng.sample(StandardNormal);
            r += self.noise_sd * z;
        }
        let s_next = categorical(&mut self.rng, self.mdp.next_states(s, a));
        let a_next = categorical(&mut self.rng, self.target.row(s_next));
        Transition {
            s,
            a,
            r,
            s_next,
            a_next,
        }
    }
}

pub fn sample_dataset(
    mdp: &TabularMdp,
    behavior: &Policy,
    target: &Policy,
    n: usize,
    scheme: Scheme,
    seed: u64,
    reward_noise_sd: f64,
) -> Result<TransitionDataset> {
    behavior.check_against(mdp)?;
    target.check_against(mdp)?;
    if n == 0 {
        return Err(Error::invalid("n", "dataset size must be at least 1"));
    }
    if !(reward_noise_sd >= 0.0) {
        return Err(Error::invalid("reward_noise_sd", "must be nonnegative"));
    }
    let mut sim = Simulator {
        mdp,
        target,
        reward: mdp.reward(),
        noise_sd: reward_noise_sd,
        rng: rng_from(seed),
    };
    let n_states = mdp.n_states();
    let mut transitions = Vec::with_capacity(n);
    match scheme {
        Scheme::Reset => {
            for _ in 0..n {
                let s = sim.rng.random_range(0..n_states);
                let a = categorical(&mut sim.rng, behavior.row(s));
                transitions.push(sim.step(s, a));
            }
        }
        Scheme::Trajectory => {
            let mut s = sim.rng.random_range(0..n_states);
            for _ in 0..n {
                let a = categorical(&mut sim.rng, behavior.row(s));
                let t = sim.step(s, a);
                s = t.s_next;
                transitions.push(t);
            }
        }
        Scheme::Iid => {
            return Err(Error::invalid(
                "scheme",
                "iid sampling needs a pair distribution; use sample_from_distribution",
            ))
        }
    }
    Ok(TransitionDataset {
        transitions,
        weights: None,
        seed,
        scheme,
    })
}

/// Draws `(s, a) ~ dist`, `s' ~ P(.|s,a)`, with rewards read from `reward`.
pub fn sample_from_distribution(
    mdp: &TabularMdp,
    dist: &StateActionDist,
    target: &Policy,
    reward: &[f64],
    n: usize,
    seed: u64,
) -> Result<TransitionDataset> {
    target.check_against(mdp)?;
    dist.check_pairs(mdp.n_pairs())?;
    check_len("reward table", mdp.n_pairs(), reward.len())?;
    if n == 0 {
        return Err(Error::invalid("n", "dataset size must be at least 1"));
    }
    let mut sim = Simulator {
        mdp,
        target,
        reward,
        noise_sd: 0.0,
        rng: rng_from(seed),
    };
    let transitions = (0..n)
        .map(|_| {
            let pair = categorical(&mut sim.rng, dist.mass());
            sim.step(pair / mdp.n_actions(), pair % mdp.n_actions())
        })
        .collect();
    Ok(TransitionDataset {
        transitions,
        weights: None,
        seed,
        scheme: Scheme::Iid,
    })
}

/// Every `(s, a, s')` with `dist(s,a) P(s'|s,a) > 0` exactly once, weighted by
/// that probability. Regressions on it are population regressions.
pub fn exhaustive_dataset(
    mdp: &TabularMdp,
    dist: &StateActionDist,
    reward: &[f64],
) -> Result<TransitionDataset> {
    dist.check_pairs(mdp.n_pairs())?;
    check_len("reward table", mdp.n_pairs(), reward.len())?;
    let mut transitions = Vec::new();
    let mut weights = Vec::new();
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            let m = dist.at(s, a);
            if m == 0.0 {
                continue;
            }
            for (s_next, p) in mdp.next_states(s, a).iter().enumerate() {
                if *p > 0.0 {
                    transitions.push(Transition {
                        s,
                        a,
                        r: reward[mdp.index(s, a)],
                        s_next,
                        a_next: 0,
                    });
                    weights.push(m * p);
                }
            }
        }
    }
    TransitionDataset {
        transitions,
        weights: None,
        seed: 0,
        scheme: Scheme::Iid,
    }
    .with_weights(weights)
}

impl TransitionDataset {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        check_len("sample weights", self.transitions.len(), weights.len())?;
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::invalid("weights", "must be finite and nonnegative"));
        }
        self.weights = Some(weights);
        Ok(self)
    }

    /// Empirical state marginal of the `s` column.
    pub fn state_marginal(&self, n_states: usize) -> Result<Vec<f64>> {
        if self.is_empty() {
            return Err(Error::Empty("dataset"));
        }
        let mut counts = vec![0usize; n_states];
        for t in &self.transitions {
            if t.s >= n_states {
                return Err(Error::DataInconsistency(format!(
                    "state {} out of range",
                    t.s
                )));
            }
            counts[t.s] += 1;
        }
        let n = self.len() as f64;
        Ok(counts.into_iter().map(|c| c as f64 / n).collect())
    }

    /// Writes `s,a,r,s_next,a_next[,weight]` with 17 significant digits.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["s", "a", "r", "s_next", "a_next"];
        if self.weights.is_some() {
            header.push("weight");
        }
        w.write_record(&header)?;
        for (i, t) in self.transitions.iter().enumerate() {
            let mut rec = vec![
                t.s.to_string(),
                t.a.to_string(),
                fmt_f64(t.r),
                t.s_next.to_string(),
                t.a_next.to_string(),
            ];
            if let Some(ws) = &self.weights {
                rec.push(fmt_f64(ws[i]));
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R, seed: u64, scheme: Scheme) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let header = rdr.headers()?.clone();
        let expected = ["s", "a", "r", "s_next", "a_next"];
        let has_weight = match header.len() {
            5 => false,
            6 if &header[5] == "weight" => true,
            _ => {
                return Err(Error::DataInconsistency(format!(
                    "unexpected dataset header {header:?}"
                )))
            }
        };
        if header.iter().take(5).ne(expected.iter().copied()) {
            return Err(Error::DataInconsistency(format!(
                "unexpected dataset header {header:?}"
            )));
        }
        let mut transitions = Vec::new();
        let mut weights = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let bad = |field: &str| {
                Error::DataInconsistency(format!("row {}: cannot parse `{field}`", line + 1))
            };
            let int = |i: usize| rec[i].trim().parse::<usize>().map_err(|_| bad(&rec[i]));
            let real = |i: usize| rec[i].trim().parse::<f64>().map_err(|_| bad(&rec[i]));
            transitions.push(Transition {
                s: int(0)?,
                a: int(1)?,
                r: real(2)?,
                s_next: int(3)?,
                a_next: int(4)?,
            });
            if has_weight {
                weights.push(real(5)?);
            }
        }
        let data = TransitionDataset {
            transitions,
            weights: None,
            seed,
            scheme,
        };
        if has_weight {
            data.with_weights(weights)
        } else {
            Ok(data)
        }
    }
}

/// Scientific notation with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Frequency histogram of the observed `(s, a)` pairs.
pub fn empirical_distribution(
    data: &TransitionDataset,
    n_states: usize,
    n_actions: usize,
) -> Result<StateActionDist> {
    if data.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let mut counts = vec![0usize; n_states * n_actions];
    for t in &data.transitions {
        if t.s >= n_states || t.a >= n_actions {
            return Err(Error::DataInconsistency(format!(
                "pair ({}, {}) out of range",
                t.s, t.a
            )));
        }
        counts[t.s * n_actions + t.a] += 1;
    }
    let n = data.len() as f64;
    StateActionDist::new(
        n_states,
        n_actions,
        counts.into_iter().map(|c| c as f64 / n).collect(),
    )
}

/// Per-sample weights `d_pi(s) pi(a|s) / (rho_S(s) mu(a|s))`, where `rho_S` is
/// the empirical state marginal of the dataset and `d_pi` is the state
/// marginal of `target_dist`.
pub fn empirical_weights(
    data: &TransitionDataset,
    target_dist: &StateActionDist,
    target: &Policy,
    behavior: &Policy,
    self_normalize: bool,
) -> Result<Vec<f64>> {
    let n_states = target.n_states();
    check_len("behavior states", n_states, behavior.n_states())?;
    check_len("target distribution", n_states, target_dist.n_states())?;
    let d_pi = target_dist.state_marginal();
    let rho = data.state_marginal(n_states)?;
    let mut weights = Vec::with_capacity(data.len());
    for t in &data.transitions {
        let mu_b = behavior.prob(t.s, t.a);
        if mu_b <= 0.0 {
            return Err(Error::DataInconsistency(format!(
                "behavior probability is zero at observed pair ({}, {})",
                t.s, t.a
            )));
        }
        weights.push(d_pi[t.s] * target.prob(t.s, t.a) / (rho[t.s] * mu_b));
    }
    if self_normalize {
        let mean = weights.iter().sum::<f64>() / weights.len() as f64;
        if mean > 0.0 {
            weights.iter_mut().for_each(|w| *w /= mean);
        }
    }
    Ok(weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::build_baird;

    #[test]
    fn deterministic_single_state() {
        let mdp = TabularMdp::new(1, 1, vec![1.0], vec![2.5]).unwrap();
        let pi = Policy::uniform(1, 1);
        let data = sample_dataset(&mdp, &pi, &pi, 20, Scheme::Reset, 3, 0.0).unwrap();
        assert!(data.transitions.iter().all(|t| *t
            == Transition {
                s: 0,
                a: 0,
                r: 2.5,
                s_next: 0,
                a_next: 0
            }));
    }

    #[test]
    fn zero_size_rejected() {
        let mdp = TabularMdp::new(1, 1, vec![1.0], vec![0.0]).unwrap();
        let pi = Policy::uniform(1, 1);
        assert!(sample_dataset(&mdp, &pi, &pi, 0, Scheme::Reset, 0, 0.0).is_err());
    }

    #[test]
    fn trajectory_is_a_chain() {
        let b = build_baird(0.7).unwrap();
        let data = sample_dataset(
            &b.mdp,
            &b.behavior,
            &b.target,
            500,
            Scheme::Trajectory,
            11,
            0.0,
        )
        .unwrap();
        for pair in data.transitions.windows(2) {
            assert_eq!(pair[0].s_next, pair[1].s);
        }
        // target always picks solid
        assert!(data.transitions.iter().all(|t| t.a_next == 0));
    }

    #[test]
    fn point_mass_distribution() {
        let data = TransitionDataset {
            transitions: vec![Transition {
                s: 3,
                a: 1,
                r: 0.0,
                s_next: 0,
                a_next: 0,
            }],
            weights: None,
            seed: 0,
            scheme: Scheme::Reset,
        };
        let d = empirical_distribution(&data, 4, 2).unwrap();
        assert_eq!(d.at(3, 1), 1.0);
        assert_eq!(d.mass().iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn every_pair_once_is_uniform() {
        let transitions = (0..6)
            .map(|i| Transition {
                s: i / 2,
                a: i % 2,
                r: 0.0,
                s_next: 0,
                a_next: 0,
            })
            .collect();
        let data = TransitionDataset {
            transitions,
            weights: None,
            seed: 0,
            scheme: Scheme::Reset,
        };
        let d = empirical_distribution(&data, 3, 2).unwrap();
        assert!(d.mass().iter().all(|m| (m - 1.0 / 6.0).abs() < 1e-15));
    }

    #[test]
    fn empty_dataset_errors() {
        let data = TransitionDataset {
            transitions: vec![],
            weights: None,
            seed: 0,
            scheme: Scheme::Reset,
        };
        assert!(matches!(
            empirical_distribution(&data, 2, 2),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn on_policy_weights_are_one() {
        let b = build_baird(1.0).unwrap();
        let data =
            sample_dataset(&b.mdp, &b.behavior, &b.target, 300, Scheme::Reset, 5, 0.0).unwrap();
        let rho = data.state_marginal(7).unwrap();
        let d = StateActionDist::from_state_marginal(&rho, &b.target).unwrap();
        let w = empirical_weights(&data, &d, &b.target, &b.behavior, false).unwrap();
        assert!(w.iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn baird_weights_live_on_hub_solid() {
        let b = build_baird(0.7).unwrap();
        let data = sample_dataset(
            &b.mdp,
            &b.behavior,
            &b.target,
            2000,
            Scheme::Trajectory,
            8,
            0.0,
        )
        .unwrap();
        let mu = b.target_stationary().unwrap();
        let rho_hub = data.state_marginal(7).unwrap()[0];
        let w = empirical_weights(&data, &mu, &b.target, &b.behavior, false).unwrap();
        for (t, wi) in data.transitions.iter().zip(&w) {
            if t.s == 0 && t.a == 0 {
                assert!((wi - 1.0 / (rho_hub * 0.7)).abs() < 1e-12);
            } else {
                assert_eq!(*wi, 0.0);
            }
        }
    }

    #[test]
    fn zero_behavior_probability_is_inconsistent() {
        let b = build_baird(1.0).unwrap();
        let data = TransitionDataset {
            transitions: vec![Transition {
                s: 2,
                a: 1,
                r: 0.0,
                s_next: 3,
                a_next: 0,
            }],
            weights: None,
            seed: 0,
            scheme: Scheme::Reset,
        };
        let mu = b.target_stationary().unwrap();
        assert!(matches!(
            empirical_weights(&data, &mu, &b.target, &b.behavior, false),
            Err(Error::DataInconsistency(_))
        ));
    }

    #[test]
    fn self_normalized_mean_is_one() {
        let b = build_baird(0.6).unwrap();
        let data =
            sample_dataset(&b.mdp, &b.behavior, &b.target, 999, Scheme::Reset, 2, 0.0).unwrap();
        let mu = b.target_stationary().unwrap();
        let w = empirical_weights(&data, &mu, &b.target, &b.behavior, true).unwrap();
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        assert!((mean - 1.0).abs() < 1e-12);
    }

    #[test]
    fn csv_header_and_precision() {
        let data = TransitionDataset {
            transitions: vec![Transition {
                s: 1,
                a: 0,
                r: 0.1,
                s_next: 2,
                a_next: 1,
            }],
            weights: Some(vec![1.0 / 3.0]),
            seed: 0,
            scheme: Scheme::Reset,
        };
        let mut buf = Vec::new();
        data.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(
            text,
            "s,a,r,s_next,a_next,weight\n1,0,1.0000000000000001e-1,2,1,3.3333333333333331e-1\n"
        );
        let back = TransitionDataset::read_csv(&buf[..], 0, Scheme::Reset).unwrap();
        assert_eq!(back, data);
    }

    #[test]
    fn csv_rejects_unknown_columns() {
        let text = "s,a,r,next,a_next\n0,0,0,0,0\n";
        assert!(TransitionDataset::read_csv(text.as_bytes(), 0, Scheme::Reset).is_err());
    }
}
