//! Stationary-weighted fitted Q-evaluation on tabular MDPs, with the exact
//! oracles (Bellman fixed points, stationary distributions, projections) used
//! to check it.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod mdp;

pub mod checks;
pub mod env;
pub mod estimators;
pub mod experiment;
pub mod fqe;
pub mod sampling;
pub mod seeding;

pub use error::{Error, Result};
