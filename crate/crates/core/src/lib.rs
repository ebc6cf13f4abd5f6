//! Non-adversarial imitation learning on exactly solvable tabular MDPs.
//!
//! Every quantity used by the learning algorithms (occupancies, soft values,
//! density ratios) can be computed exactly here, which lets the iterative
//! methods be checked against dynamic-programming oracles.

// `!(x >= 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod airl;
pub mod baselines;
pub mod cli;
pub mod config;
pub mod demos;
pub mod envs;
pub mod error;
pub mod experiment;
pub mod mdp;
pub mod metrics;
pub mod nail;
pub mod numeric;
pub mod observation;
pub mod onail;
pub mod optim;
pub mod ratio;
pub mod verify;

pub use error::{Error, Result};
