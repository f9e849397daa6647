//! Maximum-entropy deep inverse reinforcement learning for vehicle trajectory
//! forecasting on 2-d grid worlds.
//!
//! A two-stage convolutional network maps terrain statistics plus positional
//! and kinematic context to a per-cell reward; value iteration with an
//! annealed softmax turns the reward into a policy, and the gap between
//! demonstrated and expected state visitation drives training.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod error;
pub mod kinematics;
pub mod mdp;
pub mod metrics;
pub mod model;
pub mod network;
pub mod par;
pub mod seed;
pub mod synth;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
