//! Initial task assignment for mixed human-robot teams with
//! attention-enhanced hierarchical reinforcement learning.

pub mod context;
pub mod decision;
pub mod error;
pub mod rng;
pub mod sim;

pub use error::{Error, Result};
pub mod baselines;
pub mod harness;
pub mod init;
pub mod policy;
pub mod representation;
