//! Multi-tenant split federated learning with price-incentive participation.

pub mod baselines;
pub mod convergence_bound;
pub mod error;
pub mod game_engine;
pub mod harness;
pub mod rng;
pub mod sfl_engine;
pub mod system_model;

pub use error::{Error, Result};
