//! Highway lane-change decision making on the DeepCars gridworld: the
//! environment, its observation encoders, tabular Q-learning, a from-scratch
//! dense value network, DQN / Double-DQN training with real-time validation,
//! and run metrics.

pub mod cli;
pub mod config;
pub mod dqn;
pub mod encode;
pub mod env;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod policy;
pub mod tabular;

pub use env::{Action, DeepCars, EnvConfig, EnvState, OccupancyGrid, StepOutcome};
pub use error::{Error, Result};
