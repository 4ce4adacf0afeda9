//! Fault-transient simulation of a multi-mass synchronous generator feeding
//! an inductive network.

pub mod equilibrium;
pub mod error;
pub mod integrators;
pub mod model;
pub mod reduction;
pub mod scenario;
pub mod state;

pub use error::{EquilibriumError, ModelError, ScenarioError, StepError};
