//! Cooperative multi-agent Q-learning for UAV field coverage.
//!
//! A team of agents on a discrete 3-D grid learns to fully cover a target
//! field with their altitude-dependent camera footprints while driving
//! mutual footprint overlap to zero. Joint actions are selected through a
//! correlated-equilibrium linear program solved by an in-crate simplex
//! solver; value functions use linear approximation (FSR, RBF, or exact
//! tabular).

pub mod approx;
pub mod ce;
pub mod env;
pub mod error;
pub mod learner;
pub mod lp;
pub mod scenario;

pub use error::CoverageError;
