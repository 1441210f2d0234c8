//! Continual learning with ensembles, neural-network subspaces and
//! connectivity regularization, plus the metrics and weight-space diagnostics
//! used to compare them.

mod error;

pub mod analysis;
pub mod experiment;
pub mod metrics;
pub mod numkit;
pub mod tasks;
pub mod trainers;
pub mod weightspace;

pub use error::{Error, Result};
