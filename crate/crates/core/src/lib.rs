//! Approximate control variate estimation with budget-constrained sample
//! allocation and hyperparameter tuning of low-fidelity models.

pub mod acv;
pub mod allocation;
pub mod bench;
pub mod error;
pub mod gp;
pub mod linalg;
pub mod models;
pub mod optim;
pub mod pilot;
pub mod sampleset;
pub mod seed;
pub mod stats;
pub mod tuning;

pub use error::{Error, Result};
