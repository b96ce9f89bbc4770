//! Continual-learning benchmark toolkit.
//!
//! Builds incremental task, domain and class scenarios from image datasets,
//! trains identical networks under fine-tuning, quadratic-penalty,
//! distillation and rehearsal methods with matched memory budgets, and
//! records per-task accuracy matrices.

pub mod data;
pub mod error;
pub mod harness;
pub mod methods;
pub mod nn;
pub mod optim;
pub mod par;
pub mod rng;
pub mod scenario;

pub use error::{Error, Result};
