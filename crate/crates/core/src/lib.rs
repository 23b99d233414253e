pub mod data;
pub mod error;
pub mod explainers;
pub mod linalg;
pub mod models;
pub mod rng;

pub use error::{Error, Result};
pub mod metrics;
pub mod strategies;
pub mod context;
pub mod evaluator;
pub mod hpo;
pub mod orchestrator;
