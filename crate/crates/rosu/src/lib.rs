//! Retain-orthogonal surrogate unlearning: inner perturbation geometry,
//! outer update rules, theory audits, and synthetic experiment harness.

pub mod audit;
pub mod cli;
pub mod error;
pub mod experiment;
pub mod inner;
pub mod linalg;
pub mod matrix;
pub mod objectives;
pub mod outer;

pub use error::{Error, Result};
