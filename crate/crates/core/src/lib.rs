//! Structural-sparsity identifiability toolkit for ICA.
//!
//! Support-pattern algebra and condition checkers, a sparsest-rotation solver
//! for Gaussian linear ICA, coupling flows with Jacobian-regularized maximum
//! likelihood, synthetic generators and MCC evaluation.

pub mod autodiff;
pub mod conditions;
pub mod data;
pub mod error;
pub mod estimation;
pub mod evaluation;
pub mod experiment;
pub mod flow;
pub mod linalg;
pub mod linear;
pub mod mixing;
pub mod optim;
pub mod prior;
pub mod registry;
pub mod stats;
pub mod support;

pub use error::{Error, Result};
