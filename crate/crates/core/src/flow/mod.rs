//! Affine coupling flows, Gaussianization and the rotated-Gaussian
//! measure-preserving automorphism.

mod coupling;
mod gaussianizer;
mod mpa;
mod tape;

pub use coupling::{CouplingFlow, CouplingLayer, FlowInverse, FlowMode, Mlp, FLOW_FORMAT, FLOW_FORMAT_VERSION};
pub use gaussianizer::{Gaussianizer, GaussianizerKind, Marginal};
pub use mpa::{rotated_gaussian_mpa, RotatedGaussianMpa, ROTATION_TOL};
pub use tape::{FlowVars, InversePass};
