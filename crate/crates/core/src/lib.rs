//! Stochastic reachability of black-box dynamical systems from sampled transitions,
//! using conditional distribution embeddings in a Gaussian RKHS.

pub mod algorithms;
pub mod error;
pub mod kernel;
mod linalg;
pub mod oracle;
pub mod rff;
pub mod samples;
pub mod systems;
pub mod tubes;

pub use error::{Error, Result};
