//! PCA under non-isotropic and data-dependent noise.
//!
//! [`subspace`] holds the linear-algebra primitives, [`model`] the generative
//! model, [`estimator`] PCA and rank estimation, [`bounds`] the closed-form
//! error bounds, and [`experiments`] the seeded Monte Carlo engine that
//! compares them.

pub mod bounds;
pub mod config;
pub mod error;
pub mod estimator;
pub mod experiments;
pub mod model;
pub mod output;
pub mod rng;
pub mod subspace;

pub use error::{Error, Result};
pub use subspace::BasisMatrix;
