//! Numerical laboratory for dyadic harmonic analysis with matrix weights.
//!
//! The crate builds finite dyadic models (lattices, Haar systems,
//! piecewise-constant matrix weights) and measures the quantities that
//! drive matrix-weighted norm inequalities: A_p characteristics through
//! averaging and through reducing operators, BMO-type oscillation
//! functionals in their primal/dual/reducing forms, Carleson embeddings,
//! stopping-time packing, and Haar coefficient decay for singular
//! integral operators with matrix kernels.

pub mod analysis;
pub mod cli;
pub mod dyadic;
pub mod error;
pub mod linalg;
pub mod operators;
pub mod weights;

pub use error::{Error, Result};
