//! Dyadic lattices, sparse operators, weight characteristics and constructive
//! sparse domination on finite spaces of homogeneous type.
//!
//! Every object lives on a [`space::DiscreteSpace`]: a finite point set with a
//! quasi-metric and positive point masses. Integrals become exact finite sums,
//! so inequalities with explicit constants are checked as inequalities and
//! inequalities with implicit constants are tracked as ratios.

pub mod domination;
pub mod dyadic;
pub mod operators;
pub mod space;
pub mod verify;
pub mod weights;

mod util;

pub use util::{conj, rng_for};

/// A real value per point.
pub type GridFunction = Vec<f64>;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum Error {
    #[error("point count {0} is not a power of two")]
    NotPowerOfTwo(usize),
    #[error("mass at point {index} is {value}, must be positive and finite")]
    BadMass { index: usize, value: f64 },
    #[error("invalid metric: {0}")]
    BadMetric(String),
    #[error("lattice construction: {0}")]
    Lattice(String),
    #[error("ball centered at {center} with radius {radius} has no admissible cover")]
    Uncovered { center: usize, radius: f64 },
    #[error("witness selection starved at cube {cube}: mass {have} < required {need}")]
    Starved { cube: usize, have: f64, need: f64 },
    #[error("invalid exponents: {0}")]
    Exponents(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("stopping threshold exceeded 2^20 at cube {cube}")]
    AlphaStuck { cube: usize },
    #[error("unknown check id `{0}`; valid ids: {1}")]
    UnknownCheck(String, String),
    #[error("internal: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, Error>;
