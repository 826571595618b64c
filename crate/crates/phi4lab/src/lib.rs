//! Numerical laboratory for the complex φ⁴ field on the unit 2-torus, its
//! renormalized interactions, and a truncated Bose gas built on the same modes.
//!
//! The geometric core (`torus`) and the Wick oracle are generic over the scalar
//! type; everything that touches FFTs, sampling or dense eigensolvers is `f64`.

pub mod bosegas;
pub mod bridges;
mod fft2;
pub mod gff;
pub mod interactions;
pub mod malliavin;
pub mod mc;
pub mod quadrature;
pub mod runner;
pub mod scalar;
pub mod torus;
pub mod wick;

pub use scalar::{CompensatedSum, Real, WickScalar};

/// Green-function evaluator in double precision.
pub type Green = torus::GreenEvaluator<f64>;
/// Torus point in double precision.
pub type Point = torus::TorusPoint<f64>;
/// Complex double.
pub type C64 = num_complex::Complex<f64>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("not converged: {0}")]
    NotConverged(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("config: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
