//! Maxwell cavity eigenvalues with tensor neural networks.
//!
//! Each vector field is a sum of rank-one products of one-dimensional
//! subnetwork outputs, so every Galerkin integral factors into products of
//! 1D quadratures. Training minimizes the smallest Ritz values of the
//! curl-curl pencil plus a divergence penalty, and the same generalized
//! eigenproblem yields the final eigenpairs.
//!
//! The numerical core is generic over [`scalar::Real`] (`f32` or `f64`);
//! the aliases below fix `f64`.

pub mod assembly;
pub mod bench;
pub mod dense;
pub mod domains;
pub mod error;
pub mod fieldtnn;
pub mod geig;
pub mod quadrature;
pub mod scalar;
pub mod subnet;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Matrix64 = dense::Matrix<f64>;
pub type CompositeRule64 = quadrature::CompositeRule<f64>;
pub type QuadratureGrid64 = quadrature::QuadratureGrid<f64>;
pub type Subnetwork64 = subnet::Subnetwork<f64>;
pub type FieldTNN64 = fieldtnn::FieldTNN<f64>;
pub type Layout64 = assembly::Layout<f64>;
pub type SpectralSystem64 = assembly::SpectralSystem<f64>;
pub type EigenResult64 = geig::EigenResult<f64>;
pub type Model64 = training::Model<f64>;
pub type Checkpoint64 = training::Checkpoint<f64>;
pub type TrainOutcome64 = training::TrainOutcome<f64>;
