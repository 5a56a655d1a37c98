//! Numerical laboratory for non-Hermitian random tridiagonal matrices with
//! corners and their Hatano-Nelson deformation.
//!
//! The crate is organised bottom-up:
//!
//! - [`ensemble`]: seeded sampling of the matrix entries.
//! - [`operators`]: dense assembly of the undeformed, corner-deformed and
//!   balanced matrices, plus the diagonal gauge map between them.
//! - [`eigensolver`]: dense eigendecomposition with residual checks and a
//!   log-polar determinant.
//! - [`transfer`]: rescaled transfer-matrix products, Lyapunov exponents, the
//!   spectral duality determinant and argument-principle zero counting.
//! - [`spectra`]: radial density, moments, the radial Thouless formula and the
//!   hole-radius predictor.
//! - [`localization`]: eigenvector position variance, rate extraction, halo
//!   matching and circle/halo classification.
//! - [`experiments`]: batch drivers behind the `speclab` command line tool.

pub mod eigensolver;
pub mod ensemble;
mod error;
pub mod experiments;
pub mod localization;
pub mod operators;
pub mod spectra;
pub mod transfer;

pub use num_complex::Complex64;

pub use eigensolver::{determinant, eigenpairs, eigenvalues, LogPolar, Spectrum};
pub use ensemble::{EnsembleKind, EnsembleSpec, MatrixSample};
pub use error::{Error, Result};
pub use operators::{
    build_balanced, build_corner_deformed, build_undeformed, gauge_transform, Deformation,
    DenseMatrix,
};
pub use localization::{HaloMatchReport, LocalizationRecord};
pub use spectra::{DensityProfile, HolePrediction, LyapunovCurve, Moment};
pub use transfer::{DualityDet, TransferResult, WindingReport};
