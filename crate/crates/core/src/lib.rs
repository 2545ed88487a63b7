//! Numerical laboratory for planar waveguides whose bottom boundary alternates
//! rapidly between Dirichlet and Robin conditions.
//!
//! The crate is layered bottom-up:
//!
//! * [`specfun`]: the harmonic boundary-layer and inner functions, the
//!   Helmholtz-type layer series and the coefficient series `θ`.
//! * [`model1d`]: the one-dimensional homogenized model on `(0, π)`, its
//!   spectrum, resolvent and the corrected bottom-of-spectrum equation.
//! * [`geometry`]: alternation geometries and the boundary corrector.
//! * [`discretize`]: graded tensor meshes, form-based Hermitian assembly,
//!   shift-invert Lanczos and sparse resolvent solves.
//! * [`experiments`]: ε-sweeps producing convergence records and rate fits.
//! * [`config`]: the JSON run configuration consumed by the CLI.

pub mod config;
pub mod cutoff;
pub mod discretize;
pub mod error;
pub mod experiments;
pub mod geometry;
pub mod model1d;
pub mod specfun;

pub use error::{Error, Result};
