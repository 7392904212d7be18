//! Restricted fractional Laplacian on bounded lattice domains, symmetrization
//! tools, and numerical checks of concentration comparison and Faber–Krahn
//! type inequalities.

pub mod domain;
pub mod elliptic;
pub mod error;
pub mod experiments;
pub mod extension;
pub mod fraclap;
pub mod io;
pub mod kernel;
pub mod linalg;
pub mod parabolic;
pub mod quadrature;
pub mod random;
pub mod rearrange;
pub mod spectral;

pub use domain::{Domain, Rect, ScalarField, Shape};
pub use error::{FracError, Result};
pub use fraclap::{OperatorKind, OperatorMatrix};
