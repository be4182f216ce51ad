//! Admissibility, canonical forms, square roots and simulation for affine
//! diffusions on polyhedral, parabolic and conical state spaces.

#![allow(clippy::needless_range_loop)]

pub mod affine_core;
pub mod convex_oracle;
pub mod error;
pub mod linalg;
pub mod polyhedral;
pub mod quadratic;
pub mod sde_sim;

pub use affine_core::{
    AffineMatrixField, AffineScalar, AffineVectorField, ModelSpec, Polyhedron, QuadraticForm, QuadraticSpace,
    Side, StateSpace, Tolerances,
};
pub use error::{Error, Result};
pub use sde_sim::{DiffusionRoot, ExitStats, PathEnsemble, Scheme, SimConfig};
