//! Solver and verification toolkit for the relativistic kinetic Fokker-Planck
//! equation with a confining potential.
//!
//! The crate is organised bottom-up: [`grid`] and [`potentials`] feed
//! [`equilibrium`], which every operator and functional is built on.

// `!(x > 0.0)` is used on purpose so that NaN inputs are rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod config;
pub mod constants;
pub mod elliptic;
pub mod equilibrium;
pub mod error;
pub mod experiments;
pub mod functionals;
pub mod grid;
pub mod linalg;
pub mod matrix_checks;
pub mod operators;
pub mod pmatrix;
pub mod potentials;
pub mod report;
pub mod solver;

pub use equilibrium::EquilibriumState;
pub use error::{Error, Result};
pub use grid::{AxisGrid, BoundaryKind, FieldKind, PhaseField, PhaseGrid};
pub use potentials::{Potential1d, PotentialSpec};
