//! Guaranteed error bounds for P1 finite element approximations of Laplace
//! eigenfunctions on polygonal domains.
//!
//! The pipeline: build a [`mesh::Mesh`], [`fem::assemble`] the stiffness and
//! mass matrices, solve the pencil with [`eigensolve`], bound the exact
//! eigenvalues with [`enclosures`], and certify per-cluster directed
//! distances with [`cluster`]. [`validation`] measures the true distances
//! where they are computable and [`experiment`] runs whole mesh sweeps.

pub mod cluster;
pub mod enclosures;
pub mod error;
pub mod experiment;
pub mod fem;
pub mod linalg;
pub mod eigensolve;
pub mod mesh;
pub mod quadrature;
pub mod validation;

pub use error::{Error, Result};
