//! Construction, flexing, and verification of flexible cross-polytopes in
//! euclidean, spherical, and hyperbolic n-space.
//!
//! The crate is organised bottom-up:
//! * [`geometry`]: ambient bilinear forms, model distances, Gram factorization;
//! * [`elliptic`]: real Jacobi elliptic functions and quarter periods;
//! * [`epbq`]: the parameter curves (rational, elliptic, exotic) behind every
//!   flex, their pairwise biquadratic coefficient matrices, and parameter
//!   fitting;
//! * [`butterfly`]: the hinged vertex configuration determined by a shape
//!   pair (G, H), its classification into the three geometries, vertex
//!   recovery, and the two reversion operations;
//! * [`flexbuild`]: the end-to-end pipeline from curve data to an animated,
//!   verifiable flexible cross-polytope, plus witness constructions.

pub mod butterfly;
pub mod elliptic;
pub mod epbq;
pub mod error;
pub mod flexbuild;
pub mod geometry;

pub use error::{Error, Result};
