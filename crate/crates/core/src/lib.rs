//! Finite-difference laboratory for Dirichlet problems `𝒜u = f`,
//! `u ∈ H^m_0(Ω)`, with constant-coefficient elliptic operators of order
//! `2m` on rough planar and spatial domains.
//!
//! The crate is organized bottom-up:
//!
//! * [`multiindex`]: multi-index enumeration and the Leibniz/multinomial algebra.
//! * [`operator`]: symmetric elliptic coefficient sets, ellipticity constants,
//!   the vertical decomposition and Fourier symbols.
//! * [`geometry`]: lattice domains (half-balls, cones, Koch-type curves) and a
//!   numerical Reifenberg-flatness scan.
//! * [`discretize`]: grid functions with zero extension, forward difference
//!   calculus, assembly of the discrete bilinear form, local energies.
//! * [`solve`]: Jacobi-preconditioned conjugate gradients and local
//!   polyharmonic replacement.
//! * [`analyze`]: energy decay fits, Campanato seminorms, Hölder exponents and
//!   the auxiliary inequality checks.
//! * [`runner`]: JSON-configured experiments behind the `polylab` binary.

// `!(x > 0.0)` rejects NaN along with non-positive values
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod analytic;
pub mod analyze;
pub mod discretize;
pub mod error;
pub mod expr;
pub mod geometry;
pub mod lattice;
pub mod multiindex;
pub mod operator;
pub mod runner;
pub mod solve;
pub mod sparse;

pub use error::{Error, Result};
pub use multiindex::MultiIndex;
pub use operator::EllipticOperator;
pub use geometry::GridDomain;
pub use discretize::{Field, GridFunction};
