//! Numerical laboratory for quantitative stochastic homogenization.
//!
//! Samples random elliptic coefficients, computes correctors and effective
//! tensors on periodic cells, solves oscillating and homogenized Dirichlet
//! problems on polygonal domains, and measures minimal radii,
//! Calderón–Zygmund functionals, and homogenization error rates.

// Negated comparisons reject NaN on purpose, and index loops over parallel
// arrays read better than zipped iterators in the numerical kernels.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod correctors;
pub mod cz_norms;
pub mod error;
pub mod experiment;
pub mod fem;
pub mod fit;
pub mod fluctuation;
pub mod grid;
pub mod io;
pub mod minimal_radius;
pub mod random_field;
pub mod two_scale;

pub use error::{Error, Result};
pub use grid::{Grid, Shape, Topology};
