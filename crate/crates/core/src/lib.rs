//! Numerical verification engine for the conformal deformation detour complex
//!
//! ```text
//! T --K0--> S²₀T* --B--> S²₀T* --K0*--> T
//! ```
//!
//! in dimension four: the conformal Killing operator, the linearised Bach
//! tensor and the formal adjoint of the former. All operators are computed
//! on periodic coordinate charts with high-order central differences; the
//! identities relating them are certified by residual-convergence studies
//! and by pointwise principal-symbol linear algebra.
//!
//! Module map:
//!
//! - [`exprlang`]: expressions for metric coefficients and test functions
//! - [`grid`]: periodic lattices, stencils, quadrature, convergence fits
//! - [`tensor`]: tensor fields, metrics, traces and pairings
//! - [`geometry`]: Christoffel symbols through the Bach tensor
//! - [`conformal`]: conformal rescaling, weight checks, metric presets
//! - [`operators`]: K, K₀, K₀*, Lie derivatives and the linearised Bach operator
//! - [`symbol`]: principal symbols and the exactness (ellipticity) check
//! - [`harness`]: configuration, suites, reports

// Index loops mirror the tensor formulas; negated comparisons reject NaN.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod conformal;
pub mod error;
pub mod exprlang;
pub mod geometry;
pub mod grid;
pub mod harness;
pub mod operators;
pub mod symbol;
pub mod tensor;

pub use error::{Error, Result};
