//! Numerical laboratory for convex variational problems with `(p,q)`-growth.
//!
//! The crate is organised by task:
//!
//! - [`integrands`]: integrands, `V`-functions and sampled hypothesis checks;
//! - [`fields`]: lattice fields, difference algebra, reflections and smoothing;
//! - [`solver`]: minimisation of the regularised functional and the gap probe;
//! - [`besov`]: difference-quotient seminorms and decay fits;
//! - [`exponents`]: closed-form regularity exponents and their recursions;
//! - [`regularity`]: excess energies and point classification.

pub mod besov;
pub mod error;
pub mod exponents;
pub mod fields;
pub mod integrands;
pub mod regularity;
pub mod solver;

pub use error::{Error, Result};
pub use fields::{GridFunction, GridSpec};
pub use integrands::{GrowthParams, IntegrandSpec};
