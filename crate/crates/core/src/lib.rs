//! Surrogate ODE models of chaotic systems trained with neighborhood
//! regularization, plus the tooling to generate data and evaluate them.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod cover;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod field;
pub mod integrate;
pub mod io;
pub mod linalg;
pub mod model;
pub mod pipeline;
pub mod systems;
pub mod train;

pub use error::{Error, Result};
pub use field::VectorField;
pub use linalg::Mat;
