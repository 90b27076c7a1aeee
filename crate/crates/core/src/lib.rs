//! Single-choice prophet inequalities with a limited "is this the maximum?"
//! oracle: numerics, instances, a simulation and exact-search engine, and the
//! optimal dynamic program over the two-valued worst-case family.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod instances;
pub mod mathkit;
pub mod engine;
pub mod dpopt;

pub use error::{DpError, EngineError, InstanceError, MathError};
