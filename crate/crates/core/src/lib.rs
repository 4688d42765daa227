#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod fields;
pub mod flow;
pub mod harness;
pub mod linalg;
pub mod model;
pub mod ou;
pub mod par;
pub mod perturbation;
pub mod quadrature;
pub mod report;
pub mod rng;
pub mod sampler;
pub mod sde;

pub use error::{Error, Result};
