#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod budget;
pub mod diagnostics;
pub mod error;
pub mod finite_diff;
pub mod linalg;
pub mod models;
pub mod pipeline;
pub mod planner;
pub mod probes;
pub mod quadrature;
pub mod sampler;
#[cfg(feature = "serde")]
pub mod serde_vec;

pub use error::{Error, Result};
pub use linalg::{Matrix, Vector};
pub use models::{anneal, AnnealedView, BackwardConditional, GaussianMixture, Model, ScoreModel};
