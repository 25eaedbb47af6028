//! Dense `f64` tensors with tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied to its nodes; [`Graph::backward`]
//! walks the tape once in reverse. Operations are 2-D unless noted and never
//! broadcast except along rows (`add_row`, `mul_row`). Every forward result is
//! checked for NaN/Inf.

mod adam;
mod check;
mod checkpoint;
mod error;
mod graph;
pub mod suite;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use check::{grad_check, grad_check_on, relative_error, GradCheckOptions, GradCheckReport, Probe};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC};
pub use error::{Error, Result};
pub use graph::{Fault, Gradients, Graph, Var};
pub use tensor::Tensor;
