//! Dense f64 tensors, reverse-mode differentiation, loss kernels, and Adam.
//!
//! The whole model runs on these primitives: [`Tensor`] is a row-major f64
//! buffer, [`Graph`] records primitive applications for reverse accumulation,
//! and [`adam_step`] applies bias-corrected Adam updates to a [`ParamStore`].
//! Every differentiable primitive is validated against central finite
//! differences via [`grad_check`].

mod adam;
#[cfg(test)]
mod op_checks;
mod graph;
mod gradcheck;
pub mod kernels;
mod store;
mod tensor;

pub use adam::{adam_step, AdamHyper, AdamState};
pub use gradcheck::{grad_check, GradCheckReport};
pub use graph::{Graph, NodeId};
pub use store::ParamStore;
pub use tensor::Tensor;

use thiserror::Error;

/// Errors raised by tensor math, autodiff, and the optimizer.
#[derive(Debug, Error)]
pub enum NumericsError {
    /// A computation produced (or was handed) a NaN or infinity.
    #[error("numeric failure: {0}")]
    NumericFailure(String),
    /// Operand shapes do not line up.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    /// Cosine similarity of a (near-)zero vector is undefined.
    #[error("zero vector in cosine similarity (norm {0:.3e})")]
    ZeroVector(f64),
}

pub type Result<T> = std::result::Result<T, NumericsError>;
