//! Reverse-mode automatic differentiation over [`Tensor`](crate::Tensor).

mod gradcheck;
mod graph;
mod param;

pub use gradcheck::{grad_check, relative_error, GradCheckEntry, GradCheckReport};
pub use graph::{Graph, Var};
pub use param::{Gradients, ParamId, ParamStore, Parameter};

/// Epsilon used by every layer norm in the model.
pub const LN_EPS: f64 = 1e-5;
