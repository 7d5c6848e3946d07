//! Dense `f64` tensors with tape-based reverse-mode differentiation.
//!
//! Build a [`Graph`] from leaves ([`Graph::input`], [`Graph::constant`],
//! [`Graph::param`]) and ops, then call [`Graph::backward`] on a scalar.
//! Every op's gradient is checked against central differences with
//! [`grad_check`].

mod error;
mod gradcheck;
mod graph;
mod kernels;
pub mod nn;
pub mod ops;
mod optim;
mod params;
mod tensor;

pub use error::{shape_err, DiffError, Result};
pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport, InputCheck};
pub use graph::{CustomOp, Gradients, Graph, Var};
pub use ops::conv::{conv2d_forward, DEMOD_EPS};
pub use ops::elementwise::{sigmoid, softplus};
pub use ops::sample::{bilinear_sample, trilinear_sample};
pub use optim::{Adam, AdamConfig};
pub use params::{ParamId, ParamStore};
pub use tensor::Tensor;
