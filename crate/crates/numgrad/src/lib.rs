//! Reverse-mode differentiation over dense tensors.
//!
//! A [`Graph`] records operations as they are evaluated; [`Graph::backward`]
//! walks the record in reverse. Parameters live in a [`ParamStore`] and are
//! placed on a graph with [`ParamStore::bind`]. Everything is generic over
//! [`Real`] so the same model code runs in `f32` for training and `f64` for
//! gradient checks.

pub mod adam;
pub mod checkpoint;
pub mod conv;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod params;
pub mod real;
pub mod tensor;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{read_checkpoint, write_checkpoint};
pub use error::{NumgradError, Result};
pub use gradcheck::{grad_check, grad_check_sampled, GradCheckReport};
pub use graph::{Gradients, Graph, Var};
pub use params::{Binding, ParamId, ParamStore, Parameter};
pub use real::Real;
pub use tensor::Tensor;
