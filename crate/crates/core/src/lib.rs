//! ECAPA-TDNN speaker embeddings: layers, training, MFCC front-end and
//! verification scoring, on a small reverse-mode autodiff core.

pub mod archive;
pub mod error;
pub mod features;
pub mod graph;
pub mod harness;
mod kernels;
pub mod model;
pub mod nn;
pub mod ops;
pub mod params;
pub mod rng;
pub mod scoring;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use graph::{Gradients, Graph, Var};
pub use model::{AblationFlags, AblationVariant, Model, ModelConfig, ParamScope, ResidualMode};
pub use params::{Mode, ParamStore, Session};
pub use tensor::Tensor;
