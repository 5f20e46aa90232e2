//! Minimal reverse-mode autodiff plus the layers and optimizer the
//! autoencoder needs.

mod adam;
pub mod gradcheck;
mod graph;
mod init;
mod linalg;
mod ops;
mod param;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use graph::{Backward, Graph, Leaf, Var};
pub use init::glorot_uniform;
pub use ops::Padding;
pub use param::{Param, ParamId, ParamStore};
pub use tensor::Tensor;
