//! Dense numeric substrate: matrices, kernels with backward rules, the
//! parameter store, AdamW and a finite-difference gradient checker.
//!
//! There is no autodiff graph. Each model in this crate mirrors its forward
//! pass with a hand-written backward pass built from these kernels.

mod gradcheck;
mod loss;
pub mod ops;
mod optim;
mod params;
mod tensor;

pub use gradcheck::{grad_check, grad_check_with, probe_coords, GradCheckOptions, GradCheckReport, TensorCheck};
pub use loss::{cross_entropy, softmax};
pub use ops::{
    layer_norm, layer_norm_backward, matmul, matmul_backward, matmul_nt, matmul_tn, row_softmax,
    row_softmax_backward, LayerNormCache,
};
pub use optim::{AdamW, AdamWConfig};
pub use params::ParamStore;
pub use tensor::Tensor2;
