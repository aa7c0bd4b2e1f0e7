//! Dense numeric building blocks shared by every architecture.

mod activation;
mod dense;
pub(crate) mod gemm;
mod gradcheck;
mod init;
mod matrix;

pub use activation::{relu, relu_derivative, relu_scalar, sigmoid, sigmoid_scalar, Activation};
pub use dense::DenseLayer;
pub use gradcheck::grad_check;
pub use init::{glorot_limit, glorot_uniform, init_params};
pub use matrix::Matrix;
