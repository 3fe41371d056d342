//! Foundation for a cross-modal visual-speech learning stack: dense
//! tensors with tape-based reverse-mode differentiation, deterministic
//! counter-based randomness, a named parameter store with a binary
//! container format, acoustic target extraction, a synthetic paired
//! audio-visual corpus, and the visual augmentation chain.

pub mod conv;
pub mod corpus;
pub mod dsp;
pub mod error;
pub mod grad;
pub mod ops;
pub mod rng;
pub mod store;
pub mod tape;
pub mod tensor;
pub mod vision;

pub use error::{CoreError, Result};
pub use grad::{forward_backward, grad_check, ForwardBackward, Gradients, Session};
pub use rng::RngStream;
pub use store::{ParameterStore, TensorData};
pub use tape::{Tape, Var};
pub use tensor::{Dtype, Scalar, Tensor, TensorSpec};
