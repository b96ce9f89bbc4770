//! Feed-forward network engine: dense, conv, pooling and ReLU layers with
//! exact reverse-mode gradients, masked softmax cross-entropy, and a
//! finite-difference checker.

pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod network;
pub mod tensor;

pub use gradcheck::{gradient_check, CheckBatch};
pub use layers::{layer_backward, layer_forward, LayerCache, LayerSpec};
pub use loss::{batch_xent, masked_softmax, masked_softmax_xent, predict};
pub use network::{build_model, Arch, ForwardCache, Gradients, HeadInit, HeadLayout, Network, ParamId};
pub use tensor::Tensor;
