//! Dense `f64` tensors and the handful of layers the models are built from.
//!
//! Every layer has an explicit backward pass. Forward functions take `&self`
//! and return a cache; backward functions consume the cache and either
//! accumulate parameter gradients or, under [`GradMode::InputOnly`], only
//! propagate to the input.

pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod mixer;
pub mod optim;
pub mod param;
pub mod tensor;

pub use gradcheck::{grad_check, numeric_grad, GradCheckReport};
pub use layers::{gelu, gelu_backward, softmax, softmax_backward, LayerNorm, Linear};
pub use loss::{cross_entropy, smooth_l1, SMOOTH_L1_THRESHOLD};
pub use mixer::{MixerBlock, MixerShape};
pub use optim::{AdamWConfig, CosineSchedule, OptimState};
pub use param::{GradMode, Param, Parameters};
pub use tensor::Tensor;
