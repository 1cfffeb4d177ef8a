//! Tensors, reverse-mode differentiation, the graph transformer denoiser and
//! its training loop.

pub mod checkpoint;
pub mod gradcheck;
pub mod model;
pub mod optim;
pub mod tape;
pub mod tensor;
pub mod train;

pub use gradcheck::{gradient_check, GradCheckReport};
pub use model::{
    GraphTransformer, Heads, ModelConfig, ModelInput, ModelOutput, Predictions, Profile,
    ACTION_MASK, ACTION_SLOTS, RELATION_MASK, RELATION_SLOTS,
};
pub use tape::{EdgeTerms, Grads, Graph, ParamId, ParamStore, Var};
pub use tensor::Tensor;
pub use train::{Objective, TrainConfig, Trainer};
