//! A small CPU transformer with hand-written reverse-mode gradients.
//!
//! Everything is computed in `f64`. Stored weights are kept on the `f32`
//! grid so checkpoints (which hold `f32`) reload bit-identically.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod linalg;
pub mod loss;
pub mod model;
pub mod ops;
pub mod optim;
pub mod params;
pub mod train;

pub use checkpoint::ModelCheckpoint;
pub use config::{AttentionKind, HeadKind, ModelConfig};
pub use error::NnError;
pub use loss::{batch_loss, loss_and_grad, Example, Objective, Target};
pub use model::{DecodeState, Logits, Transformer};
pub use optim::{Adam, AdamConfig, StepStats};
pub use params::{Gradients, ParamId, ParamStore, Tensor};
pub use train::{train, TrainConfig};
