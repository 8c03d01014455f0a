//! Trainable hybrid CTC/attention recognizer built on a small reverse-mode autodiff.

mod check;
mod graph;
mod model;
mod optim;
mod params;
mod train;

pub use check::{gradient_check, GroupError, VANISHING_NORM};
pub use graph::{sigmoid, Gradients, Graph, Matrix, Var, LAYER_NORM_EPS, ZERO_INDEX};
pub use model::{checkpoint_notes, hybrid_loss, positional_encoding, AttentionScorer, Encoded, LossParts, Model, ModelConfig};
pub use optim::{clip_grad_norm, AdamW, OneCycle};
pub use params::{read_checkpoint, write_checkpoint, ParamStore, Record, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use train::{mean_loss, prepare_input, train, EpochStats, TrainConfig, TrainItem};
