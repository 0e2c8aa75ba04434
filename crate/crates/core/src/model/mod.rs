//! The two-headed hierarchical attention network: point and beat level
//! bidirectional recurrences with attention pooling, a slice classifier and
//! a per-point localizer.

mod config;
mod forward;
pub mod layers;
mod loss;
mod params;
mod train;

pub use config::ModelConfig;
pub use forward::{forward, forward_on_tape, forward_with, valid_prefix, ForwardOptions, ForwardOutput, ForwardVars};
pub use loss::{combine_losses, joint_loss, LossVars, Objective};
pub use params::{AttentionIdx, BiLstmIdx, Layout, LstmCellIdx, ParamGroup, ParamStore};
pub use train::{
    batch_gradients, evaluate, f1, point_counts, train, EpochRecord, Evaluation, Model, Schedule, TrainMode,
    TrainOutcome,
};
