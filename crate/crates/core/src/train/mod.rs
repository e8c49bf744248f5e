//! Training loops for the mean (primal and dual), covariance, combined and
//! conditional objectives, with checkpointing and trace output.

mod checkpoint;
mod config;
mod engine;

pub use checkpoint::CHECKPOINT_VERSION;
pub use config::{Objective, StiefelGradient, TrainConfig, VProjection};
pub use engine::{
    critic_head_update, project_heads, smooth, train, train_combined, train_conditional, train_cov_primal,
    train_mean_dual, train_mean_primal, Models, SampleCounters, StiefelAscent, TrainRecord, TrainTrace, Trainer,
    HEAD_S, HEAD_U, HEAD_V, HEAD_V_COV, TRACE_HEADER,
};
