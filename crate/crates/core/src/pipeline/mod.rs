//! Training, optimization, checkpoints, evaluation and inspection.

mod checkpoint;
mod config;
mod evaluate;
mod inspect;
mod model;
mod optim;
mod train;

pub use checkpoint::{config_hash, Checkpoint};
pub use config::{DiversitySegments, ModelConfig, TrainConfig};
pub use evaluate::{
    detect_shots, evaluate, frame_scores, video_segmentation, Aggregate, EvalOptions, EvalReport,
    Scorer, VideoEval, FALLBACK_SHOT_FRAMES,
};
pub use inspect::inspect;
pub use model::{video_loss, ModelParams, ModelVars, VideoLoss};
pub use optim::{adam_step, global_norm, AdamConfig, AdamState};
pub use train::{train, train_from, LogRecord, TrainOutcome};
