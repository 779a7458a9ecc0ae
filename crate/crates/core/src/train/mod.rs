//! Configuration, training loop, checkpoints and the ablation harness.

mod ablation;
mod checkpoint;
mod config;
mod trainer;

pub use ablation::{ablation_rows, ablation_suite, AblationResult, AblationRow, AblationTable};
pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_FILE};
pub use config::{
    AblationFlags, BatchConfig, DimsConfig, EvalConfig, LossConfig, PromptConfig, ScheduleConfig, TrainConfig, SEED_ENV,
};
pub use trainer::{embed_samples, evaluate, train, EvalOutcome, StepRecord, TrainState};
