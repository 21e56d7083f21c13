//! Training, extraction, persistence and experiment drivers.

pub mod ablate;
pub mod config;
pub mod persist;
pub mod report;
pub mod train;

pub use ablate::{run_ablation, AblationConfig, AblationKind, AblationTable, RunCache};
pub use config::{AugmentConfig, EnsembleConfig, PatternMode, Schedule, TrainConfig};
pub use persist::{load_dataset, save_dataset, Reducer};
pub use report::{Environment, NamedEval, RunReport};
pub use train::{checkpoint, extract, identity_batches, restore, train, train_with, EpochLog, TrainOutcome};
