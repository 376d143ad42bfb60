//! Small fully-connected regressor trained from scratch in `f64`.

pub mod adam;
pub mod checkpoint;
pub mod mlp;
pub mod standardize;
pub mod train;

pub use adam::Adam;
pub use checkpoint::Checkpoint;
pub use mlp::{BnStats, Gradients, MlpModel, Mode, PassConfig, DEFAULT_DIMS, DEFAULT_DROPOUT};
pub use standardize::Standardizer;
pub use train::{fit, Dataset, StopReason, TrainConfig, TrainReport};
