//! Run configuration, synthetic fixtures, training and evaluation.
//!
//! Training is single-threaded and fully determined by the configuration
//! seed and the data. Frozen leading stages are evaluated once per frame
//! and cached, so head-only runs never touch the trunk inside the loop.
//! All weights are rounded to `f32` before they are scored, which makes a
//! saved checkpoint reproduce its recorded metric exactly.

mod config;
mod fixtures;
mod frames;
mod model;
mod train;

pub use config::{ClipConfig, DataPaths, FreezeFlags, HeadKind, OptimizerConfig, OptimizerName, RunConfig};
pub use fixtures::{generate_fixtures, FixtureSet, FixtureSpec, FixtureVideo, Latent};
pub use frames::{load_batch, FrameSource, MemoryFrames, RgbImage};
pub use model::{decode, trainable_params, Encoders, Head, Level, Predictions, StageInput, TaskModel};
pub use train::{evaluate_task, predict, train_task, CheckpointManifest, EvalPoint, FrameList, Resources};

#[cfg(test)]
mod tests;
