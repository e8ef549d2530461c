//! A small coarse-to-fine completion network: a 3D CNN over the gridded
//! input, Gridding Reverse to a coarse cloud, cubic feature sampling, and a
//! per-point MLP that offsets tiled copies of the coarse points. Every layer
//! has a hand-written backward pass.

pub mod adam;
pub mod checkpoint;
pub mod config;
pub mod layers;
pub mod net;
pub mod params;
pub mod train;

pub use adam::AdamState;
pub use config::NetConfig;
pub use net::{ForwardOutput, ForwardRecord, MiniNet};
pub use params::Params;
pub use train::{
    combined_loss, evaluate_dataset, train, train_from, LossBreakdown, LossWeights, Sample,
    StepLog, TrainConfig, TrainOutcome,
};
