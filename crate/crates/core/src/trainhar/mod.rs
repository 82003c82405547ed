//! A small fully convolutional panoptic model, its training loop and inference.

pub mod checkpoint;
pub mod layers;
pub mod model;
pub mod postprocess;
pub mod sampler;
pub mod train;

pub use crate::occlcon::separation_score;
pub use checkpoint::Checkpoint;
pub use model::{ToyPanopticModel, ARCHITECTURE};
pub use postprocess::panoptic_postprocess;
pub use sampler::StratifiedSampler;
pub use train::{
    embed_items, evaluate_items, extract_embeddings, load_items, predict_dataset, predict_items, train, train_on,
    EpochRecord, Mode, StepRecord, TrainConfig, TrainItem, TrainOutcome,
};
