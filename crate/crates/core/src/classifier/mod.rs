//! Densely connected multi-label classifier, its training loop and
//! evaluation, and the two-stream fusion head.

mod config;
mod fusion;
mod model;
mod train;

pub use config::{parse_blocks, Backbone, ClsModelConfig, Stem};
pub use fusion::{fuse_predict, train_fusion_head, FusionHead, FusionTraining};
pub use model::{build_classifier, Classifier, FeatureVector, MultilabelPredictor, Scores};
pub use train::{evaluate, train_classifier, ClsCheckpoint, SampleSource, Subset, CHECKPOINT_KIND};
