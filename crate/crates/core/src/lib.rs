//! Lung localization, lung-overlay preprocessing and multi-label chest
//! radiograph classification.

pub mod checkpoint;
pub mod classifier;
pub mod dataset;
pub mod error;
pub mod grid;
pub mod history;
mod layers;
pub mod localizer;
pub mod mask_ops;
pub mod metrics;
pub mod pipeline;

pub use error::{Error, Result};
pub use grid::{BinaryMask, ImageGrid, ProbabilityMap};
pub use history::{MetricsRecord, Phase, Provenance};
