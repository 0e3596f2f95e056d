//! Manifests, label cleaning, splits, transforms and raster I/O.

pub mod io;
pub mod labels;
pub mod manifest;
pub mod pairs;
pub mod split;
pub mod synthetic;
pub mod transform;

pub use labels::{clean_labels, CleanLabelVector, Observation, RawLabelVector, CHEXPERT_OBSERVATIONS, LABEL_COUNT};
pub use manifest::{filter_frontal, parse_manifest, serialize_manifest, DatasetManifest, ManifestRecord, View};
pub use split::{split, split_sizes, Partition, SplitAssignment};
pub use synthetic::{generate_synthetic_pair, generate_synthetic_sample, SyntheticOptions, SyntheticPair};
pub use transform::{equalize_histogram, hflip, random_hflip, resize, resize_mask};
