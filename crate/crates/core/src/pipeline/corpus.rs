//! Synthetic stand-ins for the segmentation and classification corpora.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::ExperimentConfig;
use super::write_atomic;
use crate::dataset::io::save_image;
use crate::dataset::synthetic::{generate_marker_dataset, generate_synthetic_pair, MarkerLayout, MarkerOptions};
use crate::dataset::transform::equalize_histogram;
use crate::dataset::{
    serialize_manifest, CleanLabelVector, DatasetManifest, ManifestRecord, Observation, RawLabelVector, View,
    CHEXPERT_OBSERVATIONS,
};
use crate::grid::{BinaryMask, ImageGrid};
use crate::Result;

/// Every tenth record is a lateral view, so the frontal filter has work.
const LATERAL_EVERY: usize = 10;

/// Keeps the classification corpus independent of the segmentation pairs
/// drawn from the same seed.
const SEG_STREAM: u64 = 0x5e6;

/// Equalized grayscale chest images with their lung masks, at the
/// localizer's input size.
pub fn synthetic_seg_pairs(config: &ExperimentConfig) -> Result<Vec<(ImageGrid, BinaryMask)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ SEG_STREAM);
    let seeds: Vec<u64> = (0..config.synthetic.seg_pairs).map(|_| rng.random()).collect();
    seeds
        .par_iter()
        .map(|&s| {
            let (image, mask) = generate_synthetic_pair(s, config.localizer.input_size)?;
            Ok((equalize_histogram(&image)?, mask))
        })
        .collect()
}

/// Negative slots are written as negative, uncertain or blank in a fixed
/// rotation; cleaning maps all three back to 0.
fn raw_cells(i: usize, labels: &CleanLabelVector) -> RawLabelVector {
    RawLabelVector(std::array::from_fn(|j| match (labels.0[j], (i * 3 + j) % 7) {
        (1, _) => Observation::Positive,
        (_, 3) => Observation::Uncertain,
        (_, 5) => Observation::Missing,
        _ => Observation::Negative,
    }))
}

fn relative_path(i: usize, view: View) -> String {
    match view {
        View::Frontal => format!("train/patient{i:05}/study1/view1_frontal.png"),
        View::Lateral => format!("train/patient{i:05}/study1/view2_lateral.png"),
    }
}

/// Writes a marker-blob corpus (RGB PNGs plus a CheXpert-style manifest)
/// unless the manifest already exists. Markers sit inside the lungs and
/// label-independent markers outside them. Returns whether anything was
/// written.
pub fn ensure_synthetic_corpus(config: &ExperimentConfig) -> Result<bool> {
    let paths = &config.paths;
    if paths.manifest.exists() {
        return Ok(false);
    }
    let s = &config.synthetic;
    let options = MarkerOptions {
        outside_noise: s.outside_noise,
        layout: MarkerLayout::Lungs,
    };
    let samples = generate_marker_dataset(config.seed, s.samples, (s.size, s.size), s.positive_rate, &options)?;
    let note = config.provenance().fields();

    let records: Vec<ManifestRecord> = samples
        .iter()
        .enumerate()
        .map(|(i, (_, labels))| {
            let view = if i % LATERAL_EVERY == LATERAL_EVERY - 1 {
                View::Lateral
            } else {
                View::Frontal
            };
            ManifestRecord {
                path: relative_path(i, view),
                sex: if i % 2 == 0 { "Female" } else { "Male" }.into(),
                age: (20 + i % 60).to_string(),
                view,
                projection: if view == View::Frontal { "PA" } else { "" }.into(),
                labels: raw_cells(i, labels),
            }
        })
        .collect();
    records
        .par_iter()
        .zip(&samples)
        .try_for_each(|(r, (sample, _))| save_image(&paths.image_root.join(&r.path), &sample.image, Some(&note)))?;

    let manifest = DatasetManifest {
        observations: CHEXPERT_OBSERVATIONS.iter().map(|s| s.to_string()).collect(),
        records,
    };
    write_atomic(&paths.manifest, serialize_manifest(&manifest).as_bytes())?;
    log::info!("wrote {} synthetic records to {}", s.samples, paths.manifest.display());
    Ok(true)
}
