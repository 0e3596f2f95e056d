use std::path::{Path, PathBuf};

use super::config::ExperimentConfig;
use super::corpus::synthetic_seg_pairs;
use super::{save_stamped, write_atomic};
use crate::dataset::pairs::load_segmentation_pairs;
use crate::grid::{BinaryMask, ImageGrid};
use crate::history::history_to_csv;
use crate::localizer::{build_seg_model, train_localizer, SegCheckpoint};
use crate::{Error, Result};

pub fn localizer_checkpoint_path(config: &ExperimentConfig) -> PathBuf {
    config.paths.checkpoint_dir.join("localizer.ckpt")
}

pub(crate) fn require_dir(path: &Path, what: &str) -> Result<()> {
    if !path.is_dir() {
        return Err(Error::Config(format!(
            "{what} `{}` does not exist (enable synthetic data to run without it)",
            path.display()
        )));
    }
    Ok(())
}

fn training_pairs(config: &ExperimentConfig) -> Result<Vec<(ImageGrid, BinaryMask)>> {
    if config.synthetic.enabled {
        return synthetic_seg_pairs(config);
    }
    let paths = &config.paths;
    require_dir(&paths.seg_images, "segmentation image directory")?;
    for dir in &paths.seg_masks {
        require_dir(dir, "segmentation mask directory")?;
    }
    let mask_dirs: Vec<&Path> = paths.seg_masks.iter().map(PathBuf::as_path).collect();
    let pairs = load_segmentation_pairs(&paths.seg_images, &mask_dirs, config.localizer.input_size)?;
    Ok(pairs.into_iter().map(|p| (p.image, p.mask)).collect())
}

/// Trains the localizer and writes `localizer.ckpt` and
/// `localizer_history.csv` under the checkpoint directory.
pub fn cmd_localize_train(config: &ExperimentConfig) -> Result<SegCheckpoint> {
    let data = training_pairs(config)?;
    log::info!("training localizer on {} pairs", data.len());
    let model = build_seg_model(&config.localizer, config.seed)?;
    let ck = train_localizer(model, &data, &config.localizer, config.val_fraction, config.seed)?;

    let provenance = config.provenance();
    save_stamped(ck.to_archive(), &provenance, &localizer_checkpoint_path(config))?;
    let csv = history_to_csv(&ck.history, Some(&provenance));
    write_atomic(
        &config.paths.checkpoint_dir.join("localizer_history.csv"),
        csv.as_bytes(),
    )?;
    Ok(ck)
}
