//! Command-level orchestration: localizer training, overlay generation,
//! the two classification arms and the joined report. Every artifact is
//! stamped with the config hash and seed.

pub mod classify;
pub mod config;
pub mod corpus;
pub mod localize;
pub mod overlay;
pub mod report;

use std::path::Path;

pub use classify::{cmd_classify_train, cmd_evaluate, Arm, ManifestSource};
pub use config::{ExperimentConfig, OverlaySettings, Paths, SyntheticSettings};
pub use corpus::{ensure_synthetic_corpus, synthetic_seg_pairs};
pub use localize::{cmd_localize_train, localizer_checkpoint_path};
pub use overlay::{cmd_overlay, run_overlay, sidecar_path, MaskPredictor, SidecarRow};
pub use report::{cmd_compare_report, cmd_report, ComparisonReport};

use crate::checkpoint::Checkpoint;
use crate::history::Provenance;
use crate::{Error, Result};

/// Writes through a temporary sibling and a rename, so readers never see
/// a partial file.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = std::path::PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub(crate) fn save_stamped(mut archive: Checkpoint, provenance: &Provenance, path: &Path) -> Result<()> {
    archive
        .config
        .push(("config_hash".into(), provenance.config_hash.clone()));
    archive.config.push(("seed".into(), provenance.seed.to_string()));
    write_atomic(path, &archive.to_bytes())
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}
