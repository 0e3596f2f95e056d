use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use super::config::ExperimentConfig;
use super::overlay::{load_manifest, overlay_relative};
use super::{read_text, save_stamped, write_atomic};
use crate::classifier::{build_classifier, evaluate, train_classifier, ClsCheckpoint, SampleSource, Subset};
use crate::dataset::io::load_image;
use crate::dataset::transform::resize;
use crate::dataset::{clean_labels, filter_frontal, split, CleanLabelVector, Partition, SplitAssignment};
use crate::grid::ImageGrid;
use crate::history::{history_to_csv, MetricsRecord};
use crate::{Error, Result};

/// Branch of the comparison: classifier inputs are either the original
/// radiographs or their lung overlays.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Arm {
    Original,
    Overlay,
}

impl Arm {
    pub const BOTH: [Arm; 2] = [Arm::Original, Arm::Overlay];

    pub fn as_str(self) -> &'static str {
        match self {
            Arm::Original => "original",
            Arm::Overlay => "overlay",
        }
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Arm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "original" => Ok(Arm::Original),
            "overlay" => Ok(Arm::Overlay),
            other => Err(Error::Config(format!(
                "unknown arm `{other}` (expected original or overlay)"
            ))),
        }
    }
}

pub fn classifier_checkpoint_path(config: &ExperimentConfig, arm: Arm) -> PathBuf {
    config.paths.checkpoint_dir.join(format!("classifier_{arm}.ckpt"))
}

pub fn history_path(report_dir: &std::path::Path, arm: Arm) -> PathBuf {
    report_dir.join(format!("history_{arm}.csv"))
}

pub fn split_path(report_dir: &std::path::Path, arm: Arm) -> PathBuf {
    report_dir.join(format!("split_{arm}.csv"))
}

pub fn test_path(report_dir: &std::path::Path, arm: Arm) -> PathBuf {
    report_dir.join(format!("test_{arm}.csv"))
}

/// Labelled images read from disk on demand and resized to the
/// classifier input.
#[derive(Clone, Debug)]
pub struct ManifestSource {
    paths: Vec<PathBuf>,
    labels: Vec<CleanLabelVector>,
    size: (usize, usize),
}

impl ManifestSource {
    pub fn new(paths: Vec<PathBuf>, labels: Vec<CleanLabelVector>, size: (usize, usize)) -> Result<Self> {
        if paths.len() != labels.len() {
            return Err(Error::dimension(paths.len(), labels.len()));
        }
        Ok(Self { paths, labels, size })
    }

    /// Frontal manifest records, read from the image root for the original
    /// arm and from the overlay directory for the overlay arm.
    pub fn for_arm(config: &ExperimentConfig, arm: Arm) -> Result<Self> {
        let manifest = filter_frontal(&load_manifest(config)?);
        let mut paths = Vec::with_capacity(manifest.len());
        for r in &manifest.records {
            paths.push(match arm {
                Arm::Original => config.paths.image_root.join(&r.path),
                Arm::Overlay => config.paths.overlay_dir.join(overlay_relative(&r.path)?),
            });
        }
        let labels = manifest.records.iter().map(|r| clean_labels(&r.labels)).collect();
        Self::new(paths, labels, config.classifier.input_size)
    }

    pub fn paths(&self) -> &[PathBuf] {
        &self.paths
    }

    /// Fails on the first file that does not exist, naming it.
    pub fn check_files(&self) -> Result<()> {
        match self.paths.iter().find(|p| !p.is_file()) {
            Some(p) => Err(Error::io(
                p,
                std::io::Error::new(std::io::ErrorKind::NotFound, "image listed in the manifest is missing"),
            )),
            None => Ok(()),
        }
    }
}

impl SampleSource for ManifestSource {
    fn len(&self) -> usize {
        self.paths.len()
    }

    fn load(&self, index: usize) -> Result<(ImageGrid, CleanLabelVector)> {
        let path = self
            .paths
            .get(index)
            .ok_or_else(|| Error::Data(format!("sample {index} out of range")))?;
        let image = resize(&load_image(path)?, self.size.0, self.size.1)?;
        Ok((image, self.labels[index]))
    }
}

/// Trains one arm and writes its checkpoint, history and split files.
/// Both arms draw the same split and initial weights from the config seed.
pub fn cmd_classify_train(config: &ExperimentConfig, arm: Arm) -> Result<ClsCheckpoint> {
    let source = ManifestSource::for_arm(config, arm)?;
    source.check_files()?;
    let assignment = split(source.len(), config.seed);
    log::info!(
        "training {arm} arm: {} train, {} val, {} test",
        assignment.train.len(),
        assignment.val.len(),
        assignment.test.len()
    );
    let model = build_classifier(&config.classifier, config.seed)?;
    let ck = train_classifier(model, &source, &config.classifier, &assignment, config.seed)?;

    let provenance = config.provenance();
    let report_dir = &config.paths.report_dir;
    save_stamped(ck.to_archive(), &provenance, &classifier_checkpoint_path(config, arm))?;
    write_atomic(
        &history_path(report_dir, arm),
        history_to_csv(&ck.history, Some(&provenance)).as_bytes(),
    )?;
    let split_csv = assignment.to_csv(Some(&format!("config_hash={}", provenance.config_hash)));
    write_atomic(&split_path(report_dir, arm), split_csv.as_bytes())?;
    Ok(ck)
}

/// Scores a trained arm on its test partition and writes `test_<arm>.csv`.
pub fn cmd_evaluate(config: &ExperimentConfig, arm: Arm) -> Result<MetricsRecord> {
    let ck = ClsCheckpoint::load(&classifier_checkpoint_path(config, arm))?;
    let source = ManifestSource::for_arm(config, arm)?;
    let assignment = SplitAssignment::from_csv(&read_text(&split_path(&config.paths.report_dir, arm))?)?;
    if assignment.len() != source.len() {
        return Err(Error::Data(format!(
            "{arm} split covers {} records but the manifest has {}",
            assignment.len(),
            source.len()
        )));
    }
    let test = Subset {
        source: &source,
        indices: assignment.indices(Partition::Test),
    };
    let record = evaluate(&ck.model, &test, ck.config().batch_size)?;
    let csv = history_to_csv(std::slice::from_ref(&record), Some(&config.provenance()));
    write_atomic(&test_path(&config.paths.report_dir, arm), csv.as_bytes())?;
    Ok(record)
}
