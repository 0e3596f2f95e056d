use std::path::{Component, Path, PathBuf};

use rayon::prelude::*;

use super::config::ExperimentConfig;
use super::corpus::ensure_synthetic_corpus;
use super::localize::{localizer_checkpoint_path, require_dir};
use super::{read_text, write_atomic};
use crate::dataset::io::{load_image, save_image, save_mask};
use crate::dataset::transform::{equalize_histogram, resize, resize_mask};
use crate::dataset::{filter_frontal, parse_manifest, DatasetManifest};
use crate::grid::{ImageGrid, ProbabilityMap};
use crate::localizer::SegCheckpoint;
use crate::mask_ops::{binarize, connected_components, mirror_fill, overlay, retain_two_regions};
use crate::{Error, Result};

/// Records processed per prediction call.
const CHUNK: usize = 16;

pub const SIDECAR_HEADER: [&str; 5] = [
    "source_path",
    "overlay_path",
    "components_before",
    "components_after",
    "skipped_reason",
];

/// Lung probability maps for localizer-ready images: single channel,
/// histogram-equalized, at [`MaskPredictor::input_size`].
pub trait MaskPredictor: Sync {
    fn input_size(&self) -> (usize, usize);

    fn predict(&self, images: &[ImageGrid]) -> Result<Vec<ProbabilityMap>>;
}

impl MaskPredictor for SegCheckpoint {
    fn input_size(&self) -> (usize, usize) {
        self.config().input_size
    }

    fn predict(&self, images: &[ImageGrid]) -> Result<Vec<ProbabilityMap>> {
        self.predict_probabilities(images)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SidecarRow {
    /// Manifest path, relative to the image root.
    pub source_path: String,
    /// Relative to the overlay directory; empty when skipped.
    pub overlay_path: String,
    pub components_before: Option<usize>,
    pub components_after: Option<usize>,
    /// Empty unless the record was skipped.
    pub skipped_reason: String,
}

impl SidecarRow {
    fn skipped(source_path: &str, reason: String) -> Self {
        Self {
            source_path: source_path.to_string(),
            overlay_path: String::new(),
            components_before: None,
            components_after: None,
            skipped_reason: reason,
        }
    }
}

pub fn sidecar_path(config: &ExperimentConfig) -> PathBuf {
    config.paths.report_dir.join("overlay_sidecar.csv")
}

/// Where the overlay of manifest path `source` is written, relative to
/// the overlay directory. Outputs are always PNG.
pub fn overlay_relative(source: &str) -> Result<PathBuf> {
    let p = Path::new(source);
    if p.components().any(|c| !matches!(c, Component::Normal(_))) {
        return Err(Error::Data(format!("`{source}` is not a plain relative path")));
    }
    Ok(p.with_extension("png"))
}

pub(crate) fn load_manifest(config: &ExperimentConfig) -> Result<DatasetManifest> {
    if config.synthetic.enabled {
        ensure_synthetic_corpus(config)?;
    } else {
        require_dir(&config.paths.image_root, "image root")?;
    }
    parse_manifest(&read_text(&config.paths.manifest)?)
}

fn localizer_input(image: &ImageGrid, (h, w): (usize, usize)) -> Result<ImageGrid> {
    resize(&equalize_histogram(&image.to_grayscale())?, h, w)
}

fn render_sidecar(rows: &[SidecarRow], provenance: &str) -> String {
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    writer.write_record(SIDECAR_HEADER).expect("in-memory write");
    let count = |c: Option<usize>| c.map(|v| v.to_string()).unwrap_or_default();
    for r in rows {
        writer
            .write_record([
                r.source_path.clone(),
                r.overlay_path.clone(),
                count(r.components_before),
                count(r.components_after),
                r.skipped_reason.clone(),
            ])
            .expect("in-memory write");
    }
    let body = String::from_utf8(writer.into_inner().expect("in-memory flush")).expect("csv output is utf-8");
    format!("{provenance}{body}")
}

/// Masks, post-processes and overlays one loaded record, writing the mask
/// and overlay PNGs.
fn finish_record(
    config: &ExperimentConfig,
    source: &str,
    image: &ImageGrid,
    probabilities: &ProbabilityMap,
    note: &str,
) -> Result<SidecarRow> {
    let settings = &config.overlay;
    let mut mask = binarize(probabilities, settings.threshold)?;
    let before = connected_components(&mask).len();
    if settings.retain_two {
        mask = retain_two_regions(&mask);
    }
    if settings.mirror_fill {
        mask = mirror_fill(&mask);
    }
    let after = connected_components(&mask).len();

    let native = resize_mask(&mask, image.height(), image.width())?;
    let out = overlay(image, &native)?;
    if out.data().iter().zip(image.data()).any(|(o, i)| o > i) {
        return Err(Error::Data(format!("overlay of `{source}` brightened a pixel")));
    }
    let rel = overlay_relative(source)?;
    save_image(&config.paths.overlay_dir.join(&rel), &out, Some(note))?;
    save_mask(&config.paths.mask_dir.join(&rel), &native, Some(note))?;
    Ok(SidecarRow {
        source_path: source.to_string(),
        overlay_path: rel.to_string_lossy().into_owned(),
        components_before: Some(before),
        components_after: Some(after),
        skipped_reason: String::new(),
    })
}

/// Overlays every frontal manifest record using `predictor`. Records whose
/// image cannot be read are skipped and noted in the sidecar. Returns the
/// sidecar rows in manifest order.
pub fn run_overlay(config: &ExperimentConfig, predictor: &dyn MaskPredictor) -> Result<Vec<SidecarRow>> {
    let manifest = filter_frontal(&load_manifest(config)?);
    std::fs::create_dir_all(&config.paths.overlay_dir).map_err(|e| Error::io(&config.paths.overlay_dir, e))?;
    let provenance = config.provenance();
    let note = provenance.fields();
    let size = predictor.input_size();

    let mut rows = Vec::with_capacity(manifest.len());
    for chunk in manifest.records.chunks(CHUNK) {
        let loaded: Vec<std::result::Result<(ImageGrid, ImageGrid), String>> = chunk
            .par_iter()
            .map(|r| {
                overlay_relative(&r.path)
                    .and_then(|_| load_image(&config.paths.image_root.join(&r.path)))
                    .and_then(|img| Ok((localizer_input(&img, size)?, img)))
                    .map_err(|e| e.to_string())
            })
            .collect();
        let inputs: Vec<ImageGrid> = loaded
            .iter()
            .filter_map(|l| l.as_ref().ok())
            .map(|l| l.0.clone())
            .collect();
        let mut maps = if inputs.is_empty() {
            Vec::new()
        } else {
            predictor.predict(&inputs)?
        }
        .into_iter();
        if maps.len() != inputs.len() {
            return Err(Error::dimension(inputs.len(), maps.len()));
        }
        let jobs: Vec<_> = chunk
            .iter()
            .zip(loaded)
            .map(|(r, l)| (r, l.map(|(_, img)| (img, maps.next().expect("one map per input")))))
            .collect();
        let done: Vec<SidecarRow> = jobs
            .par_iter()
            .map(|(r, job)| match job {
                Ok((img, map)) => finish_record(config, &r.path, img, map, &note),
                Err(reason) => {
                    log::warn!("skipping {}: {reason}", r.path);
                    Ok(SidecarRow::skipped(&r.path, reason.clone()))
                }
            })
            .collect::<Result<_>>()?;
        rows.extend(done);
    }

    let sidecar = render_sidecar(&rows, &provenance.comment_line());
    write_atomic(&sidecar_path(config), sidecar.as_bytes())?;
    Ok(rows)
}

/// Loads the trained localizer and runs [`run_overlay`] with it.
pub fn cmd_overlay(config: &ExperimentConfig) -> Result<Vec<SidecarRow>> {
    let ck = SegCheckpoint::load(&localizer_checkpoint_path(config))?;
    run_overlay(config, &ck)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overlay_paths_stay_inside_the_output_tree() {
        assert_eq!(overlay_relative("a/b/c.jpg").unwrap(), Path::new("a/b/c.png"));
        assert!(overlay_relative("../x.png").is_err());
        assert!(overlay_relative("/abs/x.png").is_err());
    }

    #[test]
    fn sidecar_quotes_and_leaves_skips_blank() {
        let rows = [SidecarRow::skipped("a.png", "bad, file".into())];
        let text = render_sidecar(&rows, "# p\n");
        assert_eq!(
            text,
            "# p\nsource_path,overlay_path,components_before,components_after,skipped_reason\na.png,,,,\"bad, file\"\n"
        );
    }
}
