//! Radiograph/mask pairs on disk: one image directory plus one or two mask
//! directories (left and right lung) keyed by file stem.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::io::{load_grayscale, load_mask};
use super::transform::{equalize_histogram, resize, resize_mask};
use crate::grid::{BinaryMask, ImageGrid};
use crate::mask_ops::combine;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SegmentationPair {
    pub name: String,
    pub image: ImageGrid,
    pub mask: BinaryMask,
}

fn index_dir(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_raster = matches!(
            path.extension()
                .and_then(|e| e.to_str())
                .map(str::to_ascii_lowercase)
                .as_deref(),
            Some("png" | "jpg" | "jpeg")
        );
        if !is_raster {
            continue;
        }
        if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
            out.insert(stem.to_string(), path.clone());
        }
    }
    Ok(out)
}

/// Loads every image with a mask of the same stem in each mask directory.
/// Left and right masks are united; images are equalized and resized to
/// `size`, masks are resized with nearest neighbour. Images without a mask
/// are skipped with a warning. Output is sorted by stem.
pub fn load_segmentation_pairs(
    image_dir: &Path,
    mask_dirs: &[&Path],
    size: (usize, usize),
) -> Result<Vec<SegmentationPair>> {
    if mask_dirs.is_empty() {
        return Err(Error::Parameter("at least one mask directory is required".into()));
    }
    let images = index_dir(image_dir)?;
    let masks = mask_dirs.iter().map(|d| index_dir(d)).collect::<Result<Vec<_>>>()?;
    let mut pairs = Vec::new();
    for (stem, image_path) in images {
        let Some(paths) = masks.iter().map(|m| m.get(&stem)).collect::<Option<Vec<_>>>() else {
            log::warn!("no mask for {stem}, skipping");
            continue;
        };
        let image = load_grayscale(&image_path)?;
        let mut mask = load_mask(paths[0])?;
        for p in &paths[1..] {
            mask = combine(&mask, &load_mask(p)?)?;
        }
        if mask.dims() != (image.height(), image.width()) {
            return Err(Error::dimension((image.height(), image.width()), mask.dims()));
        }
        pairs.push(SegmentationPair {
            name: stem,
            image: resize(&equalize_histogram(&image)?, size.0, size.1)?,
            mask: resize_mask(&mask, size.0, size.1)?,
        });
    }
    Ok(pairs)
}
