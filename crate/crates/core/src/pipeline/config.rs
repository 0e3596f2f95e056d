//! Flat `section.key=value` experiment configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::classifier::{parse_blocks, Backbone, ClsModelConfig};
use crate::history::Provenance;
use crate::localizer::SegModelConfig;
use crate::mask_ops::DEFAULT_THRESHOLD;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Paths {
    /// CheXpert-style manifest of the classification corpus.
    pub manifest: PathBuf,
    /// Root that manifest paths are relative to.
    pub image_root: PathBuf,
    /// Segmentation training images, matched to masks by file stem.
    pub seg_images: PathBuf,
    /// One or more mask directories; masks of the same stem are united.
    pub seg_masks: Vec<PathBuf>,
    pub mask_dir: PathBuf,
    pub overlay_dir: PathBuf,
    pub checkpoint_dir: PathBuf,
    pub report_dir: PathBuf,
}

/// Generated stand-in data, used instead of the files under `paths`.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSettings {
    pub enabled: bool,
    /// Image/mask pairs for localizer training.
    pub seg_pairs: usize,
    /// Records in the generated classification manifest.
    pub samples: usize,
    /// Side length of generated classification images.
    pub size: usize,
    pub positive_rate: f64,
    /// Label-independent markers drawn outside the lungs.
    pub outside_noise: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OverlaySettings {
    pub threshold: f64,
    pub retain_two: bool,
    pub mirror_fill: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    /// Directory relative paths resolve against; paths are hashed relative
    /// to it.
    pub base_dir: PathBuf,
    pub paths: Paths,
    pub seed: u64,
    pub synthetic: SyntheticSettings,
    pub localizer: SegModelConfig,
    /// Share of segmentation pairs held out for validation.
    pub val_fraction: f64,
    pub classifier: ClsModelConfig,
    pub overlay: OverlaySettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::with_base(Path::new("."))
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("bad value `{value}` for `{key}`: {e}")))
}

fn parse_size(key: &str, value: &str) -> Result<(usize, usize)> {
    let (h, w) = value
        .split_once('x')
        .ok_or_else(|| Error::Config(format!("`{key}` expects HEIGHTxWIDTH, got `{value}`")))?;
    Ok((parse_value(key, h.trim())?, parse_value(key, w.trim())?))
}

impl ExperimentConfig {
    /// Defaults with every path placed under `base`.
    pub fn with_base(base: &Path) -> Self {
        Self {
            base_dir: base.to_path_buf(),
            paths: Paths {
                manifest: base.join("data/manifest.csv"),
                image_root: base.join("data/images"),
                seg_images: base.join("data/segmentation/images"),
                seg_masks: vec![base.join("data/segmentation/masks")],
                mask_dir: base.join("out/masks"),
                overlay_dir: base.join("out/overlay"),
                checkpoint_dir: base.join("out/checkpoints"),
                report_dir: base.join("out/report"),
            },
            seed: 0,
            synthetic: SyntheticSettings {
                enabled: false,
                seg_pairs: 200,
                samples: 300,
                size: 64,
                positive_rate: 0.3,
                outside_noise: 3,
            },
            localizer: SegModelConfig::default(),
            val_fraction: 0.2,
            classifier: ClsModelConfig::dense_tiny(),
            overlay: OverlaySettings {
                threshold: DEFAULT_THRESHOLD,
                retain_two: true,
                mirror_fill: true,
            },
        }
    }

    /// Reads a config file. Relative paths resolve against the file's
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    /// Parses `key=value` lines; `#` starts a comment line. Unknown keys
    /// and repeated keys are errors. Setting `classifier.backbone` selects
    /// that preset before any other classifier key is applied.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                message: format!("expected key=value, got `{line}`"),
            })?;
            if entries.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("`{}` set twice", k.trim()),
                });
            }
        }

        let mut config = Self::with_base(base);
        if let Some(b) = entries.get("classifier.backbone") {
            config.classifier = match b.parse::<Backbone>()? {
                Backbone::Dense121 => ClsModelConfig::dense121(),
                Backbone::DenseTiny => ClsModelConfig::dense_tiny(),
            };
        }
        for (key, value) in &entries {
            config.set(key, value, base)?;
        }
        config.validate()?;
        Ok(config)
    }

    fn set(&mut self, key: &str, value: &str, base: &Path) -> Result<()> {
        let path = || base.join(value);
        let flag = |v: &str| parse_value::<bool>(key, v);
        let p = &mut self.paths;
        let s = &mut self.synthetic;
        let l = &mut self.localizer;
        let c = &mut self.classifier;
        match key {
            "paths.manifest" => p.manifest = path(),
            "paths.image_root" => p.image_root = path(),
            "paths.seg_images" => p.seg_images = path(),
            "paths.seg_masks" => p.seg_masks = value.split(',').map(|d| base.join(d.trim())).collect(),
            "paths.mask_dir" => p.mask_dir = path(),
            "paths.overlay_dir" => p.overlay_dir = path(),
            "paths.checkpoint_dir" => p.checkpoint_dir = path(),
            "paths.report_dir" => p.report_dir = path(),
            "seed" => self.seed = parse_value(key, value)?,
            "synthetic.enabled" => s.enabled = flag(value)?,
            "synthetic.seg_pairs" => s.seg_pairs = parse_value(key, value)?,
            "synthetic.samples" => s.samples = parse_value(key, value)?,
            "synthetic.size" => s.size = parse_value(key, value)?,
            "synthetic.positive_rate" => s.positive_rate = parse_value(key, value)?,
            "synthetic.outside_noise" => s.outside_noise = parse_value(key, value)?,
            "localizer.input_size" => l.input_size = parse_size(key, value)?,
            "localizer.depth" => l.depth = parse_value(key, value)?,
            "localizer.base_channels" => l.base_channels = parse_value(key, value)?,
            "localizer.learning_rate" => l.learning_rate = parse_value(key, value)?,
            "localizer.batch_size" => l.batch_size = parse_value(key, value)?,
            "localizer.epochs" => l.epochs = parse_value(key, value)?,
            "localizer.val_fraction" => self.val_fraction = parse_value(key, value)?,
            "classifier.backbone" => c.backbone = value.parse()?,
            "classifier.growth_rate" => c.growth_rate = parse_value(key, value)?,
            "classifier.block_layers" => c.block_layers = parse_blocks(value)?,
            "classifier.init_features" => c.init_features = parse_value(key, value)?,
            "classifier.bottleneck_factor" => c.bottleneck_factor = parse_value(key, value)?,
            "classifier.stem_kernel" => c.stem.kernel = parse_value(key, value)?,
            "classifier.stem_stride" => c.stem.stride = parse_value(key, value)?,
            "classifier.stem_pool" => c.stem.pool = flag(value)?,
            "classifier.input_size" => c.input_size = parse_size(key, value)?,
            "classifier.learning_rate" => c.learning_rate = parse_value(key, value)?,
            "classifier.batch_size" => c.batch_size = parse_value(key, value)?,
            "classifier.epochs" => c.epochs = parse_value(key, value)?,
            "classifier.flip_probability" => c.flip_probability = parse_value(key, value)?,
            "overlay.threshold" => self.overlay.threshold = parse_value(key, value)?,
            "overlay.retain_two" => self.overlay.retain_two = flag(value)?,
            "overlay.mirror_fill" => self.overlay.mirror_fill = flag(value)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.localizer.validate()?;
        self.classifier.validate()?;
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::Config(format!(
                "localizer.val_fraction {} outside (0, 1)",
                self.val_fraction
            )));
        }
        if !(self.overlay.threshold > 0.0 && self.overlay.threshold < 1.0) {
            return Err(Error::Config(format!(
                "overlay.threshold {} outside (0, 1)",
                self.overlay.threshold
            )));
        }
        if !(0.0..=1.0).contains(&self.synthetic.positive_rate) {
            return Err(Error::Config(format!(
                "synthetic.positive_rate {} outside [0, 1]",
                self.synthetic.positive_rate
            )));
        }
        if self.paths.seg_masks.is_empty() {
            return Err(Error::Config("paths.seg_masks lists no directory".into()));
        }
        Ok(())
    }

    /// Every setting except the seed, one `key=value` per line in key order.
    /// Paths are rendered relative to the base directory, so relocating a
    /// whole experiment tree keeps the hash.
    pub fn canonical(&self) -> String {
        let p = &self.paths;
        let s = &self.synthetic;
        let show = |p: &Path| p.strip_prefix(&self.base_dir).unwrap_or(p).display().to_string();
        let mut pairs: Vec<(String, String)> = vec![
            ("paths.manifest".into(), show(&p.manifest)),
            ("paths.image_root".into(), show(&p.image_root)),
            ("paths.seg_images".into(), show(&p.seg_images)),
            (
                "paths.seg_masks".into(),
                p.seg_masks.iter().map(|d| show(d)).collect::<Vec<_>>().join(","),
            ),
            ("paths.mask_dir".into(), show(&p.mask_dir)),
            ("paths.overlay_dir".into(), show(&p.overlay_dir)),
            ("paths.checkpoint_dir".into(), show(&p.checkpoint_dir)),
            ("paths.report_dir".into(), show(&p.report_dir)),
            ("synthetic.enabled".into(), s.enabled.to_string()),
            ("synthetic.seg_pairs".into(), s.seg_pairs.to_string()),
            ("synthetic.samples".into(), s.samples.to_string()),
            ("synthetic.size".into(), s.size.to_string()),
            ("synthetic.positive_rate".into(), format!("{:?}", s.positive_rate)),
            ("synthetic.outside_noise".into(), s.outside_noise.to_string()),
            ("localizer.val_fraction".into(), format!("{:?}", self.val_fraction)),
            ("overlay.threshold".into(), format!("{:?}", self.overlay.threshold)),
            ("overlay.retain_two".into(), self.overlay.retain_two.to_string()),
            ("overlay.mirror_fill".into(), self.overlay.mirror_fill.to_string()),
        ];
        for (k, v) in self.localizer.to_pairs() {
            pairs.push((format!("localizer.{k}"), v));
        }
        for (k, v) in self.classifier.to_pairs() {
            pairs.push((format!("classifier.{k}"), v));
        }
        pairs.sort();
        pairs.into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    /// First 16 hex digits of the SHA-256 of [`Self::canonical`].
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        hex::encode(digest)[..16].to_string()
    }

    pub fn provenance(&self) -> Provenance {
        Provenance {
            config_hash: self.hash(),
            seed: self.seed,
        }
    }
}
