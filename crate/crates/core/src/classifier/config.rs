use std::fmt;
use std::str::FromStr;

use crate::checkpoint::Checkpoint;
use crate::dataset::LABEL_COUNT;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Backbone {
    Dense121,
    DenseTiny,
}

impl fmt::Display for Backbone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Backbone::Dense121 => "dense-121",
            Backbone::DenseTiny => "dense-tiny",
        })
    }
}

impl FromStr for Backbone {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dense-121" => Ok(Backbone::Dense121),
            "dense-tiny" => Ok(Backbone::DenseTiny),
            other => Err(Error::Config(format!("unknown backbone `{other}`"))),
        }
    }
}

/// Stem convolution, optionally followed by a 3x3 stride-2 max pool.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Stem {
    pub kernel: usize,
    pub stride: usize,
    pub pool: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClsModelConfig {
    pub backbone: Backbone,
    pub growth_rate: usize,
    pub block_layers: Vec<usize>,
    /// Channels produced by the stem.
    pub init_features: usize,
    /// Bottleneck width of each dense layer, in multiples of the growth rate.
    pub bottleneck_factor: usize,
    pub stem: Stem,
    /// `(height, width)`; inputs always have three channels.
    pub input_size: (usize, usize),
    pub label_count: usize,
    /// Zero is allowed and leaves the weights untouched.
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Horizontal-flip probability for training samples.
    pub flip_probability: f64,
}

impl Default for ClsModelConfig {
    fn default() -> Self {
        Self::dense_tiny()
    }
}

impl ClsModelConfig {
    pub fn dense121() -> Self {
        Self {
            backbone: Backbone::Dense121,
            growth_rate: 32,
            block_layers: vec![6, 12, 24, 16],
            init_features: 64,
            bottleneck_factor: 4,
            stem: Stem {
                kernel: 7,
                stride: 2,
                pool: true,
            },
            input_size: (256, 256),
            label_count: LABEL_COUNT,
            learning_rate: 1e-4,
            batch_size: 50,
            epochs: 8,
            flip_probability: 0.5,
        }
    }

    pub fn dense_tiny() -> Self {
        Self {
            backbone: Backbone::DenseTiny,
            growth_rate: 8,
            block_layers: vec![2, 2, 2],
            init_features: 16,
            bottleneck_factor: 4,
            stem: Stem {
                kernel: 3,
                stride: 2,
                pool: false,
            },
            input_size: (64, 64),
            ..Self::dense121()
        }
    }

    /// Total spatial reduction from input to the last dense block.
    pub fn downsample_factor(&self) -> usize {
        let pool = if self.stem.pool { 2 } else { 1 };
        self.stem.stride * pool * (1 << self.block_layers.len().saturating_sub(1))
    }

    /// `(channels in, channels out)` of every dense block. Transitions halve
    /// the channel count between blocks.
    pub fn block_channels(&self) -> Vec<(usize, usize)> {
        let mut c = self.init_features;
        let mut out = Vec::with_capacity(self.block_layers.len());
        for (i, &layers) in self.block_layers.iter().enumerate() {
            let end = c + self.growth_rate * layers;
            out.push((c, end));
            c = if i + 1 < self.block_layers.len() { end / 2 } else { end };
        }
        out
    }

    /// Length of the pooled feature vector.
    pub fn feature_len(&self) -> usize {
        self.block_channels()
            .last()
            .map(|&(_, c)| c)
            .unwrap_or(self.init_features)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.backbone == Backbone::Dense121 && (self.block_layers != [6, 12, 24, 16] || self.growth_rate != 32) {
            return fail("dense-121 requires blocks (6, 12, 24, 16) with growth rate 32".into());
        }
        if self.block_layers.is_empty() || self.block_layers.contains(&0) {
            return fail(format!("invalid block layer counts {:?}", self.block_layers));
        }
        for (name, v) in [
            ("growth rate", self.growth_rate),
            ("initial feature count", self.init_features),
            ("bottleneck factor", self.bottleneck_factor),
            ("stem stride", self.stem.stride),
            ("batch size", self.batch_size),
            ("epochs", self.epochs),
        ] {
            if v == 0 {
                return fail(format!("{name} must be positive"));
            }
        }
        if self.stem.kernel % 2 == 0 {
            return fail(format!("stem kernel must be odd, got {}", self.stem.kernel));
        }
        if self.label_count != LABEL_COUNT {
            return fail(format!("label count must be {LABEL_COUNT}, got {}", self.label_count));
        }
        let f = self.downsample_factor();
        for (name, v) in [("height", self.input_size.0), ("width", self.input_size.1)] {
            if v == 0 || v % f != 0 {
                return fail(format!(
                    "input {name} {v} is not divisible by the backbone's reduction factor {f}"
                ));
            }
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return fail(format!(
                "learning rate must be non-negative, got {}",
                self.learning_rate
            ));
        }
        if !(0.0..=1.0).contains(&self.flip_probability) {
            return fail(format!("flip probability {} outside [0, 1]", self.flip_probability));
        }
        Ok(())
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let blocks: Vec<String> = self.block_layers.iter().map(usize::to_string).collect();
        [
            ("backbone", self.backbone.to_string()),
            ("growth_rate", self.growth_rate.to_string()),
            ("block_layers", blocks.join("-")),
            ("init_features", self.init_features.to_string()),
            ("bottleneck_factor", self.bottleneck_factor.to_string()),
            ("stem_kernel", self.stem.kernel.to_string()),
            ("stem_stride", self.stem.stride.to_string()),
            ("stem_pool", self.stem.pool.to_string()),
            ("height", self.input_size.0.to_string()),
            ("width", self.input_size.1.to_string()),
            ("label_count", self.label_count.to_string()),
            ("learning_rate", format!("{:?}", self.learning_rate)),
            ("batch_size", self.batch_size.to_string()),
            ("epochs", self.epochs.to_string()),
            ("flip_probability", format!("{:?}", self.flip_probability)),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    pub(crate) fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        let config = Self {
            backbone: c.get_parsed("backbone")?,
            growth_rate: c.get_parsed("growth_rate")?,
            block_layers: parse_blocks(c.get("block_layers")?)?,
            init_features: c.get_parsed("init_features")?,
            bottleneck_factor: c.get_parsed("bottleneck_factor")?,
            stem: Stem {
                kernel: c.get_parsed("stem_kernel")?,
                stride: c.get_parsed("stem_stride")?,
                pool: c.get_parsed("stem_pool")?,
            },
            input_size: (c.get_parsed("height")?, c.get_parsed("width")?),
            label_count: c.get_parsed("label_count")?,
            learning_rate: c.get_parsed("learning_rate")?,
            batch_size: c.get_parsed("batch_size")?,
            epochs: c.get_parsed("epochs")?,
            flip_probability: c.get_parsed("flip_probability")?,
        };
        config.validate()?;
        Ok(config)
    }

    pub(crate) fn same_architecture(&self, other: &Self) -> bool {
        self.backbone == other.backbone
            && self.growth_rate == other.growth_rate
            && self.block_layers == other.block_layers
            && self.init_features == other.init_features
            && self.bottleneck_factor == other.bottleneck_factor
            && self.stem == other.stem
            && self.input_size == other.input_size
            && self.label_count == other.label_count
    }
}

/// Parses `6-12-24-16` style block lists.
pub fn parse_blocks(s: &str) -> Result<Vec<usize>> {
    s.split('-')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .map_err(|e| Error::Config(format!("bad block layer count `{t}` in `{s}`: {e}")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense121_channel_arithmetic() {
        let c = ClsModelConfig::dense121();
        assert_eq!(c.block_layers, [6, 12, 24, 16]);
        // 64 + 6*32 = 256 -> 128; 128 + 12*32 = 512 -> 256;
        // 256 + 24*32 = 1024 -> 512; 512 + 16*32 = 1024.
        assert_eq!(c.block_channels(), [(64, 256), (128, 512), (256, 1024), (512, 1024)]);
        assert_eq!(c.feature_len(), 1024);
        assert_eq!(c.downsample_factor(), 32);
        c.validate().unwrap();
    }

    #[test]
    fn tiny_preset() {
        let c = ClsModelConfig::dense_tiny();
        assert_eq!(c.block_channels(), [(16, 32), (16, 32), (16, 32)]);
        assert_eq!(c.feature_len(), 32);
        c.validate().unwrap();
    }

    #[test]
    fn invalid_specs() {
        let bad = [
            ClsModelConfig {
                block_layers: vec![],
                ..ClsModelConfig::dense_tiny()
            },
            ClsModelConfig {
                block_layers: vec![2, 0],
                ..ClsModelConfig::dense_tiny()
            },
            ClsModelConfig {
                block_layers: vec![6, 12],
                ..ClsModelConfig::dense121()
            },
            ClsModelConfig {
                label_count: 13,
                ..ClsModelConfig::dense_tiny()
            },
            ClsModelConfig {
                input_size: (60, 64),
                ..ClsModelConfig::dense_tiny()
            },
            ClsModelConfig {
                growth_rate: 0,
                ..ClsModelConfig::dense_tiny()
            },
            ClsModelConfig {
                flip_probability: 2.0,
                ..ClsModelConfig::dense_tiny()
            },
            ClsModelConfig {
                learning_rate: -1.0,
                ..ClsModelConfig::dense_tiny()
            },
        ];
        for c in bad {
            assert!(matches!(c.validate(), Err(Error::Config(_))), "{c:?}");
        }
    }

    #[test]
    fn block_list_parsing() {
        assert_eq!(parse_blocks("6-12-24-16").unwrap(), [6, 12, 24, 16]);
        assert!(parse_blocks("6-x").is_err());
        assert_eq!("dense-121".parse::<Backbone>().unwrap(), Backbone::Dense121);
        assert!("resnet".parse::<Backbone>().is_err());
    }
}
