//! U-Net style lung localizer: per-pixel lung probabilities from a
//! single-channel radiograph.

use std::path::Path;

use lednet_nn::{Adam, AdamConfig, Gradients, Graph, ParamStore, Tensor, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Checkpoint;
use crate::grid::{BinaryMask, ImageGrid, ProbabilityMap};
use crate::history::{MetricsRecord, Overlap, Phase};
use crate::layers::{batch_tensor, open_sigmoid, Conv};
use crate::mask_ops::binarize;
use crate::metrics::{dice, iou, BCE_EPS};
use crate::{Error, Result};

pub const CHECKPOINT_KIND: &str = "localizer";

#[derive(Clone, Debug, PartialEq)]
pub struct SegModelConfig {
    /// `(height, width)` in pixels.
    pub input_size: (usize, usize),
    /// Number of down/up-sampling stages.
    pub depth: usize,
    /// Feature count at the first stage; doubles per stage.
    pub base_channels: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for SegModelConfig {
    fn default() -> Self {
        Self {
            input_size: (256, 256),
            depth: 3,
            base_channels: 8,
            learning_rate: 1e-3,
            batch_size: 8,
            epochs: 10,
        }
    }
}

impl SegModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::Config("localizer depth must be at least 1".into()));
        }
        if self.base_channels == 0 {
            return Err(Error::Config("localizer base channel count must be positive".into()));
        }
        let factor = 1usize.checked_shl(self.depth as u32).unwrap_or(0);
        for (name, v) in [("height", self.input_size.0), ("width", self.input_size.1)] {
            if v == 0 || factor == 0 || v % factor != 0 {
                return Err(Error::Config(format!(
                    "input {name} {v} is not divisible by 2^{} = {factor}",
                    self.depth
                )));
            }
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        Ok(())
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        [
            ("height", self.input_size.0.to_string()),
            ("width", self.input_size.1.to_string()),
            ("depth", self.depth.to_string()),
            ("base_channels", self.base_channels.to_string()),
            ("learning_rate", format!("{:?}", self.learning_rate)),
            ("batch_size", self.batch_size.to_string()),
            ("epochs", self.epochs.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        let config = Self {
            input_size: (c.get_parsed("height")?, c.get_parsed("width")?),
            depth: c.get_parsed("depth")?,
            base_channels: c.get_parsed("base_channels")?,
            learning_rate: c.get_parsed("learning_rate")?,
            batch_size: c.get_parsed("batch_size")?,
            epochs: c.get_parsed("epochs")?,
        };
        config.validate()?;
        Ok(config)
    }

    fn same_architecture(&self, other: &Self) -> bool {
        (self.input_size, self.depth, self.base_channels) == (other.input_size, other.depth, other.base_channels)
    }
}

#[derive(Clone, Debug)]
struct DecoderStage {
    up: Conv,
    convs: [Conv; 2],
}

#[derive(Clone, Debug)]
struct Layers {
    encoder: Vec<[Conv; 2]>,
    bottleneck: [Conv; 2],
    /// Ordered deepest first.
    decoder: Vec<DecoderStage>,
    head: Conv,
}

/// Encoder-decoder with a skip connection from every encoder stage to the
/// decoder stage of the same resolution.
#[derive(Clone, Debug)]
pub struct SegModel {
    config: SegModelConfig,
    params: ParamStore,
    layers: Layers,
}

pub fn build_seg_model(config: &SegModelConfig, seed: u64) -> Result<SegModel> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let ch = |i: usize| config.base_channels << i;
    let mut conv = |store: &mut ParamStore, name: String, c_in, c_out, k| {
        Conv::new(store, &name, c_in, c_out, k, 1, true, &mut rng)
    };

    let mut encoder = Vec::new();
    let mut c_in = 1;
    for i in 0..config.depth {
        encoder.push([
            conv(&mut store, format!("enc{i}.0"), c_in, ch(i), 3),
            conv(&mut store, format!("enc{i}.1"), ch(i), ch(i), 3),
        ]);
        c_in = ch(i);
    }
    let d = config.depth;
    let bottleneck = [
        conv(&mut store, "mid.0".into(), ch(d - 1), ch(d), 3),
        conv(&mut store, "mid.1".into(), ch(d), ch(d), 3),
    ];
    let mut decoder = Vec::new();
    for i in (0..d).rev() {
        decoder.push(DecoderStage {
            up: conv(&mut store, format!("dec{i}.up"), ch(i + 1), ch(i), 3),
            convs: [
                conv(&mut store, format!("dec{i}.0"), 2 * ch(i), ch(i), 3),
                conv(&mut store, format!("dec{i}.1"), ch(i), ch(i), 3),
            ],
        });
    }
    let head = conv(&mut store, "head".into(), ch(0), 1, 1);
    Ok(SegModel {
        config: config.clone(),
        params: store,
        layers: Layers {
            encoder,
            bottleneck,
            decoder,
            head,
        },
    })
}

impl SegModel {
    pub fn config(&self) -> &SegModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn input_dims(&self) -> (usize, usize, usize) {
        (1, self.config.input_size.0, self.config.input_size.1)
    }

    /// Per-pixel logits `[n, 1, h, w]`.
    pub(crate) fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let conv_relu = |g: &mut Graph<'_>, c: &Conv, x: Var| -> Result<Var> {
            let y = c.apply(g, x)?;
            Ok(g.relu(y))
        };
        let mut skips = Vec::new();
        let mut h = x;
        for [a, b] in &self.layers.encoder {
            h = conv_relu(g, a, h)?;
            h = conv_relu(g, b, h)?;
            skips.push(h);
            h = g.max_pool(h, 2, 2, 0)?;
        }
        for c in &self.layers.bottleneck {
            h = conv_relu(g, c, h)?;
        }
        for stage in &self.layers.decoder {
            let up = g.upsample2(h)?;
            let up = conv_relu(g, &stage.up, up)?;
            let skip = skips.pop().expect("one skip per decoder stage");
            h = g.concat(&[skip, up])?;
            for c in &stage.convs {
                h = conv_relu(g, c, h)?;
            }
        }
        self.layers.head.apply(g, h)
    }

    /// Mean per-pixel BCE of the model on a batch; used by training and by
    /// gradient checks.
    pub fn batch_loss(&self, images: &[&ImageGrid], masks: &[&BinaryMask]) -> Result<f64> {
        let mut g = Graph::new(&self.params);
        let (loss, _) = self.loss_graph(&mut g, images, masks)?;
        Ok(g.value(loss).item())
    }

    /// Loss and the gradient of every parameter.
    pub fn loss_and_gradients(&self, images: &[&ImageGrid], masks: &[&BinaryMask]) -> Result<(f64, Gradients)> {
        let mut g = Graph::new(&self.params);
        let (loss, _) = self.loss_graph(&mut g, images, masks)?;
        Ok((g.value(loss).item(), g.backward(loss)))
    }

    /// Builds the loss graph; returns `(loss, logits)`.
    pub(crate) fn loss_graph(
        &self,
        g: &mut Graph<'_>,
        images: &[&ImageGrid],
        masks: &[&BinaryMask],
    ) -> Result<(Var, Var)> {
        let dims = self.input_dims();
        let grays: Vec<ImageGrid> = images.iter().map(|i| as_gray(i)).collect();
        let x = batch_tensor(&grays.iter().collect::<Vec<_>>(), dims)?;
        let mut target = Vec::with_capacity(x.numel());
        for m in masks {
            if m.dims() != (dims.1, dims.2) {
                return Err(Error::dimension((dims.1, dims.2), m.dims()));
            }
            target.extend(m.as_f64());
        }
        let target = Tensor::new(vec![masks.len(), 1, dims.1, dims.2], target)?;
        let x = g.input(x);
        let logits = self.forward(g, x)?;
        let loss = g.bce_with_logits(logits, &target, BCE_EPS)?;
        Ok((loss, logits))
    }

    /// Sigmoid probability maps, strictly inside `(0, 1)`.
    pub fn predict_probabilities(&self, images: &[ImageGrid]) -> Result<Vec<ProbabilityMap>> {
        let dims = self.input_dims();
        for img in images {
            if (img.height(), img.width()) != (dims.1, dims.2) {
                return Err(Error::dimension((dims.1, dims.2), (img.height(), img.width())));
            }
        }
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(self.config.batch_size.max(1)) {
            let grays: Vec<ImageGrid> = chunk.iter().map(|i| as_gray(&i)).collect();
            let x = batch_tensor(&grays.iter().collect::<Vec<_>>(), dims)?;
            let mut g = Graph::new(&self.params);
            let x = g.input(x);
            let logits = self.forward(&mut g, x)?;
            let plane = dims.1 * dims.2;
            for z in g.value(logits).data().chunks(plane) {
                out.push(ProbabilityMap::new(
                    dims.1,
                    dims.2,
                    z.iter().map(|&v| open_sigmoid(v)).collect(),
                )?);
            }
        }
        Ok(out)
    }

    pub fn predict_masks(&self, images: &[ImageGrid], threshold: f64) -> Result<Vec<BinaryMask>> {
        self.predict_probabilities(images)?
            .iter()
            .map(|p| binarize(p, threshold))
            .collect()
    }
}

fn as_gray(img: &&ImageGrid) -> ImageGrid {
    if img.channels() == 1 {
        (*img).clone()
    } else {
        img.to_grayscale()
    }
}

/// Trained localizer with its per-epoch history.
#[derive(Clone, Debug)]
pub struct SegCheckpoint {
    pub model: SegModel,
    pub history: Vec<MetricsRecord>,
}

impl SegCheckpoint {
    pub fn config(&self) -> &SegModelConfig {
        &self.model.config
    }

    pub fn predict_masks(&self, images: &[ImageGrid], threshold: f64) -> Result<Vec<BinaryMask>> {
        self.model.predict_masks(images, threshold)
    }

    pub fn predict_probabilities(&self, images: &[ImageGrid]) -> Result<Vec<ProbabilityMap>> {
        self.model.predict_probabilities(images)
    }

    pub fn to_archive(&self) -> Checkpoint {
        Checkpoint {
            kind: CHECKPOINT_KIND.into(),
            config: self.model.config.to_pairs(),
            history: self.history.clone(),
            weights: self.model.params.to_bytes(),
        }
    }

    pub fn from_archive(archive: &Checkpoint) -> Result<Self> {
        archive.expect_kind(CHECKPOINT_KIND)?;
        let config = SegModelConfig::from_checkpoint(archive)?;
        let mut model = build_seg_model(&config, 0)?;
        model.params.load_bytes(&archive.weights)?;
        Ok(Self {
            model,
            history: archive.history.clone(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_archive().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_archive(&Checkpoint::load(path)?)
    }
}

#[derive(Default)]
struct PhaseTotals {
    samples: usize,
    loss: f64,
    accuracy: f64,
    iou: f64,
    dice: f64,
}

impl PhaseTotals {
    fn add_batch(&mut self, loss: f64, logits: &Tensor, masks: &[&BinaryMask]) -> Result<()> {
        let n = masks.len();
        self.samples += n;
        self.loss += loss * n as f64;
        let plane = logits.numel() / n.max(1);
        for (z, m) in logits.data().chunks(plane).zip(masks) {
            let pred = BinaryMask::from_fn(m.height(), m.width(), |y, x| z[y * m.width() + x] >= 0.0);
            let agree = pred.data().iter().zip(m.data()).filter(|(a, b)| a == b).count();
            self.accuracy += agree as f64 / plane as f64;
            self.iou += iou(&pred, m)?;
            self.dice += dice(&pred, m)?;
        }
        Ok(())
    }

    fn record(&self, epoch: usize, phase: Phase) -> MetricsRecord {
        let n = self.samples.max(1) as f64;
        MetricsRecord {
            epoch,
            phase,
            loss: self.loss / n,
            accuracy: self.accuracy / n,
            overlap: Some(Overlap {
                iou: self.iou / n,
                dice: self.dice / n,
            }),
        }
    }
}

/// Holds out `val_fraction` of the pairs after a seeded shuffle, then runs
/// `config.epochs` epochs of Adam on per-pixel BCE. Each epoch records a
/// train row (running metrics over the updates) and a val row.
pub fn train_localizer(
    mut model: SegModel,
    data: &[(ImageGrid, BinaryMask)],
    config: &SegModelConfig,
    val_fraction: f64,
    seed: u64,
) -> Result<SegCheckpoint> {
    config.validate()?;
    if !config.same_architecture(&model.config) {
        return Err(Error::Config(
            "training config describes a different architecture than the model".into(),
        ));
    }
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::Parameter(format!(
            "validation fraction {val_fraction} outside (0, 1)"
        )));
    }
    if data.is_empty() {
        return Err(Error::Data("no segmentation pairs to train on".into()));
    }
    if data.len() < 2 {
        return Err(Error::Data(
            "need at least two pairs to hold out a validation set".into(),
        ));
    }
    model.config = config.clone();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng);
    let n_val = ((data.len() as f64 * val_fraction).round() as usize).clamp(1, data.len() - 1);
    let mut train_idx = order.split_off(n_val);
    let val_idx = order;

    let mut adam = Adam::new(AdamConfig::with_learning_rate(config.learning_rate), &model.params);
    let mut history = Vec::with_capacity(2 * config.epochs);
    for epoch in 1..=config.epochs {
        train_idx.shuffle(&mut rng);
        let mut totals = PhaseTotals::default();
        for (b, batch) in train_idx.chunks(config.batch_size).enumerate() {
            let images: Vec<&ImageGrid> = batch.iter().map(|&i| &data[i].0).collect();
            let masks: Vec<&BinaryMask> = batch.iter().map(|&i| &data[i].1).collect();
            let grads = {
                let mut g = Graph::new(&model.params);
                let (loss, logits) = model.loss_graph(&mut g, &images, &masks)?;
                let value = g.value(loss).item();
                if !value.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        epoch,
                        batch: b + 1,
                        phase: "train",
                    });
                }
                totals.add_batch(value, g.value(logits), &masks)?;
                g.backward(loss)
            };
            adam.step(&mut model.params, &grads);
        }
        history.push(totals.record(epoch, Phase::Train));
        history.push(evaluate_pairs(&model, data, &val_idx, epoch)?.record(epoch, Phase::Val));
        log::info!(
            "localizer epoch {epoch}: train loss {:.4}, val loss {:.4}",
            history[history.len() - 2].loss,
            history[history.len() - 1].loss
        );
    }
    Ok(SegCheckpoint { model, history })
}

fn evaluate_pairs(
    model: &SegModel,
    data: &[(ImageGrid, BinaryMask)],
    idx: &[usize],
    epoch: usize,
) -> Result<PhaseTotals> {
    let mut totals = PhaseTotals::default();
    for (b, batch) in idx.chunks(model.config.batch_size).enumerate() {
        let images: Vec<&ImageGrid> = batch.iter().map(|&i| &data[i].0).collect();
        let masks: Vec<&BinaryMask> = batch.iter().map(|&i| &data[i].1).collect();
        let mut g = Graph::new(&model.params);
        let (loss, logits) = model.loss_graph(&mut g, &images, &masks)?;
        let value = g.value(loss).item();
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                batch: b + 1,
                phase: "val",
            });
        }
        totals.add_batch(value, g.value(logits), &masks)?;
    }
    Ok(totals)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::synthetic::generate_synthetic_pair;
    use crate::history::history_to_csv;

    fn tiny_config() -> SegModelConfig {
        SegModelConfig {
            input_size: (32, 32),
            depth: 2,
            base_channels: 4,
            batch_size: 4,
            epochs: 2,
            ..SegModelConfig::default()
        }
    }

    fn pairs(n: usize, size: (usize, usize)) -> Vec<(ImageGrid, BinaryMask)> {
        (0..n as u64)
            .map(|s| generate_synthetic_pair(s, size).unwrap())
            .collect()
    }

    #[test]
    fn output_shape_and_range() {
        let config = SegModelConfig {
            input_size: (64, 64),
            ..SegModelConfig::default()
        };
        let model = build_seg_model(&config, 1).unwrap();
        let img = ImageGrid::from_fn(1, 64, 64, |_, y, x| ((y * x) % 7) as f32 / 6.0);
        let probs = model.predict_probabilities(&[img]).unwrap();
        assert_eq!((probs[0].height, probs[0].width), (64, 64));
        assert!(probs[0].values.iter().all(|&p| p > 0.0 && p < 1.0));
    }

    #[test]
    fn same_seed_same_weights() {
        let a = build_seg_model(&tiny_config(), 9).unwrap();
        let b = build_seg_model(&tiny_config(), 9).unwrap();
        let c = build_seg_model(&tiny_config(), 10).unwrap();
        assert_eq!(a.params(), b.params());
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn indivisible_size_names_the_dimension() {
        let config = SegModelConfig {
            input_size: (40, 48),
            depth: 4,
            ..SegModelConfig::default()
        };
        match build_seg_model(&config, 0) {
            Err(Error::Config(msg)) => assert!(msg.contains("height 40") && msg.contains("16"), "{msg}"),
            other => panic!("{other:?}"),
        }
        // 48 = 3 * 16 halves cleanly four times.
        let config = SegModelConfig {
            input_size: (48, 48),
            depth: 4,
            ..SegModelConfig::default()
        };
        assert!(config.validate().is_ok());
        let config = SegModelConfig {
            input_size: (64, 36),
            depth: 3,
            ..SegModelConfig::default()
        };
        let msg = build_seg_model(&config, 0).unwrap_err().to_string();
        assert!(msg.contains("width 36"), "{msg}");
    }

    #[test]
    fn invalid_hyperparameters() {
        for bad in [
            SegModelConfig {
                batch_size: 0,
                ..tiny_config()
            },
            SegModelConfig {
                epochs: 0,
                ..tiny_config()
            },
            SegModelConfig {
                learning_rate: 0.0,
                ..tiny_config()
            },
            SegModelConfig {
                learning_rate: f64::NAN,
                ..tiny_config()
            },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))));
        }
    }

    #[test]
    fn single_step_descends() {
        let config = SegModelConfig {
            learning_rate: 1e-4,
            ..tiny_config()
        };
        let mut model = build_seg_model(&config, 3).unwrap();
        let (img, mask) = generate_synthetic_pair(0, (32, 32)).unwrap();
        let before = model.batch_loss(&[&img], &[&mask]).unwrap();
        let grads = {
            let mut g = Graph::new(model.params());
            let (loss, _) = model.loss_graph(&mut g, &[&img], &[&mask]).unwrap();
            g.backward(loss)
        };
        Adam::new(AdamConfig::with_learning_rate(1e-4), model.params()).step(model.params_mut(), &grads);
        let after = model.batch_loss(&[&img], &[&mask]).unwrap();
        assert!(after < before, "{after} !< {before}");
    }

    #[test]
    fn history_has_two_rows_per_epoch_and_training_is_deterministic() {
        let data = pairs(10, (32, 32));
        let config = tiny_config();
        let run = || train_localizer(build_seg_model(&config, 4).unwrap(), &data, &config, 0.2, 4).unwrap();
        let a = run();
        let b = run();
        assert_eq!(a.history.len(), 2 * config.epochs);
        let phases: Vec<Phase> = a.history.iter().map(|r| r.phase).collect();
        assert_eq!(phases, [Phase::Train, Phase::Val, Phase::Train, Phase::Val]);
        let (la, lb) = (a.history.last().unwrap().loss, b.history.last().unwrap().loss);
        assert!((la - lb).abs() <= 1e-6);
        assert_eq!(a.model.params(), b.model.params());
    }

    #[test]
    fn training_rejects_bad_input() {
        let config = tiny_config();
        let model = || build_seg_model(&config, 0).unwrap();
        assert!(matches!(
            train_localizer(model(), &[], &config, 0.2, 0),
            Err(Error::Data(_))
        ));
        let data = pairs(4, (32, 32));
        assert!(train_localizer(model(), &data, &config, 1.0, 0).is_err());
        let wrong = pairs(4, (64, 64));
        assert!(matches!(
            train_localizer(model(), &wrong, &config, 0.5, 0),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn checkpoint_round_trip_predicts_the_same() {
        let data = pairs(6, (32, 32));
        let config = SegModelConfig {
            epochs: 1,
            ..tiny_config()
        };
        let ckpt = train_localizer(build_seg_model(&config, 2).unwrap(), &data, &config, 0.3, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("loc.ckpt");
        ckpt.save(&path).unwrap();
        let back = SegCheckpoint::load(&path).unwrap();
        assert_eq!(back.config(), ckpt.config());
        // History is stored at CSV precision.
        assert_eq!(history_to_csv(&back.history, None), history_to_csv(&ckpt.history, None));
        let images: Vec<ImageGrid> = data.iter().map(|p| p.0.clone()).collect();
        let p0 = ckpt.predict_probabilities(&images).unwrap();
        let p1 = back.predict_probabilities(&images).unwrap();
        for (a, b) in p0.iter().zip(&p1) {
            for (x, y) in a.values.iter().zip(&b.values) {
                assert!((x - y).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn prediction_edge_cases() {
        let model = build_seg_model(&tiny_config(), 0).unwrap();
        assert!(model.predict_masks(&[], 0.5).unwrap().is_empty());
        let masks = model.predict_masks(&[ImageGrid::filled(1, 32, 32, 0.4)], 0.5).unwrap();
        assert!(masks[0].data().iter().all(|&v| v <= 1));
        match model.predict_masks(&[ImageGrid::filled(1, 16, 32, 0.4)], 0.5) {
            Err(Error::Dimension { left, right }) => {
                assert!(left.contains("32") && right.contains("16"));
            }
            other => panic!("{other:?}"),
        }
    }
}
