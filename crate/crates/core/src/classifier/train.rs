use std::path::Path;

use lednet_nn::{Adam, AdamConfig, Graph};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::ClsModelConfig;
use super::model::{build_classifier, Classifier, FeatureVector, MultilabelPredictor, Scores};
use crate::checkpoint::Checkpoint;
use crate::dataset::split::{Partition, SplitAssignment};
use crate::dataset::transform::random_hflip;
use crate::dataset::{CleanLabelVector, LABEL_COUNT};
use crate::grid::ImageGrid;
use crate::history::{MetricsRecord, Phase};
use crate::layers::{apply_norm_updates, open_sigmoid, set_norm_statistics};
use crate::metrics::{bce_loss, rounded_accuracy, ScorePair};
use crate::{Error, Result};

pub const CHECKPOINT_KIND: &str = "classifier";

/// Random-access labelled images. Implementations may load lazily.
pub trait SampleSource: Sync {
    fn len(&self) -> usize;

    fn load(&self, index: usize) -> Result<(ImageGrid, CleanLabelVector)>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl SampleSource for [(ImageGrid, CleanLabelVector)] {
    fn len(&self) -> usize {
        <[_]>::len(self)
    }

    fn load(&self, index: usize) -> Result<(ImageGrid, CleanLabelVector)> {
        self.get(index)
            .cloned()
            .ok_or_else(|| Error::Data(format!("sample {index} out of range")))
    }
}

impl SampleSource for Vec<(ImageGrid, CleanLabelVector)> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }

    fn load(&self, index: usize) -> Result<(ImageGrid, CleanLabelVector)> {
        self.as_slice().load(index)
    }
}

/// View of selected indices of another source.
pub struct Subset<'a> {
    pub source: &'a dyn SampleSource,
    pub indices: &'a [usize],
}

impl SampleSource for Subset<'_> {
    fn len(&self) -> usize {
        self.indices.len()
    }

    fn load(&self, index: usize) -> Result<(ImageGrid, CleanLabelVector)> {
        let &i = self
            .indices
            .get(index)
            .ok_or_else(|| Error::Data(format!("sample {index} out of range")))?;
        self.source.load(i)
    }
}

/// Loads in parallel, returning samples in index order.
fn load_batch(source: &dyn SampleSource, indices: &[usize]) -> Result<Vec<(ImageGrid, CleanLabelVector)>> {
    indices.par_iter().map(|&i| source.load(i)).collect()
}

/// Inference statistics from a full pass over the training partition in
/// index order. The moving average lags badly when weights change quickly.
fn recalibrate(model: &mut Classifier, data: &dyn SampleSource, train_idx: &[usize], batch_size: usize) -> Result<()> {
    let mut order = train_idx.to_vec();
    order.sort_unstable();
    let mut passes = Vec::new();
    for chunk in order.chunks(batch_size) {
        let batch = load_batch(data, chunk)?;
        let images: Vec<&ImageGrid> = batch.iter().map(|s| &s.0).collect();
        passes.push((images.len(), model.norm_statistics(&images)?));
    }
    set_norm_statistics(&mut model.params, &passes);
    Ok(())
}

/// Mean BCE and mean rounded accuracy over every sample; no parameter
/// updates. The record is tagged as a test-phase row with epoch 0.
pub fn evaluate(
    predictor: &dyn MultilabelPredictor,
    data: &dyn SampleSource,
    batch_size: usize,
) -> Result<MetricsRecord> {
    if data.is_empty() {
        return Err(Error::Data("nothing to evaluate".into()));
    }
    let all: Vec<usize> = (0..data.len()).collect();
    let (mut loss, mut accuracy) = (0.0, 0.0);
    for chunk in all.chunks(batch_size.max(1)) {
        let batch = load_batch(data, chunk)?;
        let images: Vec<&ImageGrid> = batch.iter().map(|s| &s.0).collect();
        let scores = predictor.predict_batch(&images)?;
        if scores.len() != batch.len() {
            return Err(Error::dimension(batch.len(), scores.len()));
        }
        for (p, (_, label)) in scores.iter().zip(&batch) {
            let target = label.as_f64();
            let pair = ScorePair::new(p, &target)?;
            loss += bce_loss(&pair);
            accuracy += rounded_accuracy(&pair);
        }
    }
    let n = data.len() as f64;
    Ok(MetricsRecord::new(0, Phase::Test, loss / n, accuracy / n))
}

/// Trained classifier with its per-epoch history.
#[derive(Clone, Debug)]
pub struct ClsCheckpoint {
    pub model: Classifier,
    pub history: Vec<MetricsRecord>,
}

impl ClsCheckpoint {
    pub fn config(&self) -> &ClsModelConfig {
        &self.model.config
    }

    pub fn extract_features(&self, image: &ImageGrid) -> Result<FeatureVector> {
        self.model.extract_features(image)
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
        let config = ClsModelConfig::from_checkpoint(archive)?;
        let mut model = build_classifier(&config, 0)?;
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

impl MultilabelPredictor for ClsCheckpoint {
    fn predict_batch(&self, images: &[&ImageGrid]) -> Result<Vec<Scores>> {
        self.model.predict(images)
    }
}

/// Runs `config.epochs` epochs over the split's train partition with Adam
/// on multi-label BCE, each followed by a validation pass. Training images
/// are flipped horizontally with `config.flip_probability`; flip decisions
/// come from the seeded controller stream in sample order, so results do
/// not depend on how loading is scheduled.
pub fn train_classifier(
    mut model: Classifier,
    data: &dyn SampleSource,
    config: &ClsModelConfig,
    split: &SplitAssignment,
    seed: u64,
) -> Result<ClsCheckpoint> {
    config.validate()?;
    if !config.same_architecture(&model.config) {
        return Err(Error::Config(
            "training config describes a different architecture than the model".into(),
        ));
    }
    if split.len() != data.len() {
        return Err(Error::dimension(split.len(), data.len()));
    }
    let mut train_idx = split.indices(Partition::Train).to_vec();
    let val_idx = split.indices(Partition::Val);
    if train_idx.is_empty() {
        return Err(Error::Data("empty training partition".into()));
    }
    if val_idx.is_empty() {
        return Err(Error::Data("empty validation partition".into()));
    }
    model.config = config.clone();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut adam = Adam::new(AdamConfig::with_learning_rate(config.learning_rate), &model.params);
    let mut history = Vec::with_capacity(2 * config.epochs);
    for epoch in 1..=config.epochs {
        train_idx.shuffle(&mut rng);
        let (mut loss_sum, mut acc_sum) = (0.0, 0.0);
        for (b, batch_idx) in train_idx.chunks(config.batch_size).enumerate() {
            let mut batch = load_batch(data, batch_idx)?;
            for sample in batch.iter_mut() {
                let (img, label) = random_hflip(&sample.0, &sample.1, config.flip_probability, &mut rng)?;
                *sample = (img, label);
            }
            let images: Vec<&ImageGrid> = batch.iter().map(|s| &s.0).collect();
            let labels: Vec<CleanLabelVector> = batch.iter().map(|s| s.1).collect();
            let mut updates = Some(Vec::new());
            let grads = {
                let mut g = Graph::new(&model.params);
                let (loss, logits) = model.loss_graph(&mut g, &images, &labels, &mut updates)?;
                let value = g.value(loss).item();
                if !value.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        epoch,
                        batch: b + 1,
                        phase: "train",
                    });
                }
                loss_sum += value * labels.len() as f64;
                for (row, label) in g.value(logits).data().chunks(LABEL_COUNT).zip(&labels) {
                    let p: Vec<f64> = row.iter().map(|&z| open_sigmoid(z)).collect();
                    let target = label.as_f64();
                    acc_sum += rounded_accuracy(&ScorePair::new(&p, &target)?);
                }
                g.backward(loss)
            };
            adam.step(&mut model.params, &grads);
            apply_norm_updates(&mut model.params, updates.as_deref().unwrap_or_default());
        }
        recalibrate(&mut model, data, &train_idx, config.batch_size)?;
        let n = train_idx.len() as f64;
        history.push(MetricsRecord::new(epoch, Phase::Train, loss_sum / n, acc_sum / n));

        let val = evaluate(
            &model,
            &Subset {
                source: data,
                indices: val_idx,
            },
            config.batch_size,
        )?;
        if !val.loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                batch: 0,
                phase: "val",
            });
        }
        history.push(MetricsRecord {
            epoch,
            phase: Phase::Val,
            ..val
        });
        log::info!(
            "classifier epoch {epoch}: train loss {:.4} acc {:.4}, val loss {:.4} acc {:.4}",
            loss_sum / n,
            acc_sum / n,
            val.loss,
            val.accuracy
        );
    }
    Ok(ClsCheckpoint { model, history })
}
