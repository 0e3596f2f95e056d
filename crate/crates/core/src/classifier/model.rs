use lednet_nn::{Gradients, Graph, ParamId, ParamStore, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ClsModelConfig;
use crate::dataset::{CleanLabelVector, LABEL_COUNT};
use crate::grid::ImageGrid;
use crate::layers::{batch_tensor, open_sigmoid, Conv, Norm, NormUpdate};
use crate::metrics::BCE_EPS;
use crate::{Error, Result};

/// Pooled backbone output.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// Per-observation probabilities, each strictly inside `(0, 1)`.
pub type Scores = [f64; LABEL_COUNT];

/// Anything that maps a batch of images to per-observation probabilities.
pub trait MultilabelPredictor {
    fn predict_batch(&self, images: &[&ImageGrid]) -> Result<Vec<Scores>>;
}

#[derive(Clone, Debug)]
struct DenseLayer {
    norm1: Norm,
    conv1: Conv,
    norm2: Norm,
    conv2: Conv,
}

#[derive(Clone, Debug)]
struct Transition {
    norm: Norm,
    conv: Conv,
}

#[derive(Clone, Debug)]
struct Layers {
    stem: Conv,
    stem_norm: Norm,
    blocks: Vec<Vec<DenseLayer>>,
    transitions: Vec<Transition>,
    final_norm: Norm,
    fc_w: ParamId,
    fc_b: ParamId,
}

/// Densely connected convolutional classifier with a sigmoid per
/// observation.
#[derive(Clone, Debug)]
pub struct Classifier {
    pub(crate) config: ClsModelConfig,
    pub(crate) params: ParamStore,
    layers: Layers,
}

pub fn build_classifier(config: &ClsModelConfig, seed: u64) -> Result<Classifier> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let stem = Conv::new(
        &mut store,
        "stem",
        3,
        config.init_features,
        config.stem.kernel,
        config.stem.stride,
        false,
        &mut rng,
    );
    let stem_norm = Norm::new(&mut store, "stem.norm", config.init_features);

    let bottleneck = config.bottleneck_factor * config.growth_rate;
    let channels = config.block_channels();
    let mut blocks = Vec::new();
    let mut transitions = Vec::new();
    for (b, (&n_layers, &(c_in, c_out))) in config.block_layers.iter().zip(&channels).enumerate() {
        let mut layers = Vec::new();
        for l in 0..n_layers {
            let c = c_in + l * config.growth_rate;
            let name = format!("block{b}.layer{l}");
            layers.push(DenseLayer {
                norm1: Norm::new(&mut store, &format!("{name}.norm1"), c),
                conv1: Conv::new(
                    &mut store,
                    &format!("{name}.conv1"),
                    c,
                    bottleneck,
                    1,
                    1,
                    false,
                    &mut rng,
                ),
                norm2: Norm::new(&mut store, &format!("{name}.norm2"), bottleneck),
                conv2: Conv::new(
                    &mut store,
                    &format!("{name}.conv2"),
                    bottleneck,
                    config.growth_rate,
                    3,
                    1,
                    false,
                    &mut rng,
                ),
            });
        }
        blocks.push(layers);
        if b + 1 < channels.len() {
            transitions.push(Transition {
                norm: Norm::new(&mut store, &format!("trans{b}.norm"), c_out),
                conv: Conv::new(
                    &mut store,
                    &format!("trans{b}.conv"),
                    c_out,
                    c_out / 2,
                    1,
                    1,
                    false,
                    &mut rng,
                ),
            });
        }
    }
    let f = config.feature_len();
    let final_norm = Norm::new(&mut store, "final.norm", f);
    let fc_w = store.add(
        "fc.w",
        Tensor::randn(&[LABEL_COUNT, f], (1.0 / f as f64).sqrt(), &mut rng),
    );
    let fc_b = store.add("fc.b", Tensor::zeros(&[LABEL_COUNT]));
    Ok(Classifier {
        config: config.clone(),
        params: store,
        layers: Layers {
            stem,
            stem_norm,
            blocks,
            transitions,
            final_norm,
            fc_w,
            fc_b,
        },
    })
}

impl Classifier {
    pub fn config(&self) -> &ClsModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Number of dense layers in each block, read off the built network.
    pub fn block_layer_counts(&self) -> Vec<usize> {
        self.layers.blocks.iter().map(Vec::len).collect()
    }

    pub(crate) fn input_dims(&self) -> (usize, usize, usize) {
        (3, self.config.input_size.0, self.config.input_size.1)
    }

    fn norm_relu(g: &mut Graph<'_>, n: &Norm, x: Var, updates: &mut Option<Vec<NormUpdate>>) -> Result<Var> {
        let y = n.apply(g, x, updates.as_mut())?;
        Ok(g.relu(y))
    }

    /// Pooled features `[n, feature_len]`. With `updates` set, normalization
    /// uses batch statistics and records them there.
    pub(crate) fn features(&self, g: &mut Graph<'_>, x: Var, updates: &mut Option<Vec<NormUpdate>>) -> Result<Var> {
        let l = &self.layers;
        let mut h = l.stem.apply(g, x)?;
        h = Self::norm_relu(g, &l.stem_norm, h, updates)?;
        if self.config.stem.pool {
            h = g.max_pool(h, 3, 2, 1)?;
        }
        for (b, block) in l.blocks.iter().enumerate() {
            for layer in block {
                let y = Self::norm_relu(g, &layer.norm1, h, updates)?;
                let y = layer.conv1.apply(g, y)?;
                let y = Self::norm_relu(g, &layer.norm2, y, updates)?;
                let y = layer.conv2.apply(g, y)?;
                h = g.concat(&[h, y])?;
            }
            if let Some(t) = l.transitions.get(b) {
                let y = Self::norm_relu(g, &t.norm, h, updates)?;
                let y = t.conv.apply(g, y)?;
                h = g.avg_pool2(y)?;
            }
        }
        let h = Self::norm_relu(g, &l.final_norm, h, updates)?;
        Ok(g.global_avg_pool(h)?)
    }

    /// Logits `[n, 14]`.
    pub(crate) fn forward(&self, g: &mut Graph<'_>, x: Var, updates: &mut Option<Vec<NormUpdate>>) -> Result<Var> {
        let f = self.features(g, x, updates)?;
        let (w, b) = (g.param(self.layers.fc_w), g.param(self.layers.fc_b));
        Ok(g.linear(f, w, b)?)
    }

    pub(crate) fn input_tensor(&self, images: &[&ImageGrid]) -> Result<Tensor> {
        batch_tensor(images, self.input_dims())
    }

    /// Builds the loss graph for a batch; returns `(loss, logits)`.
    pub(crate) fn loss_graph(
        &self,
        g: &mut Graph<'_>,
        images: &[&ImageGrid],
        labels: &[CleanLabelVector],
        updates: &mut Option<Vec<NormUpdate>>,
    ) -> Result<(Var, Var)> {
        check_label_count(images.len(), labels.len())?;
        let x = self.input_tensor(images)?;
        let y: Vec<f64> = labels.iter().flat_map(|l| l.as_f64()).collect();
        let y = Tensor::new(vec![labels.len(), LABEL_COUNT], y)?;
        let x = g.input(x);
        let logits = self.forward(g, x, updates)?;
        let loss = g.bce_with_logits(logits, &y, BCE_EPS)?;
        Ok((loss, logits))
    }

    /// Mean BCE over a batch in inference mode.
    pub fn batch_loss(&self, images: &[&ImageGrid], labels: &[CleanLabelVector]) -> Result<f64> {
        let mut g = Graph::new(&self.params);
        let (loss, _) = self.loss_graph(&mut g, images, labels, &mut None)?;
        Ok(g.value(loss).item())
    }

    /// Mean BCE with normalization in training mode, as seen by the
    /// optimizer. Running statistics are left untouched.
    pub fn training_loss(&self, images: &[&ImageGrid], labels: &[CleanLabelVector]) -> Result<f64> {
        let mut g = Graph::new(&self.params);
        let (loss, _) = self.loss_graph(&mut g, images, labels, &mut Some(Vec::new()))?;
        Ok(g.value(loss).item())
    }

    /// Training-mode loss and the gradient of every trainable parameter.
    pub fn loss_and_gradients(&self, images: &[&ImageGrid], labels: &[CleanLabelVector]) -> Result<(f64, Gradients)> {
        let mut g = Graph::new(&self.params);
        let (loss, _) = self.loss_graph(&mut g, images, labels, &mut Some(Vec::new()))?;
        Ok((g.value(loss).item(), g.backward(loss)))
    }

    pub fn predict(&self, images: &[&ImageGrid]) -> Result<Vec<Scores>> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(self.config.batch_size) {
            let mut g = Graph::new(&self.params);
            let x = g.input(self.input_tensor(chunk)?);
            let logits = self.forward(&mut g, x, &mut None)?;
            for row in g.value(logits).data().chunks(LABEL_COUNT) {
                out.push(std::array::from_fn(|j| open_sigmoid(row[j])));
            }
        }
        Ok(out)
    }

    /// Batch statistics of every normalization layer on `images`.
    pub(crate) fn norm_statistics(&self, images: &[&ImageGrid]) -> Result<Vec<NormUpdate>> {
        let mut updates = Some(Vec::new());
        let mut g = Graph::new(&self.params);
        let x = g.input(self.input_tensor(images)?);
        self.features(&mut g, x, &mut updates)?;
        Ok(updates.unwrap_or_default())
    }

    pub fn extract_features(&self, image: &ImageGrid) -> Result<FeatureVector> {
        Ok(self.extract_features_batch(&[image])?.remove(0))
    }

    pub fn extract_features_batch(&self, images: &[&ImageGrid]) -> Result<Vec<FeatureVector>> {
        let mut out = Vec::with_capacity(images.len());
        let f = self.config.feature_len();
        for chunk in images.chunks(self.config.batch_size) {
            let mut g = Graph::new(&self.params);
            let x = g.input(self.input_tensor(chunk)?);
            let feats = self.features(&mut g, x, &mut None)?;
            out.extend(g.value(feats).data().chunks(f).map(|c| FeatureVector(c.to_vec())));
        }
        Ok(out)
    }
}

impl MultilabelPredictor for Classifier {
    fn predict_batch(&self, images: &[&ImageGrid]) -> Result<Vec<Scores>> {
        self.predict(images)
    }
}

pub(crate) fn check_label_count(images: usize, labels: usize) -> Result<()> {
    if images != labels {
        return Err(Error::dimension(images, labels));
    }
    Ok(())
}
