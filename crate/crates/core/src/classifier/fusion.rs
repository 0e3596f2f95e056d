//! Joint prediction from the features of an original image and of its
//! lung overlay.

use lednet_nn::{Adam, AdamConfig, Graph, ParamStore, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::model::{FeatureVector, Scores};
use crate::dataset::{CleanLabelVector, LABEL_COUNT};
use crate::layers::open_sigmoid;
use crate::metrics::BCE_EPS;
use crate::{Error, Result};

/// Single affine layer over `[original | overlay]` features followed by a
/// sigmoid per observation.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionHead {
    original_len: usize,
    overlay_len: usize,
    /// Row-major `[14, original_len + overlay_len]`.
    weights: Vec<f64>,
    bias: [f64; LABEL_COUNT],
}

impl FusionHead {
    pub fn zeros(original_len: usize, overlay_len: usize) -> Self {
        Self {
            original_len,
            overlay_len,
            weights: vec![0.0; LABEL_COUNT * (original_len + overlay_len)],
            bias: [0.0; LABEL_COUNT],
        }
    }

    pub fn new(original_len: usize, overlay_len: usize, weights: Vec<f64>, bias: [f64; LABEL_COUNT]) -> Result<Self> {
        let want = LABEL_COUNT * (original_len + overlay_len);
        if weights.len() != want {
            return Err(Error::dimension(want, weights.len()));
        }
        Ok(Self {
            original_len,
            overlay_len,
            weights,
            bias,
        })
    }

    pub fn input_lens(&self) -> (usize, usize) {
        (self.original_len, self.overlay_len)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64; LABEL_COUNT] {
        &self.bias
    }

    /// The head that reads its inputs in the opposite order.
    pub fn swapped(&self) -> Self {
        let (a, b) = (self.original_len, self.overlay_len);
        let weights = self
            .weights
            .chunks(a + b)
            .flat_map(|row| row[a..].iter().chain(&row[..a]).copied().collect::<Vec<_>>())
            .collect();
        Self {
            original_len: b,
            overlay_len: a,
            weights,
            bias: self.bias,
        }
    }

    fn check(&self, original: &FeatureVector, overlay: &FeatureVector) -> Result<()> {
        if (original.len(), overlay.len()) != (self.original_len, self.overlay_len) {
            return Err(Error::dimension(
                (self.original_len, self.overlay_len),
                (original.len(), overlay.len()),
            ));
        }
        Ok(())
    }
}

pub fn fuse_predict(original: &FeatureVector, overlay: &FeatureVector, head: &FusionHead) -> Result<Scores> {
    head.check(original, overlay)?;
    let width = head.original_len + head.overlay_len;
    Ok(std::array::from_fn(|j| {
        let row = &head.weights[j * width..(j + 1) * width];
        let z: f64 = row
            .iter()
            .zip(original.0.iter().chain(&overlay.0))
            .map(|(w, x)| w * x)
            .sum::<f64>()
            + head.bias[j];
        open_sigmoid(z)
    }))
}

#[derive(Clone, Debug, PartialEq)]
pub struct FusionTraining {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for FusionTraining {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 50,
            epochs: 8,
        }
    }
}

/// Fits a head on precomputed features; the backbones that produced them
/// stay frozen.
pub fn train_fusion_head(
    samples: &[(FeatureVector, FeatureVector, CleanLabelVector)],
    settings: &FusionTraining,
    seed: u64,
) -> Result<FusionHead> {
    let Some(first) = samples.first() else {
        return Err(Error::Data("no fusion training samples".into()));
    };
    if settings.batch_size == 0 || settings.epochs == 0 {
        return Err(Error::Config("fusion batch size and epochs must be positive".into()));
    }
    let (a, b) = (first.0.len(), first.1.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let w = store.add(
        "fusion.w",
        Tensor::randn(&[LABEL_COUNT, a + b], (1.0 / (a + b).max(1) as f64).sqrt(), &mut rng),
    );
    let bias = store.add("fusion.b", Tensor::zeros(&[LABEL_COUNT]));
    let mut adam = Adam::new(AdamConfig::with_learning_rate(settings.learning_rate), &store);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    for epoch in 1..=settings.epochs {
        order.shuffle(&mut rng);
        for (batch_no, chunk) in order.chunks(settings.batch_size).enumerate() {
            let mut x = Vec::with_capacity(chunk.len() * (a + b));
            let mut y = Vec::with_capacity(chunk.len() * LABEL_COUNT);
            for &i in chunk {
                let (o, v, label) = &samples[i];
                if (o.len(), v.len()) != (a, b) {
                    return Err(Error::dimension((a, b), (o.len(), v.len())));
                }
                x.extend(o.0.iter().chain(&v.0));
                y.extend(label.as_f64());
            }
            let grads = {
                let mut g = Graph::new(&store);
                let xv = g.input(Tensor::new(vec![chunk.len(), a + b], x)?);
                let (wv, bv) = (g.param(w), g.param(bias));
                let logits = g.linear(xv, wv, bv)?;
                let loss = g.bce_with_logits(logits, &Tensor::new(vec![chunk.len(), LABEL_COUNT], y)?, BCE_EPS)?;
                if !g.value(loss).item().is_finite() {
                    return Err(Error::NonFiniteLoss {
                        epoch,
                        batch: batch_no + 1,
                        phase: "train",
                    });
                }
                g.backward(loss)
            };
            adam.step(&mut store, &grads);
        }
    }
    let mut bias_out = [0.0; LABEL_COUNT];
    bias_out.copy_from_slice(store.get(bias).data());
    FusionHead::new(a, b, store.get(w).data().to_vec(), bias_out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fv(v: &[f64]) -> FeatureVector {
        FeatureVector(v.to_vec())
    }

    #[test]
    fn zero_head_gives_one_half() {
        let out = fuse_predict(&fv(&[1.0, -2.0, 3.0]), &fv(&[4.0]), &FusionHead::zeros(3, 1)).unwrap();
        assert!(out.iter().all(|&p| p == 0.5));
    }

    #[test]
    fn output_length_is_fixed() {
        for (a, b) in [(1, 1), (5, 2), (32, 1024)] {
            let out = fuse_predict(&fv(&vec![0.1; a]), &fv(&vec![0.2; b]), &FusionHead::zeros(a, b)).unwrap();
            assert_eq!(out.len(), LABEL_COUNT);
        }
    }

    #[test]
    fn arity_mismatch_is_a_dimension_error() {
        let err = fuse_predict(&fv(&[1.0; 3]), &fv(&[1.0; 2]), &FusionHead::zeros(3, 4)).unwrap_err();
        assert!(matches!(err, Error::Dimension { .. }));
    }

    #[test]
    fn swapping_inputs_and_weight_blocks_is_symmetric() {
        let (a, b) = (3, 2);
        let weights: Vec<f64> = (0..LABEL_COUNT * (a + b))
            .map(|i| ((i * 37) % 11) as f64 / 10.0 - 0.5)
            .collect();
        let bias = std::array::from_fn(|j| j as f64 / 20.0 - 0.3);
        let head = FusionHead::new(a, b, weights, bias).unwrap();
        let (x, y) = (fv(&[0.3, -1.0, 2.0]), fv(&[0.7, 0.1]));
        let direct = fuse_predict(&x, &y, &head).unwrap();
        let swapped = fuse_predict(&y, &x, &head.swapped()).unwrap();
        for (p, q) in direct.iter().zip(&swapped) {
            assert!((p - q).abs() < 1e-12);
        }
        assert_eq!(head.swapped().swapped(), head);
    }

    #[test]
    fn head_learns_a_separable_rule() {
        // Slot j is positive exactly when original feature j%2 is high.
        let mut samples = Vec::new();
        for i in 0..200 {
            let bit = i % 2;
            let o = fv(&[bit as f64, 1.0 - bit as f64]);
            let v = fv(&[0.5]);
            samples.push((o, v, CleanLabelVector([bit as u8; LABEL_COUNT])));
        }
        let head = train_fusion_head(
            &samples,
            &FusionTraining {
                learning_rate: 0.05,
                batch_size: 20,
                epochs: 30,
            },
            1,
        )
        .unwrap();
        for (o, v, label) in &samples[..4] {
            let p = fuse_predict(o, v, &head).unwrap();
            for (pj, &yj) in p.iter().zip(&label.0) {
                assert_eq!((*pj >= 0.5) as u8, yj);
            }
        }
        assert!(train_fusion_head(&[], &FusionTraining::default(), 0).is_err());
    }
}
