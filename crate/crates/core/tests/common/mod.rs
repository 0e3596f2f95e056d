#![allow(dead_code)]

pub mod oracles;

use lednet_core::classifier::{build_classifier, Classifier, ClsModelConfig};
use lednet_core::dataset::CleanLabelVector;
use lednet_core::localizer::{build_seg_model, SegModel, SegModelConfig};
use lednet_core::{BinaryMask, ImageGrid, Result};
use lednet_nn::{Gradients, ParamStore};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Worst relative error between analytic and central-difference gradients
/// over `samples` randomly chosen trainable scalars.
pub fn worst_relative_error(
    params: &ParamStore,
    grads: &Gradients,
    samples: usize,
    seed: u64,
    mut loss_at: impl FnMut(&ParamStore) -> Result<f64>,
) -> f64 {
    const H: f64 = 1e-6;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let trainable: Vec<_> = params.ids().filter(|&id| grads.get(id).is_some()).collect();
    let mut store = params.clone();
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let id = trainable[rng.random_range(0..trainable.len())];
        let i = rng.random_range(0..store.get(id).numel());
        let orig = store.get(id).data()[i];
        store.get_mut(id).data_mut()[i] = orig + H;
        let plus = loss_at(&store).unwrap();
        store.get_mut(id).data_mut()[i] = orig - H;
        let minus = loss_at(&store).unwrap();
        store.get_mut(id).data_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * H);
        let analytic = grads.get(id).unwrap().data()[i];
        let scale = analytic.abs().max(numeric.abs());
        if scale > 1e-9 {
            worst = worst.max((analytic - numeric).abs() / scale);
        }
    }
    worst
}

fn noise_image(rng: &mut ChaCha8Rng, c: usize, size: usize) -> ImageGrid {
    ImageGrid::from_fn(c, size, size, |_, _, _| rng.random::<f32>())
}

/// Segmentation gradient check on a depth-1 network over 16x16 inputs.
pub fn localizer_gradient_error(samples: usize) -> f64 {
    let config = SegModelConfig {
        input_size: (16, 16),
        depth: 1,
        base_channels: 4,
        ..SegModelConfig::default()
    };
    let model = build_seg_model(&config, 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let images: Vec<ImageGrid> = (0..2).map(|_| noise_image(&mut rng, 1, 16)).collect();
    let masks: Vec<BinaryMask> = (0..2)
        .map(|_| BinaryMask::from_fn(16, 16, |_, _| rng.random::<bool>()))
        .collect();
    let imgs: Vec<&ImageGrid> = images.iter().collect();
    let ms: Vec<&BinaryMask> = masks.iter().collect();
    let (_, grads) = model.loss_and_gradients(&imgs, &ms).unwrap();
    let mut probe: SegModel = model.clone();
    worst_relative_error(model.params(), &grads, samples, 7, |store| {
        *probe.params_mut() = store.clone();
        probe.batch_loss(&imgs, &ms)
    })
}

/// Classification gradient check on dense-tiny over `size`x`size` inputs.
pub fn classifier_gradient_error(size: usize, samples: usize) -> f64 {
    let config = ClsModelConfig {
        input_size: (size, size),
        ..ClsModelConfig::dense_tiny()
    };
    let model = build_classifier(&config, 8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let images: Vec<ImageGrid> = (0..4).map(|_| noise_image(&mut rng, 3, size)).collect();
    let labels: Vec<CleanLabelVector> = (0..4)
        .map(|_| CleanLabelVector(std::array::from_fn(|_| rng.random::<bool>() as u8)))
        .collect();
    let imgs: Vec<&ImageGrid> = images.iter().collect();
    let (_, grads) = model.loss_and_gradients(&imgs, &labels).unwrap();
    let mut probe: Classifier = model.clone();
    worst_relative_error(model.params(), &grads, samples, 10, |store| {
        *probe.params_mut() = store.clone();
        probe.training_loss(&imgs, &labels)
    })
}
