//! Shared building blocks for the two networks.

use lednet_nn::{Graph, ParamId, ParamStore, Tensor, Var};
use rand::Rng;

use crate::grid::ImageGrid;
use crate::{Error, Result};

/// Convolution weight `[c_out, c_in, k, k]` plus bias.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Conv {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    /// He-normal initialized weights, zero bias.
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let std = (2.0 / (c_in * k * k) as f64).sqrt();
        let w = store.add(format!("{name}.w"), Tensor::randn(&[c_out, c_in, k, k], std, rng));
        let b = bias.then(|| store.add(format!("{name}.b"), Tensor::zeros(&[c_out])));
        Self {
            w,
            b,
            stride,
            pad: k / 2,
        }
    }

    pub fn apply(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let w = g.param(self.w);
        let b = self.b.map(|b| g.param(b));
        Ok(g.conv2d(x, w, b, self.stride, self.pad)?)
    }
}

/// Weight of the newest batch in the running statistics.
pub(crate) const NORM_MOMENTUM: f64 = 0.1;

/// Per-channel batch normalization. Training uses batch statistics and
/// reports them; inference uses the running estimates kept in the store.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Norm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

/// Batch statistics observed by one [`Norm`] during a training pass.
#[derive(Clone, Debug)]
pub(crate) struct NormUpdate {
    norm: Norm,
    mean: Vec<f64>,
    var: Vec<f64>,
}

impl Norm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(&[channels], 1.0)),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[channels])),
            running_mean: store.add(format!("{name}.running_mean"), Tensor::zeros(&[channels])),
            running_var: store.add(format!("{name}.running_var"), Tensor::full(&[channels], 1.0)),
        }
    }

    /// `updates` is `Some` in training mode.
    pub fn apply(&self, g: &mut Graph<'_>, x: Var, updates: Option<&mut Vec<NormUpdate>>) -> Result<Var> {
        let (gamma, beta) = (g.param(self.gamma), g.param(self.beta));
        match updates {
            Some(updates) => {
                let (y, mean, var) = g.batch_norm(x, gamma, beta)?;
                updates.push(NormUpdate { norm: *self, mean, var });
                Ok(y)
            }
            None => {
                let mean = g.param_value(self.running_mean).data().to_vec();
                let var = g.param_value(self.running_var).data().to_vec();
                Ok(g.batch_norm_frozen(x, gamma, beta, &mean, &var)?)
            }
        }
    }
}

/// Folds batch statistics into the running estimates. The biased variance
/// is kept so that inference on a batch matches training once converged.
pub(crate) fn apply_norm_updates(store: &mut ParamStore, updates: &[NormUpdate]) {
    for u in updates {
        for (r, &m) in store.get_mut(u.norm.running_mean).data_mut().iter_mut().zip(&u.mean) {
            *r = (1.0 - NORM_MOMENTUM) * *r + NORM_MOMENTUM * m;
        }
        for (r, &v) in store.get_mut(u.norm.running_var).data_mut().iter_mut().zip(&u.var) {
            *r = (1.0 - NORM_MOMENTUM) * *r + NORM_MOMENTUM * v;
        }
    }
}

/// Replaces the running estimates with the weighted mean of the statistics
/// seen over several training-mode passes. Each pass is `(weight, updates)`.
pub(crate) fn set_norm_statistics(store: &mut ParamStore, passes: &[(usize, Vec<NormUpdate>)]) {
    let Some((_, first)) = passes.first() else { return };
    let total: usize = passes.iter().map(|p| p.0).sum();
    for (i, u) in first.iter().enumerate() {
        let mut mean = vec![0.0; u.mean.len()];
        let mut var = vec![0.0; u.var.len()];
        for (weight, pass) in passes {
            let f = *weight as f64 / total as f64;
            for (a, b) in mean.iter_mut().zip(&pass[i].mean) {
                *a += f * b;
            }
            for (a, b) in var.iter_mut().zip(&pass[i].var) {
                *a += f * b;
            }
        }
        store.get_mut(u.norm.running_mean).data_mut().copy_from_slice(&mean);
        store.get_mut(u.norm.running_var).data_mut().copy_from_slice(&var);
    }
}

/// Stacks images into an NCHW tensor after checking their shape.
pub(crate) fn batch_tensor(images: &[&ImageGrid], expected: (usize, usize, usize)) -> Result<Tensor> {
    let (c, h, w) = expected;
    let mut data = Vec::with_capacity(images.len() * c * h * w);
    for img in images {
        if img.dims() != expected {
            return Err(Error::dimension(expected, img.dims()));
        }
        data.extend(img.data().iter().map(|&v| v as f64));
    }
    Ok(Tensor::new(vec![images.len(), c, h, w], data)?)
}

/// Logistic function kept inside the open unit interval even where the
/// logit saturates double precision.
pub(crate) fn open_sigmoid(z: f64) -> f64 {
    let p = if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    };
    p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}
