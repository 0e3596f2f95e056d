use crate::kernels::{self, ConvGeom};
use crate::{NnError, ParamId, ParamStore, Result, Tensor};

/// Handle to a node on a [`Graph`] tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Value {
    Owned(Tensor),
    Param(ParamId),
}

enum Op {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    Relu(Var),
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    AvgPool2(Var),
    Upsample2(Var),
    Concat(Vec<Var>),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        frozen: bool,
    },
    GlobalAvgPool(Var),
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    Sigmoid(Var),
    BceWithLogits {
        logits: Var,
        targets: Vec<f64>,
        eps: f64,
    },
}

struct Node {
    value: Value,
    op: Op,
}

/// Reverse-mode autodiff tape. Parameters are borrowed from a
/// [`ParamStore`], so a graph lives for exactly one forward/backward pass.
pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

/// Parameter gradients produced by [`Graph::backward`], indexed by
/// [`ParamId`]. Parameters that did not influence the loss have no entry.
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().flatten().all(Tensor::is_finite)
    }

    #[cfg(test)]
    pub(crate) fn from_store_for_tests(store: &ParamStore) -> Self {
        Self {
            grads: store.ids().map(|id| Some(store.get(id).clone())).collect(),
        }
    }
}

fn shape_err(op: &'static str, expected: &[usize], actual: &[usize]) -> NnError {
    NnError::Shape {
        op,
        expected: expected.to_vec(),
        actual: actual.to_vec(),
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(existing) => existing.add_assign(&g),
        None => *slot = Some(g),
    }
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::new(),
        }
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// Reads a parameter without recording it on the tape.
    pub fn param_value(&self, id: ParamId) -> &Tensor {
        self.params.get(id)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.params.get(*id),
        }
    }

    /// 2-D convolution with square kernels. `w` is `[c_out, c_in, k, k]`,
    /// the optional bias is `[c_out]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (n, c_in, h, wd) = self.value(x).dims4()?;
        let ws = self.value(w).shape().to_vec();
        let (c_out, k) = match ws[..] {
            [co, ci, k1, k2] if ci == c_in && k1 == k2 => (co, k1),
            _ => return Err(shape_err("conv2d weight", &[0, c_in, 0, 0], &ws)),
        };
        if let Some(b) = b {
            if self.value(b).shape() != [c_out] {
                return Err(shape_err("conv2d bias", &[c_out], self.value(b).shape()));
            }
        }
        if stride == 0 || h + 2 * pad < k || wd + 2 * pad < k {
            return Err(NnError::Argument {
                op: "conv2d",
                reason: format!("kernel {k} stride {stride} pad {pad} does not fit {h}x{wd}"),
            });
        }
        let geom = ConvGeom {
            c_in,
            h,
            w: wd,
            c_out,
            k,
            stride,
            pad,
        };
        let (ho, wo) = geom.out_hw();
        let out = kernels::conv2d_forward(
            self.value(x).data(),
            n,
            &geom,
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
        );
        let t = Tensor::new(vec![n, c_out, ho, wo], out)?;
        Ok(self.push(t, Op::Conv2d { x, w, b, geom }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let data = src.data().iter().map(|v| v.max(0.0)).collect();
        let t = Tensor::new(src.shape().to_vec(), data).unwrap();
        self.push(t, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let data = src.data().iter().map(|&v| sigmoid(v)).collect();
        let t = Tensor::new(src.shape().to_vec(), data).unwrap();
        self.push(t, Op::Sigmoid(x))
    }

    pub fn max_pool(&mut self, x: Var, k: usize, stride: usize, pad: usize) -> Result<Var> {
        let dims = self.value(x).dims4()?;
        if k == 0 || stride == 0 || dims.2 + 2 * pad < k || dims.3 + 2 * pad < k || pad >= k {
            return Err(NnError::Argument {
                op: "max_pool",
                reason: format!("window {k} stride {stride} pad {pad} on {}x{}", dims.2, dims.3),
            });
        }
        let (out, argmax, ho, wo) = kernels::max_pool_forward(self.value(x).data(), dims, k, stride, pad);
        let t = Tensor::new(vec![dims.0, dims.1, ho, wo], out)?;
        Ok(self.push(t, Op::MaxPool { x, argmax }))
    }

    /// 2x2 average pooling with stride 2.
    pub fn avg_pool2(&mut self, x: Var) -> Result<Var> {
        let dims = self.value(x).dims4()?;
        if dims.2 < 2 || dims.3 < 2 {
            return Err(NnError::Argument {
                op: "avg_pool2",
                reason: format!("spatial size {}x{} too small", dims.2, dims.3),
            });
        }
        let out = kernels::avg_pool2_forward(self.value(x).data(), dims);
        let t = Tensor::new(vec![dims.0, dims.1, dims.2 / 2, dims.3 / 2], out)?;
        Ok(self.push(t, Op::AvgPool2(x)))
    }

    /// Nearest-neighbour 2x upsampling.
    pub fn upsample2(&mut self, x: Var) -> Result<Var> {
        let dims = self.value(x).dims4()?;
        let out = kernels::upsample2_forward(self.value(x).data(), dims);
        let t = Tensor::new(vec![dims.0, dims.1, 2 * dims.2, 2 * dims.3], out)?;
        Ok(self.push(t, Op::Upsample2(x)))
    }

    /// Concatenation along axis 1 (channels for images, features for
    /// matrices). All other dimensions must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self
            .value(*parts.first().ok_or(NnError::Argument {
                op: "concat",
                reason: "no inputs".into(),
            })?)
            .shape()
            .to_vec();
        if first.len() < 2 {
            return Err(shape_err("concat", &[0, 0], &first));
        }
        let n = first[0];
        let inner: usize = first[2..].iter().product();
        let mut total = 0;
        for &p in parts {
            let s = self.value(p).shape();
            if s.len() != first.len() || s[0] != n || s[2..] != first[2..] {
                return Err(shape_err("concat", &first, s));
            }
            total += s[1];
        }
        let mut data = Vec::with_capacity(n * total * inner);
        for s in 0..n {
            for &p in parts {
                let t = self.value(p);
                let len = t.shape()[1] * inner;
                data.extend_from_slice(&t.data()[s * len..(s + 1) * len]);
            }
        }
        let mut shape = first;
        shape[1] = total;
        let t = Tensor::new(shape, data)?;
        Ok(self.push(t, Op::Concat(parts.to_vec())))
    }

    /// Per-sample normalization over `(c, h, w)` with per-channel scale and
    /// shift. Unlike batch statistics this behaves identically in training
    /// and inference.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let dims = self.value(x).dims4()?;
        for p in [gamma, beta] {
            if self.value(p).shape() != [dims.1] {
                return Err(shape_err("layer_norm affine", &[dims.1], self.value(p).shape()));
            }
        }
        let (y, xhat, inv_std) = kernels::layer_norm_forward(
            self.value(x).data(),
            dims,
            self.value(gamma).data(),
            self.value(beta).data(),
        );
        let t = Tensor::new(self.value(x).shape().to_vec(), y)?;
        Ok(self.push(
            t,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        ))
    }

    /// Per-channel normalization with batch statistics. Returns the output
    /// and the biased batch mean and variance of each channel.
    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<(Var, Vec<f64>, Vec<f64>)> {
        self.channel_norm(x, gamma, beta, None)
    }

    /// Per-channel normalization with fixed statistics, as used at inference.
    pub fn batch_norm_frozen(&mut self, x: Var, gamma: Var, beta: Var, mean: &[f64], var: &[f64]) -> Result<Var> {
        let c = self.value(x).dims4()?.1;
        for s in [mean, var] {
            if s.len() != c {
                return Err(shape_err("batch_norm statistics", &[c], &[s.len()]));
            }
        }
        Ok(self.channel_norm(x, gamma, beta, Some((mean, var)))?.0)
    }

    fn channel_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: Option<(&[f64], &[f64])>,
    ) -> Result<(Var, Vec<f64>, Vec<f64>)> {
        let dims = self.value(x).dims4()?;
        for p in [gamma, beta] {
            if self.value(p).shape() != [dims.1] {
                return Err(shape_err("batch_norm affine", &[dims.1], self.value(p).shape()));
            }
        }
        let out = kernels::batch_norm_forward(
            self.value(x).data(),
            dims,
            self.value(gamma).data(),
            self.value(beta).data(),
            stats,
        );
        let t = Tensor::new(self.value(x).shape().to_vec(), out.y)?;
        let v = self.push(
            t,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat: out.xhat,
                inv_std: out.inv_std,
                frozen: stats.is_some(),
            },
        );
        Ok((v, out.mean, out.var))
    }

    /// `[n, c, h, w] -> [n, c]` spatial mean.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let plane = h * w;
        let data = self
            .value(x)
            .data()
            .chunks(plane)
            .map(|ch| ch.iter().sum::<f64>() / plane as f64)
            .collect();
        let t = Tensor::new(vec![n, c], data)?;
        Ok(self.push(t, Op::GlobalAvgPool(x)))
    }

    /// Affine map `[n, f] -> [n, o]` with weight `[o, f]` and bias `[o]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(w).shape().to_vec();
        let (n, f) = match xs[..] {
            [n, f] => (n, f),
            _ => return Err(shape_err("linear input", &[0, 0], &xs)),
        };
        let o = match ws[..] {
            [o, wf] if wf == f => o,
            _ => return Err(shape_err("linear weight", &[0, f], &ws)),
        };
        if self.value(b).shape() != [o] {
            return Err(shape_err("linear bias", &[o], self.value(b).shape()));
        }
        let mut out = vec![0.0; n * o];
        crate::gemm::gemm(
            n,
            f,
            o,
            self.value(x).data(),
            false,
            self.value(w).data(),
            true,
            &mut out,
            0.0,
        );
        let bias = self.value(b).data();
        for row in out.chunks_mut(o) {
            for (v, bv) in row.iter_mut().zip(bias) {
                *v += bv;
            }
        }
        let t = Tensor::new(vec![n, o], out)?;
        Ok(self.push(t, Op::Linear { x, w, b }))
    }

    /// Mean binary cross-entropy of `sigmoid(logits)` against `targets`,
    /// with probabilities clamped to `[eps, 1 - eps]`. Produces a scalar.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &Tensor, eps: f64) -> Result<Var> {
        let z = self.value(logits);
        if z.shape() != targets.shape() {
            return Err(shape_err("bce_with_logits", z.shape(), targets.shape()));
        }
        let m = z.numel().max(1) as f64;
        let total: f64 = z
            .data()
            .iter()
            .zip(targets.data())
            .map(|(&zv, &y)| {
                let p = sigmoid(zv).clamp(eps, 1.0 - eps);
                -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
            })
            .sum();
        let op = Op::BceWithLogits {
            logits,
            targets: targets.data().to_vec(),
            eps,
        };
        Ok(self.push(Tensor::scalar(total / m), op))
    }

    /// Backpropagates from a scalar `loss` and returns parameter gradients.
    pub fn backward(&self, loss: Var) -> Gradients {
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut param_grads: Vec<Option<Tensor>> = (0..self.params.len()).map(|_| None).collect();
        let seed = self.value(loss);
        grads[loss.0] = Some(Tensor::full(seed.shape(), 1.0));

        for i in (0..=loss.0).rev() {
            let Some(dy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let shape_of = |v: Var| self.value(v).shape().to_vec();
            match &node.op {
                Op::Leaf => {
                    if let Value::Param(id) = node.value {
                        accumulate(&mut param_grads[id.0], dy);
                    }
                }
                Op::Conv2d { x, w, b, geom } => {
                    let n = self.value(*x).shape()[0];
                    let g = kernels::conv2d_backward(self.value(*x).data(), n, geom, self.value(*w).data(), dy.data());
                    accumulate(&mut grads[x.0], Tensor::new(shape_of(*x), g.dx).unwrap());
                    accumulate(&mut grads[w.0], Tensor::new(shape_of(*w), g.dw).unwrap());
                    if let Some(b) = b {
                        accumulate(&mut grads[b.0], Tensor::new(shape_of(*b), g.db).unwrap());
                    }
                }
                Op::Relu(x) => {
                    let out = self.value(Var(i)).data();
                    let dx = dy
                        .data()
                        .iter()
                        .zip(out)
                        .map(|(&g, &o)| if o > 0.0 { g } else { 0.0 })
                        .collect();
                    accumulate(&mut grads[x.0], Tensor::new(shape_of(*x), dx).unwrap());
                }
                Op::Sigmoid(x) => {
                    let out = self.value(Var(i)).data();
                    let dx = dy.data().iter().zip(out).map(|(&g, &s)| g * s * (1.0 - s)).collect();
                    accumulate(&mut grads[x.0], Tensor::new(shape_of(*x), dx).unwrap());
                }
                Op::MaxPool { x, argmax } => {
                    let mut dx = Tensor::zeros(&shape_of(*x));
                    let d = dx.data_mut();
                    for (&src, &g) in argmax.iter().zip(dy.data()) {
                        d[src] += g;
                    }
                    accumulate(&mut grads[x.0], dx);
                }
                Op::AvgPool2(x) => {
                    let dims = self.value(*x).dims4().unwrap();
                    let dx = kernels::avg_pool2_backward(dy.data(), dims);
                    accumulate(&mut grads[x.0], Tensor::new(shape_of(*x), dx).unwrap());
                }
                Op::Upsample2(x) => {
                    let dims = self.value(*x).dims4().unwrap();
                    let dx = kernels::upsample2_backward(dy.data(), dims);
                    accumulate(&mut grads[x.0], Tensor::new(shape_of(*x), dx).unwrap());
                }
                Op::Concat(parts) => {
                    let out_shape = dy.shape();
                    let n = out_shape[0];
                    let inner: usize = out_shape[2..].iter().product();
                    let total_len = out_shape[1] * inner;
                    let mut offset = 0;
                    for &p in parts {
                        let ps = shape_of(p);
                        let len = ps[1] * inner;
                        let mut data = Vec::with_capacity(n * len);
                        for s in 0..n {
                            let start = s * total_len + offset;
                            data.extend_from_slice(&dy.data()[start..start + len]);
                        }
                        offset += len;
                        accumulate(&mut grads[p.0], Tensor::new(ps, data).unwrap());
                    }
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let dims = self.value(*x).dims4().unwrap();
                    let (dx, dg, db) =
                        kernels::layer_norm_backward(dy.data(), dims, self.value(*gamma).data(), xhat, inv_std);
                    accumulate(&mut grads[x.0], Tensor::new(shape_of(*x), dx).unwrap());
                    accumulate(&mut grads[gamma.0], Tensor::new(shape_of(*gamma), dg).unwrap());
                    accumulate(&mut grads[beta.0], Tensor::new(shape_of(*beta), db).unwrap());
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                    frozen,
                } => {
                    let dims = self.value(*x).dims4().unwrap();
                    let (dx, dg, db) = kernels::batch_norm_backward(
                        dy.data(),
                        dims,
                        self.value(*gamma).data(),
                        xhat,
                        inv_std,
                        *frozen,
                    );
                    accumulate(&mut grads[x.0], Tensor::new(shape_of(*x), dx).unwrap());
                    accumulate(&mut grads[gamma.0], Tensor::new(shape_of(*gamma), dg).unwrap());
                    accumulate(&mut grads[beta.0], Tensor::new(shape_of(*beta), db).unwrap());
                }
                Op::GlobalAvgPool(x) => {
                    let xs = shape_of(*x);
                    let plane = xs[2] * xs[3];
                    let mut dx = Vec::with_capacity(plane * dy.numel());
                    for &g in dy.data() {
                        dx.extend(std::iter::repeat_n(g / plane as f64, plane));
                    }
                    accumulate(&mut grads[x.0], Tensor::new(xs, dx).unwrap());
                }
                Op::Linear { x, w, b } => {
                    let xs = shape_of(*x);
                    let (n, f) = (xs[0], xs[1]);
                    let o = dy.shape()[1];
                    let mut dx = vec![0.0; n * f];
                    crate::gemm::gemm(n, o, f, dy.data(), false, self.value(*w).data(), false, &mut dx, 0.0);
                    let mut dw = vec![0.0; o * f];
                    crate::gemm::gemm(o, n, f, dy.data(), true, self.value(*x).data(), false, &mut dw, 0.0);
                    let mut db = vec![0.0; o];
                    for row in dy.data().chunks(o) {
                        for (a, g) in db.iter_mut().zip(row) {
                            *a += g;
                        }
                    }
                    accumulate(&mut grads[x.0], Tensor::new(xs, dx).unwrap());
                    accumulate(&mut grads[w.0], Tensor::new(vec![o, f], dw).unwrap());
                    accumulate(&mut grads[b.0], Tensor::new(vec![o], db).unwrap());
                }
                Op::BceWithLogits { logits, targets, eps } => {
                    let z = self.value(*logits);
                    let scale = dy.item() / z.numel().max(1) as f64;
                    let dz = z
                        .data()
                        .iter()
                        .zip(targets)
                        .map(|(&zv, &y)| {
                            let p = sigmoid(zv);
                            // The clamp is flat outside [eps, 1 - eps].
                            if p <= *eps || p >= 1.0 - eps {
                                0.0
                            } else {
                                scale * (p - y)
                            }
                        })
                        .collect();
                    accumulate(&mut grads[logits.0], Tensor::new(z.shape().to_vec(), dz).unwrap());
                }
            }
        }
        Gradients { grads: param_grads }
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}
