//! Forward and backward kernels for the spatial ops. All functions take
//! NCHW slices plus explicit dimensions; shape validation happens in the
//! graph layer.

use rayon::prelude::*;

use crate::gemm::gemm;

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_hw(&self) -> (usize, usize) {
        let ho = (self.h + 2 * self.pad - self.k) / self.stride + 1;
        let wo = (self.w + 2 * self.pad - self.k) / self.stride + 1;
        (ho, wo)
    }

    fn patch_len(&self) -> usize {
        self.c_in * self.k * self.k
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }
}

/// Output columns `[lo, hi)` whose input column `ox * stride + kx - pad`
/// falls inside `0..w`.
fn valid_span(g: &ConvGeom, kx: usize, wo: usize) -> (usize, usize) {
    let (s, off) = (g.stride, kx as isize - g.pad as isize);
    let lo = if off >= 0 { 0 } else { ((-off) as usize).div_ceil(s) };
    let last = g.w as isize - 1 - off;
    let hi = if last < 0 { 0 } else { (last as usize / s + 1).min(wo) };
    (lo.min(hi), hi)
}

fn im2col(x: &[f64], g: &ConvGeom, cols: &mut [f64]) {
    let (ho, wo) = g.out_hw();
    let plane = ho * wo;
    for c in 0..g.c_in {
        let src = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                let (lo, hi) = valid_span(g, kx, wo);
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let line = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src_row = &src[iy as usize * g.w..(iy as usize + 1) * g.w];
                    line[..lo].fill(0.0);
                    line[hi..].fill(0.0);
                    let first = lo * g.stride + kx - g.pad.min(lo * g.stride + kx);
                    if g.stride == 1 {
                        line[lo..hi].copy_from_slice(&src_row[first..first + (hi - lo)]);
                    } else {
                        for (v, ix) in line[lo..hi].iter_mut().zip((first..).step_by(g.stride)) {
                            *v = src_row[ix];
                        }
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f64], g: &ConvGeom, dx: &mut [f64]) {
    let (ho, wo) = g.out_hw();
    let plane = ho * wo;
    for c in 0..g.c_in {
        let dst = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let src = &cols[row * plane..(row + 1) * plane];
                let (lo, hi) = valid_span(g, kx, wo);
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst_row = &mut dst[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let first = lo * g.stride + kx - g.pad.min(lo * g.stride + kx);
                    let line = &src[oy * wo + lo..oy * wo + hi];
                    if g.stride == 1 {
                        for (d, v) in dst_row[first..first + (hi - lo)].iter_mut().zip(line) {
                            *d += v;
                        }
                    } else {
                        for (v, ix) in line.iter().zip((first..).step_by(g.stride)) {
                            dst_row[ix] += v;
                        }
                    }
                }
            }
        }
    }
}

thread_local! {
    static SCRATCH: std::cell::RefCell<Vec<f64>> = const { std::cell::RefCell::new(Vec::new()) };
}

/// Runs `f` with a per-thread buffer of at least `len` values. Contents are
/// unspecified; callers overwrite what they read.
fn with_scratch<T>(len: usize, f: impl FnOnce(&mut [f64]) -> T) -> T {
    SCRATCH.with(|cell| {
        let mut buf = cell.borrow_mut();
        if buf.len() < len {
            buf.resize(len, 0.0);
        }
        f(&mut buf[..len])
    })
}

pub(crate) fn conv2d_forward(x: &[f64], n: usize, g: &ConvGeom, weight: &[f64], bias: Option<&[f64]>) -> Vec<f64> {
    let (ho, wo) = g.out_hw();
    let plane = ho * wo;
    let in_len = g.c_in * g.h * g.w;
    let out_len = g.c_out * plane;
    let mut out = vec![0.0; n * out_len];
    out.par_chunks_mut(out_len)
        .zip(x.par_chunks(in_len))
        .for_each(|(y, xs)| {
            if g.is_pointwise() {
                gemm(g.c_out, g.c_in, plane, weight, false, xs, false, y, 0.0);
            } else {
                with_scratch(g.patch_len() * plane, |cols| {
                    im2col(xs, g, cols);
                    gemm(g.c_out, g.patch_len(), plane, weight, false, cols, false, y, 0.0);
                });
            }
            if let Some(b) = bias {
                for (co, bv) in b.iter().enumerate() {
                    for v in &mut y[co * plane..(co + 1) * plane] {
                        *v += bv;
                    }
                }
            }
        });
    out
}

pub(crate) struct ConvGrads {
    pub dx: Vec<f64>,
    pub dw: Vec<f64>,
    pub db: Vec<f64>,
}

pub(crate) fn conv2d_backward(x: &[f64], n: usize, g: &ConvGeom, weight: &[f64], dy: &[f64]) -> ConvGrads {
    let (ho, wo) = g.out_hw();
    let plane = ho * wo;
    let in_len = g.c_in * g.h * g.w;
    let out_len = g.c_out * plane;
    let wlen = g.c_out * g.patch_len();
    let mut dx = vec![0.0; n * in_len];
    let per_sample: Vec<Vec<f64>> = dx
        .par_chunks_mut(in_len)
        .zip(x.par_chunks(in_len))
        .zip(dy.par_chunks(out_len))
        .map(|((dxs, xs), dys)| {
            let mut dw = vec![0.0; wlen];
            if g.is_pointwise() {
                gemm(g.c_out, plane, g.c_in, dys, false, xs, true, &mut dw, 0.0);
                gemm(g.c_in, g.c_out, plane, weight, true, dys, false, dxs, 0.0);
            } else {
                with_scratch(g.patch_len() * plane, |cols| {
                    im2col(xs, g, cols);
                    gemm(g.c_out, plane, g.patch_len(), dys, false, cols, true, &mut dw, 0.0);
                    gemm(g.patch_len(), g.c_out, plane, weight, true, dys, false, cols, 0.0);
                    col2im(cols, g, dxs);
                });
            }
            dw
        })
        .collect();

    let mut dw = vec![0.0; wlen];
    for sample in &per_sample {
        for (a, b) in dw.iter_mut().zip(sample) {
            *a += b;
        }
    }
    let mut db = vec![0.0; g.c_out];
    for dys in dy.chunks(out_len) {
        for (co, acc) in db.iter_mut().enumerate() {
            *acc += dys[co * plane..(co + 1) * plane].iter().sum::<f64>();
        }
    }
    ConvGrads { dx, dw, db }
}

/// Max pooling over `k x k` windows; returns the output and, for every
/// output element, the flat input index that produced it.
pub(crate) fn max_pool_forward(
    x: &[f64],
    (n, c, h, w): (usize, usize, usize, usize),
    k: usize,
    stride: usize,
    pad: usize,
) -> (Vec<f64>, Vec<usize>, usize, usize) {
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (w + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; n * c * ho * wo];
    let mut arg = vec![0usize; n * c * ho * wo];
    for nc in 0..n * c {
        let base = nc * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = usize::MAX;
                for ky in 0..k {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let idx = base + iy as usize * w + ix as usize;
                        if x[idx] > best || best_idx == usize::MAX {
                            best = x[idx];
                            best_idx = idx;
                        }
                    }
                }
                let o = (nc * ho + oy) * wo + ox;
                out[o] = best;
                arg[o] = best_idx;
            }
        }
    }
    (out, arg, ho, wo)
}

pub(crate) fn avg_pool2_forward(x: &[f64], (n, c, h, w): (usize, usize, usize, usize)) -> Vec<f64> {
    let (ho, wo) = (h / 2, w / 2);
    let mut out = vec![0.0; n * c * ho * wo];
    for nc in 0..n * c {
        let src = &x[nc * h * w..(nc + 1) * h * w];
        for oy in 0..ho {
            for ox in 0..wo {
                let (y, x0) = (2 * oy, 2 * ox);
                out[(nc * ho + oy) * wo + ox] =
                    0.25 * (src[y * w + x0] + src[y * w + x0 + 1] + src[(y + 1) * w + x0] + src[(y + 1) * w + x0 + 1]);
            }
        }
    }
    out
}

pub(crate) fn avg_pool2_backward(dy: &[f64], (n, c, h, w): (usize, usize, usize, usize)) -> Vec<f64> {
    let (ho, wo) = (h / 2, w / 2);
    let mut dx = vec![0.0; n * c * h * w];
    for nc in 0..n * c {
        let dst = &mut dx[nc * h * w..(nc + 1) * h * w];
        for oy in 0..ho {
            for ox in 0..wo {
                let g = 0.25 * dy[(nc * ho + oy) * wo + ox];
                let (y, x0) = (2 * oy, 2 * ox);
                dst[y * w + x0] += g;
                dst[y * w + x0 + 1] += g;
                dst[(y + 1) * w + x0] += g;
                dst[(y + 1) * w + x0 + 1] += g;
            }
        }
    }
    dx
}

pub(crate) fn upsample2_forward(x: &[f64], (n, c, h, w): (usize, usize, usize, usize)) -> Vec<f64> {
    let (ho, wo) = (2 * h, 2 * w);
    let mut out = vec![0.0; n * c * ho * wo];
    for nc in 0..n * c {
        let src = &x[nc * h * w..(nc + 1) * h * w];
        let dst = &mut out[nc * ho * wo..(nc + 1) * ho * wo];
        for oy in 0..ho {
            for ox in 0..wo {
                dst[oy * wo + ox] = src[(oy / 2) * w + ox / 2];
            }
        }
    }
    out
}

pub(crate) fn upsample2_backward(dy: &[f64], (n, c, h, w): (usize, usize, usize, usize)) -> Vec<f64> {
    let (ho, wo) = (2 * h, 2 * w);
    let mut dx = vec![0.0; n * c * h * w];
    for nc in 0..n * c {
        let src = &dy[nc * ho * wo..(nc + 1) * ho * wo];
        let dst = &mut dx[nc * h * w..(nc + 1) * h * w];
        for oy in 0..ho {
            for ox in 0..wo {
                dst[(oy / 2) * w + ox / 2] += src[oy * wo + ox];
            }
        }
    }
    dx
}

pub(crate) const NORM_EPS: f64 = 1e-5;

/// Per-sample normalization over all of `(c, h, w)` followed by a
/// per-channel affine map. Returns `(y, xhat, inv_std per sample)`.
pub(crate) fn layer_norm_forward(
    x: &[f64],
    (n, c, h, w): (usize, usize, usize, usize),
    gamma: &[f64],
    beta: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let m = c * h * w;
    let plane = h * w;
    let mut y = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut inv_std = vec![0.0; n];
    for s in 0..n {
        let xs = &x[s * m..(s + 1) * m];
        let mean = xs.iter().sum::<f64>() / m as f64;
        let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m as f64;
        let is = 1.0 / (var + NORM_EPS).sqrt();
        inv_std[s] = is;
        for ch in 0..c {
            for i in 0..plane {
                let idx = s * m + ch * plane + i;
                let xh = (x[idx] - mean) * is;
                xhat[idx] = xh;
                y[idx] = gamma[ch] * xh + beta[ch];
            }
        }
    }
    (y, xhat, inv_std)
}

pub(crate) fn layer_norm_backward(
    dy: &[f64],
    (n, c, h, w): (usize, usize, usize, usize),
    gamma: &[f64],
    xhat: &[f64],
    inv_std: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let m = c * h * w;
    let plane = h * w;
    let mut dx = vec![0.0; dy.len()];
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    let mut dxhat = vec![0.0; m];
    for s in 0..n {
        let mut sum_d = 0.0;
        let mut sum_dx = 0.0;
        for ch in 0..c {
            for i in 0..plane {
                let local = ch * plane + i;
                let idx = s * m + local;
                dgamma[ch] += dy[idx] * xhat[idx];
                dbeta[ch] += dy[idx];
                let d = dy[idx] * gamma[ch];
                dxhat[local] = d;
                sum_d += d;
                sum_dx += d * xhat[idx];
            }
        }
        let scale = inv_std[s] / m as f64;
        for local in 0..m {
            let idx = s * m + local;
            dx[idx] = scale * (m as f64 * dxhat[local] - sum_d - xhat[idx] * sum_dx);
        }
    }
    (dx, dgamma, dbeta)
}

/// Per-channel normalization over `(n, h, w)`. With `stats` the given mean
/// and variance are used; otherwise they come from the batch and are
/// returned alongside the output.
pub(crate) struct ChannelNorm {
    pub y: Vec<f64>,
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

pub(crate) fn batch_norm_forward(
    x: &[f64],
    (n, c, h, w): (usize, usize, usize, usize),
    gamma: &[f64],
    beta: &[f64],
    stats: Option<(&[f64], &[f64])>,
) -> ChannelNorm {
    let plane = h * w;
    let count = (n * plane) as f64;
    let (mean, var) = match stats {
        Some((m, v)) => (m.to_vec(), v.to_vec()),
        None => {
            let mut mean = vec![0.0; c];
            let mut var = vec![0.0; c];
            for ch in 0..c {
                let chunks = || (0..n).map(move |s| &x[(s * c + ch) * plane..(s * c + ch + 1) * plane]);
                let mu = chunks().flatten().sum::<f64>() / count;
                mean[ch] = mu;
                var[ch] = chunks().flatten().map(|v| (v - mu) * (v - mu)).sum::<f64>() / count;
            }
            (mean, var)
        }
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + NORM_EPS).sqrt()).collect();
    let mut y = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    for s in 0..n {
        for ch in 0..c {
            let base = (s * c + ch) * plane;
            for i in base..base + plane {
                let xh = (x[i] - mean[ch]) * inv_std[ch];
                xhat[i] = xh;
                y[i] = gamma[ch] * xh + beta[ch];
            }
        }
    }
    ChannelNorm {
        y,
        xhat,
        inv_std,
        mean,
        var,
    }
}

/// Gradients of [`batch_norm_forward`]. `frozen` means the statistics were
/// constants rather than functions of the batch.
pub(crate) fn batch_norm_backward(
    dy: &[f64],
    (n, c, h, w): (usize, usize, usize, usize),
    gamma: &[f64],
    xhat: &[f64],
    inv_std: &[f64],
    frozen: bool,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let plane = h * w;
    let count = (n * plane) as f64;
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    for s in 0..n {
        for ch in 0..c {
            let base = (s * c + ch) * plane;
            for i in base..base + plane {
                dgamma[ch] += dy[i] * xhat[i];
                dbeta[ch] += dy[i];
            }
        }
    }
    let mut dx = vec![0.0; dy.len()];
    for s in 0..n {
        for ch in 0..c {
            let base = (s * c + ch) * plane;
            let g = gamma[ch] * inv_std[ch];
            for i in base..base + plane {
                dx[i] = if frozen {
                    g * dy[i]
                } else {
                    g * (dy[i] - dbeta[ch] / count - xhat[i] * dgamma[ch] / count)
                };
            }
        }
    }
    (dx, dgamma, dbeta)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn direct_conv(x: &[f64], g: &ConvGeom, w: &[f64]) -> Vec<f64> {
        let (ho, wo) = g.out_hw();
        let mut out = vec![0.0; g.c_out * ho * wo];
        for co in 0..g.c_out {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = 0.0;
                    for ci in 0..g.c_in {
                        for ky in 0..g.k {
                            for kx in 0..g.k {
                                let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                                let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < g.h && (ix as usize) < g.w {
                                    acc += x[(ci * g.h + iy as usize) * g.w + ix as usize]
                                        * w[((co * g.c_in + ci) * g.k + ky) * g.k + kx];
                                }
                            }
                        }
                    }
                    out[(co * ho + oy) * wo + ox] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn im2col_conv_matches_direct_loops() {
        for &(k, stride, pad) in &[(3, 1, 1), (3, 2, 1), (1, 1, 0), (7, 2, 3), (2, 2, 0)] {
            let g = ConvGeom {
                c_in: 2,
                h: 9,
                w: 7,
                c_out: 3,
                k,
                stride,
                pad,
            };
            let x: Vec<f64> = (0..2 * 9 * 7).map(|i| ((i * 7919) % 13) as f64 / 13.0 - 0.5).collect();
            let w: Vec<f64> = (0..3 * 2 * k * k)
                .map(|i| ((i * 31) % 11) as f64 / 11.0 - 0.4)
                .collect();
            let got = conv2d_forward(&x, 1, &g, &w, None);
            let want = direct_conv(&x, &g, &w);
            assert_eq!(got.len(), want.len());
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12, "k={k} s={stride} p={pad}");
            }
        }
    }

    #[test]
    fn max_pool_picks_window_maximum() {
        let x: Vec<f64> = (0..16).map(|v| v as f64).collect();
        let (out, arg, ho, wo) = max_pool_forward(&x, (1, 1, 4, 4), 2, 2, 0);
        assert_eq!((ho, wo), (2, 2));
        assert_eq!(out, vec![5.0, 7.0, 13.0, 15.0]);
        assert_eq!(arg, vec![5, 7, 13, 15]);
    }

    #[test]
    fn upsample_then_avg_pool_is_identity() {
        let dims = (2, 3, 4, 5);
        let x: Vec<f64> = (0..120).map(|v| (v as f64).sqrt()).collect();
        let up = upsample2_forward(&x, dims);
        let down = avg_pool2_forward(&up, (2, 3, 8, 10));
        for (a, b) in down.iter().zip(&x) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
