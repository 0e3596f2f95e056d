use rand::Rng;

use super::labels::CleanLabelVector;
use crate::grid::{BinaryMask, ImageGrid};
use crate::{Error, Result};

/// Side length used by the classification pipeline.
pub const DEFAULT_SIZE: usize = 256;
pub const DEFAULT_FLIP_PROBABILITY: f64 = 0.5;

fn check_target(height: usize, width: usize) -> Result<()> {
    if height == 0 || width == 0 {
        return Err(Error::Parameter(format!(
            "resize target {height}x{width} has a zero dimension"
        )));
    }
    Ok(())
}

/// Half-pixel-centred source coordinate and the two neighbouring indices.
fn sample_axis(dst: usize, src_len: usize, dst_len: usize) -> (usize, usize, f32) {
    let scale = src_len as f64 / dst_len as f64;
    let pos = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (src_len - 1) as f64);
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(src_len - 1);
    (lo, hi, (pos - lo as f64) as f32)
}

/// Bilinear resize of every channel.
pub fn resize(image: &ImageGrid, height: usize, width: usize) -> Result<ImageGrid> {
    check_target(height, width)?;
    let (c, h, w) = image.dims();
    if (h, w) == (height, width) {
        return Ok(image.clone());
    }
    let cols: Vec<_> = (0..width).map(|x| sample_axis(x, w, width)).collect();
    let rows: Vec<_> = (0..height).map(|y| sample_axis(y, h, height)).collect();
    Ok(ImageGrid::from_fn(c, height, width, |ch, y, x| {
        let (y0, y1, fy) = rows[y];
        let (x0, x1, fx) = cols[x];
        let top = image.get(ch, y0, x0) * (1.0 - fx) + image.get(ch, y0, x1) * fx;
        let bottom = image.get(ch, y1, x0) * (1.0 - fx) + image.get(ch, y1, x1) * fx;
        top * (1.0 - fy) + bottom * fy
    }))
}

/// Nearest-neighbour resize, which keeps the mask binary.
pub fn resize_mask(mask: &BinaryMask, height: usize, width: usize) -> Result<BinaryMask> {
    check_target(height, width)?;
    let (h, w) = mask.dims();
    let nearest = |dst: usize, src_len: usize, dst_len: usize| {
        (((dst as f64 + 0.5) * src_len as f64 / dst_len as f64) as usize).min(src_len - 1)
    };
    Ok(BinaryMask::from_fn(height, width, |y, x| {
        mask.get(nearest(y, h, height), nearest(x, w, width))
    }))
}

/// Mirror image across the vertical centerline.
pub fn hflip(image: &ImageGrid) -> ImageGrid {
    let (c, h, w) = image.dims();
    ImageGrid::from_fn(c, h, w, |ch, y, x| image.get(ch, y, w - 1 - x))
}

/// Flips the image with probability `p`. Labels are never changed.
pub fn random_hflip<R: Rng + ?Sized>(
    image: &ImageGrid,
    label: &CleanLabelVector,
    p: f64,
    rng: &mut R,
) -> Result<(ImageGrid, CleanLabelVector)> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Parameter(format!("flip probability {p} outside [0, 1]")));
    }
    let flip = rng.random::<f64>() < p;
    Ok((if flip { hflip(image) } else { image.clone() }, *label))
}

/// CDF-based histogram equalization over 256 bins of a single-channel
/// image. A constant image maps to all zeros.
pub fn equalize_histogram(image: &ImageGrid) -> Result<ImageGrid> {
    let (c, h, w) = image.dims();
    if c != 1 {
        return Err(Error::Parameter(format!(
            "histogram equalization needs one channel, got {c}"
        )));
    }
    let bin = |v: f32| (v * 255.0).round().clamp(0.0, 255.0) as usize;
    let mut hist = [0usize; 256];
    for &v in image.data() {
        hist[bin(v)] += 1;
    }
    let mut cdf = [0usize; 256];
    let mut acc = 0;
    for (i, &count) in hist.iter().enumerate() {
        acc += count;
        cdf[i] = acc;
    }
    let total = acc;
    let cdf_min = hist
        .iter()
        .zip(&cdf)
        .find(|(&n, _)| n > 0)
        .map(|(_, &c)| c)
        .unwrap_or(0);
    let denom = total - cdf_min;
    let lut: Vec<f32> = cdf
        .iter()
        .map(|&c| {
            if denom == 0 {
                0.0
            } else {
                let level = ((c.saturating_sub(cdf_min)) as f64 / denom as f64 * 255.0).round();
                (level / 255.0) as f32
            }
        })
        .collect();
    ImageGrid::new(1, h, w, image.data().iter().map(|&v| lut[bin(v)]).collect())
}
