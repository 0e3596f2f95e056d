//! Seeded synthetic radiographs for desk-scale runs.
//!
//! A "chest" is a noisy dark background with two bright, vertically
//! elongated ellipses on either side of the vertical centerline. The
//! classification variant adds one coloured marker disk per positive label
//! inside the lungs. Marker colours are chosen with the same channel mean as
//! the lung tissue they sit on, so a grayscale localizer cannot see them.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::labels::{CleanLabelVector, LABEL_COUNT};
use crate::grid::{BinaryMask, ImageGrid};
use crate::{Error, Result};

pub const MIN_SIDE: usize = 32;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SyntheticOptions {
    /// Bright blobs near the image corners that are also painted into the
    /// mask, imitating spurious localizations.
    pub distractors: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticPair {
    /// Single-channel radiograph.
    pub image: ImageGrid,
    /// Lungs plus any distractor blobs.
    pub mask: BinaryMask,
    /// The two lung ellipses only.
    pub lungs: BinaryMask,
}

#[derive(Clone, Copy, Debug)]
struct Ellipse {
    cy: f64,
    cx: f64,
    ry: f64,
    rx: f64,
}

impl Ellipse {
    fn contains(&self, y: f64, x: f64) -> bool {
        let dy = (y - self.cy) / self.ry;
        let dx = (x - self.cx) / self.rx;
        dy * dy + dx * dx <= 1.0
    }
}

struct Chest {
    gray: Vec<f32>,
    lungs: BinaryMask,
    lung_level: f32,
    background_level: f32,
}

fn check_size(h: usize, w: usize) -> Result<()> {
    if h < MIN_SIDE || w < MIN_SIDE {
        return Err(Error::Parameter(format!(
            "synthetic images need both sides >= {MIN_SIDE}, got {h}x{w}"
        )));
    }
    Ok(())
}

fn render_chest(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Chest {
    let (hf, wf) = (h as f64, w as f64);
    let center = ((hf - 1.0) / 2.0, (wf - 1.0) / 2.0);
    let mut ellipses = [Ellipse {
        cy: 0.0,
        cx: 0.0,
        ry: 1.0,
        rx: 1.0,
    }; 2];
    for (side, e) in [-1.0, 1.0].into_iter().zip(ellipses.iter_mut()) {
        *e = Ellipse {
            cy: center.0 + hf * rng.random_range(-0.05..0.05),
            cx: center.1 + side * wf * rng.random_range(0.22..0.27),
            ry: hf * rng.random_range(0.22..0.30),
            rx: wf * rng.random_range(0.12..0.17),
        };
    }
    let lungs = BinaryMask::from_fn(h, w, |y, x| ellipses.iter().any(|e| e.contains(y as f64, x as f64)));

    let lung_level = rng.random_range(0.55..0.70) as f32;
    let background_level = rng.random_range(0.15..0.30) as f32;
    let gradient = rng.random_range(-0.06..0.06) as f32;
    let noise = Normal::new(0.0f32, 0.05).unwrap();
    let mut gray = Vec::with_capacity(h * w);
    for y in 0..h {
        let shade = gradient * (y as f32 / h as f32 - 0.5);
        for x in 0..w {
            let base = if lungs.get(y, x) { lung_level } else { background_level };
            gray.push((base + shade + noise.sample(rng)).clamp(0.0, 1.0));
        }
    }
    Chest {
        gray,
        lungs,
        lung_level,
        background_level,
    }
}

fn disk(h: usize, w: usize, cy: f64, cx: f64, r: f64) -> impl Iterator<Item = (usize, usize)> {
    let y0 = (cy - r).floor().max(0.0) as usize;
    let y1 = ((cy + r).ceil() as usize).min(h - 1);
    let x0 = (cx - r).floor().max(0.0) as usize;
    let x1 = ((cx + r).ceil() as usize).min(w - 1);
    (y0..=y1)
        .flat_map(move |y| (x0..=x1).map(move |x| (y, x)))
        .filter(move |&(y, x)| (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2) <= r * r)
}

fn disk_fits(mask: &BinaryMask, cy: f64, cx: f64, r: f64) -> bool {
    let (h, w) = mask.dims();
    if cy - r < 0.0 || cx - r < 0.0 || cy + r > (h - 1) as f64 || cx + r > (w - 1) as f64 {
        return false;
    }
    disk(h, w, cy, cx, r).all(|(y, x)| mask.get(y, x))
}

/// One synthetic radiograph/mask pair with default options.
pub fn generate_synthetic_pair(seed: u64, size: (usize, usize)) -> Result<(ImageGrid, BinaryMask)> {
    let pair = generate_synthetic_sample(seed, size, &SyntheticOptions::default())?;
    Ok((pair.image, pair.mask))
}

pub fn generate_synthetic_sample(
    seed: u64,
    (h, w): (usize, usize),
    options: &SyntheticOptions,
) -> Result<SyntheticPair> {
    check_size(h, w)?;
    if options.distractors > 4 {
        return Err(Error::Parameter(format!(
            "at most 4 distractors, got {}",
            options.distractors
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chest = render_chest(&mut rng, h, w);
    let mut mask = chest.lungs.clone();

    let r = (0.04 * w.min(h) as f64).max(1.5);
    let corners = [(0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0)];
    for &(fy, fx) in corners.iter().take(options.distractors) {
        let inset = r + 1.0 + rng.random_range(0.0..1.5);
        let cy = if fy == 0.0 { inset } else { h as f64 - 1.0 - inset };
        let cx = if fx == 0.0 { inset } else { w as f64 - 1.0 - inset };
        for (y, x) in disk(h, w, cy, cx, r) {
            mask.set(y, x, true);
            chest.gray[y * w + x] = (chest.lung_level + rng.random_range(-0.05..0.05)).clamp(0.0, 1.0);
        }
    }
    Ok(SyntheticPair {
        image: ImageGrid::new(1, h, w, chest.gray)?,
        mask,
        lungs: chest.lungs,
    })
}

/// Where marker disks go and how they are coloured.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum MarkerLayout {
    /// Small gray-neutral disks strictly inside the lungs of a synthetic
    /// chest. A grayscale view of the image carries no label signal.
    #[default]
    Lungs,
    /// Larger disks in vivid, well separated colours on a flat gray field
    /// with mild noise. The lung mask of such a sample is empty.
    Plain,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MarkerOptions {
    /// Spurious markers placed outside the lungs, independent of labels.
    /// Ignored by [`MarkerLayout::Plain`].
    pub outside_noise: usize,
    pub layout: MarkerLayout,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MarkerSample {
    /// Three-channel radiograph.
    pub image: ImageGrid,
    pub lungs: BinaryMask,
}

/// RGB offset of observation `j`'s marker. The offsets lie on a circle in
/// the plane orthogonal to gray, so they have zero channel sum and no two
/// colours are linearly confusable.
pub fn marker_chroma(j: usize) -> [f32; 3] {
    const RADIUS: f64 = 0.35;
    let theta = 2.0 * PI * j as f64 / LABEL_COUNT as f64;
    let u = [1.0 / 2f64.sqrt(), -1.0 / 2f64.sqrt(), 0.0];
    let v = [1.0 / 6f64.sqrt(), 1.0 / 6f64.sqrt(), -2.0 / 6f64.sqrt()];
    [0, 1, 2].map(|c| (RADIUS * (theta.cos() * u[c] + theta.sin() * v[c])) as f32)
}

/// Absolute RGB colour of observation `j`'s marker in the plain layout:
/// the eight corners of the unit cube followed by its six face centres.
pub fn marker_color(j: usize) -> [f32; 3] {
    const PALETTE: [[f32; 3]; LABEL_COUNT] = [
        [0.0, 0.0, 0.0],
        [1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, 0.0, 1.0],
        [1.0, 1.0, 0.0],
        [1.0, 0.0, 1.0],
        [0.0, 1.0, 1.0],
        [1.0, 1.0, 1.0],
        [0.5, 0.5, 0.0],
        [0.5, 0.5, 1.0],
        [0.5, 0.0, 0.5],
        [0.5, 1.0, 0.5],
        [0.0, 0.5, 0.5],
        [1.0, 0.5, 0.5],
    ];
    PALETTE[j]
}

/// Picks a centre from `centres` at least `spacing` away from every placed
/// one, or any centre when none is clear.
fn pick_centre<R: Rng + ?Sized>(
    rng: &mut R,
    centres: &[(f64, f64)],
    placed: &[(f64, f64)],
    spacing: f64,
) -> Option<(f64, f64)> {
    let clear: Vec<(f64, f64)> = centres
        .iter()
        .copied()
        .filter(|&(y, x)| placed.iter().all(|&(py, px)| (py - y).hypot(px - x) >= spacing))
        .collect();
    let pool = if clear.is_empty() { centres } else { &clear };
    pool.get(rng.random_range(0..pool.len().max(1))).copied()
}

fn generate_plain_marker_sample<R: Rng + ?Sized>(
    rng: &mut R,
    (h, w): (usize, usize),
    labels: &CleanLabelVector,
) -> Result<MarkerSample> {
    let plane = h * w;
    let noise = Normal::new(0.0, 0.03).expect("valid sigma");
    let mut rgb = vec![0.0f32; 3 * plane];
    for i in 0..plane {
        let v = (0.5 + noise.sample(rng) as f32).clamp(0.0, 1.0);
        for c in 0..3 {
            rgb[c * plane + i] = v;
        }
    }
    let r = 0.07 * w.min(h) as f64;
    let margin = r + 1.0;
    let centres: Vec<(f64, f64)> = (0..h)
        .flat_map(|y| (0..w).map(move |x| (y as f64, x as f64)))
        .filter(|&(y, x)| y >= margin && x >= margin && y <= h as f64 - 1.0 - margin && x <= w as f64 - 1.0 - margin)
        .collect();
    let mut placed = Vec::new();
    for j in (0..LABEL_COUNT).filter(|&j| labels.0[j] == 1) {
        let (cy, cx) = pick_centre(rng, &centres, &placed, 2.0 * r + 1.5).expect("image is at least the minimum size");
        placed.push((cy, cx));
        let color = marker_color(j);
        for (y, x) in disk(h, w, cy, cx, r) {
            for c in 0..3 {
                rgb[c * plane + y * w + x] = color[c];
            }
        }
    }
    Ok(MarkerSample {
        image: ImageGrid::new(3, h, w, rgb)?,
        lungs: BinaryMask::empty(h, w),
    })
}

/// Image with a marker disk for every positive label, laid out according
/// to `options.layout`.
pub fn generate_marker_sample(
    seed: u64,
    (h, w): (usize, usize),
    labels: &CleanLabelVector,
    options: &MarkerOptions,
) -> Result<MarkerSample> {
    check_size(h, w)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if options.layout == MarkerLayout::Plain {
        return generate_plain_marker_sample(&mut rng, (h, w), labels);
    }
    let chest = render_chest(&mut rng, h, w);
    let plane = h * w;
    let mut rgb = chest.gray.repeat(3);
    let r = (0.035 * w.min(h) as f64).max(1.5);
    let mut placed: Vec<(f64, f64)> = Vec::new();

    let paint = |rgb: &mut Vec<f32>, cy: f64, cx: f64, level: f32, j: usize| {
        let chroma = marker_chroma(j);
        for (y, x) in disk(h, w, cy, cx, r) {
            for c in 0..3 {
                rgb[c * plane + y * w + x] = (level + chroma[c]).clamp(0.0, 1.0);
            }
        }
    };

    // Centres whose disk, grown by one pixel, lies entirely in a lung.
    let centres: Vec<(f64, f64)> = (0..h)
        .flat_map(|y| (0..w).map(move |x| (y as f64, x as f64)))
        .filter(|&(y, x)| chest.lungs.get(y as usize, x as usize))
        .filter(|&(y, x)| disk_fits(&chest.lungs, y, x, r + 1.0))
        .collect();
    for j in (0..LABEL_COUNT).filter(|&j| labels.0[j] == 1) {
        // Crowded lungs fall back to overlapping an earlier marker.
        let Some((cy, cx)) = pick_centre(&mut rng, &centres, &placed, 2.0 * r + 1.5) else {
            return Err(Error::Parameter(format!(
                "lungs too small for a marker of radius {r:.1}"
            )));
        };
        placed.push((cy, cx));
        paint(&mut rgb, cy, cx, chest.lung_level, j);
    }

    let mut noise_left = options.outside_noise;
    let mut tries = 0;
    while noise_left > 0 && tries < 400 {
        tries += 1;
        let cy = rng.random_range(r..h as f64 - 1.0 - r);
        let cx = rng.random_range(r..w as f64 - 1.0 - r);
        let clear_of_lungs = disk(h, w, cy, cx, r + 1.5).all(|(y, x)| !chest.lungs.get(y, x));
        if clear_of_lungs {
            let j = rng.random_range(0..LABEL_COUNT);
            paint(&mut rgb, cy, cx, chest.background_level, j);
            noise_left -= 1;
        }
    }

    Ok(MarkerSample {
        image: ImageGrid::new(3, h, w, rgb)?,
        lungs: chest.lungs,
    })
}

/// Draws a label vector with each slot positive independently with
/// probability `positive_rate`.
pub fn random_labels<R: Rng + ?Sized>(rng: &mut R, positive_rate: f64) -> CleanLabelVector {
    let mut v = [0u8; LABEL_COUNT];
    for slot in v.iter_mut() {
        *slot = (rng.random::<f64>() < positive_rate) as u8;
    }
    CleanLabelVector(v)
}

/// `n` labelled marker samples. Labels and per-sample seeds are drawn from
/// one stream seeded by `seed`.
pub fn generate_marker_dataset(
    seed: u64,
    n: usize,
    size: (usize, usize),
    positive_rate: f64,
    options: &MarkerOptions,
) -> Result<Vec<(MarkerSample, CleanLabelVector)>> {
    if !(0.0..=1.0).contains(&positive_rate) {
        return Err(Error::Parameter(format!(
            "positive rate {positive_rate} outside [0, 1]"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let labels = random_labels(&mut rng, positive_rate);
            let sample_seed = rng.random::<u64>();
            Ok((generate_marker_sample(sample_seed, size, &labels, options)?, labels))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask_ops::{connected_components, retain_two_regions};

    #[test]
    fn same_seed_same_pair() {
        assert_eq!(
            generate_synthetic_pair(5, (64, 64)).unwrap(),
            generate_synthetic_pair(5, (64, 64)).unwrap()
        );
        assert_ne!(
            generate_synthetic_pair(5, (64, 64)).unwrap(),
            generate_synthetic_pair(6, (64, 64)).unwrap()
        );
    }

    #[test]
    fn lungs_are_two_components() {
        for seed in 0..50 {
            for size in [(32, 32), (64, 64), (48, 80)] {
                let (_, mask) = generate_synthetic_pair(seed, size).unwrap();
                assert_eq!(connected_components(&mask).len(), 2, "seed {seed} size {size:?}");
            }
        }
    }

    #[test]
    fn distractors_are_removed_by_retention() {
        for seed in 0..30 {
            for n in 1..=4 {
                let s = generate_synthetic_sample(seed, (64, 64), &SyntheticOptions { distractors: n }).unwrap();
                assert_eq!(connected_components(&s.mask).len(), 2 + n, "seed {seed}");
                assert_eq!(retain_two_regions(&s.mask), s.lungs, "seed {seed}");
            }
        }
    }

    #[test]
    fn rejects_tiny_images() {
        assert!(matches!(generate_synthetic_pair(0, (31, 64)), Err(Error::Parameter(_))));
    }

    #[test]
    fn marker_colours_are_gray_neutral_and_distinct() {
        for j in 0..LABEL_COUNT {
            let c = marker_chroma(j);
            assert!((c[0] + c[1] + c[2]).abs() < 1e-6);
            for k in 0..j {
                let d = marker_chroma(k);
                let dist: f32 = c.iter().zip(&d).map(|(a, b)| (a - b).powi(2)).sum::<f32>().sqrt();
                assert!(dist > 0.1);
            }
        }
    }

    #[test]
    fn plain_layout_paints_each_positive_colour() {
        let mut labels = CleanLabelVector::default();
        for j in [0, 7, 9] {
            labels.0[j] = 1;
        }
        let options = MarkerOptions {
            layout: MarkerLayout::Plain,
            ..Default::default()
        };
        let s = generate_marker_sample(2, (64, 64), &labels, &options).unwrap();
        assert_eq!(s.lungs.count(), 0);
        let plane = 64 * 64;
        let px = |i: usize| [0, 1, 2].map(|c| s.image.data()[c * plane + i]);
        for j in 0..LABEL_COUNT {
            let hits = (0..plane).filter(|&i| px(i) == marker_color(j)).count();
            if labels.0[j] == 1 {
                assert!(hits >= 40, "slot {j}: {hits}");
            } else {
                assert!(hits < 3, "slot {j}: {hits}");
            }
        }
        let all = CleanLabelVector([1; LABEL_COUNT]);
        assert!(generate_marker_sample(9, (32, 32), &all, &options).is_ok());
    }

    #[test]
    fn markers_sit_inside_the_lungs() {
        let mut labels = CleanLabelVector::default();
        labels.0[0] = 1;
        labels.0[5] = 1;
        labels.0[13] = 1;
        let s = generate_marker_sample(
            3,
            (64, 64),
            &labels,
            &MarkerOptions {
                outside_noise: 4,
                ..Default::default()
            },
        )
        .unwrap();
        let gray = s.image.to_grayscale();
        let plane = 64 * 64;
        let mut coloured_inside = 0;
        for i in 0..plane {
            let (y, x) = (i / 64, i % 64);
            let chroma =
                (s.image.data()[i] - gray.data()[i]).abs() + (s.image.data()[plane + i] - gray.data()[i]).abs();
            if chroma > 0.05 && s.lungs.get(y, x) {
                coloured_inside += 1;
            }
        }
        assert!(coloured_inside >= 3 * 9, "{coloured_inside}");
    }
}
