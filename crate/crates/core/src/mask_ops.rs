//! Binary mask algebra and post-processing: left/right fusion, overlay on
//! the source radiograph, 8-connected component analysis, nearest-two
//! region retention and centerline mirroring.

use crate::grid::{BinaryMask, ImageGrid, ProbabilityMap};
use crate::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Pixel-wise OR of two masks.
pub fn combine(left: &BinaryMask, right: &BinaryMask) -> Result<BinaryMask> {
    if left.dims() != right.dims() {
        return Err(Error::dimension(left.dims(), right.dims()));
    }
    let data = left.data().iter().zip(right.data()).map(|(a, b)| a | b).collect();
    BinaryMask::new(left.height(), left.width(), data)
}

/// Foreground wherever the probability reaches `threshold`.
pub fn binarize(probabilities: &ProbabilityMap, threshold: f64) -> Result<BinaryMask> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Parameter(format!("threshold {threshold} outside (0, 1)")));
    }
    let data = probabilities.values.iter().map(|&p| (p >= threshold) as u8).collect();
    BinaryMask::new(probabilities.height, probabilities.width, data)
}

/// Keeps image pixels under the mask and zeroes the rest, in every channel.
pub fn overlay(image: &ImageGrid, mask: &BinaryMask) -> Result<ImageGrid> {
    let (c, h, w) = image.dims();
    if (h, w) != mask.dims() {
        return Err(Error::dimension((h, w), mask.dims()));
    }
    let plane = h * w;
    let data = image
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| if mask.data()[i % plane] == 1 { v } else { 0.0 })
        .collect();
    ImageGrid::new(c, h, w, data)
}

/// Reflection across the vertical centerline: column `c` maps to
/// `width - 1 - c`.
pub fn reflect(mask: &BinaryMask) -> BinaryMask {
    let w = mask.width();
    BinaryMask::from_fn(mask.height(), w, |y, x| mask.get(y, w - 1 - x))
}

/// A maximal 8-connected set of foreground pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct Component {
    /// `(row, col)` pairs in raster order.
    pub pixels: Vec<(usize, usize)>,
    pub centroid: (f64, f64),
    /// Euclidean distance from the centroid to `((h-1)/2, (w-1)/2)`.
    pub center_distance: f64,
}

impl Component {
    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

fn union(parent: &mut [usize], a: usize, b: usize) {
    let (ra, rb) = (find(parent, a), find(parent, b));
    if ra != rb {
        // Keep the smaller root so labels follow raster order.
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        parent[hi] = lo;
    }
}

/// Two-pass union-find labeling under 8-connectivity. Components are
/// returned in raster order of their first pixel.
pub fn connected_components(mask: &BinaryMask) -> Vec<Component> {
    let (h, w) = mask.dims();
    let mut label = vec![usize::MAX; h * w];
    let mut parent: Vec<usize> = Vec::new();

    for y in 0..h {
        for x in 0..w {
            if !mask.get(y, x) {
                continue;
            }
            // Already-visited neighbours: W, NW, N, NE.
            let mut neighbours = [usize::MAX; 4];
            if x > 0 {
                neighbours[0] = label[y * w + x - 1];
            }
            if y > 0 {
                let up = (y - 1) * w;
                if x > 0 {
                    neighbours[1] = label[up + x - 1];
                }
                neighbours[2] = label[up + x];
                if x + 1 < w {
                    neighbours[3] = label[up + x + 1];
                }
            }
            let mut current = usize::MAX;
            for &n in neighbours.iter().filter(|&&n| n != usize::MAX) {
                if current == usize::MAX {
                    current = n;
                } else {
                    union(&mut parent, current, n);
                }
            }
            if current == usize::MAX {
                current = parent.len();
                parent.push(current);
            }
            label[y * w + x] = current;
        }
    }

    let mut index_of_root = vec![usize::MAX; parent.len()];
    let mut groups: Vec<Vec<(usize, usize)>> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let l = label[y * w + x];
            if l == usize::MAX {
                continue;
            }
            let root = find(&mut parent, l);
            if index_of_root[root] == usize::MAX {
                index_of_root[root] = groups.len();
                groups.push(Vec::new());
            }
            groups[index_of_root[root]].push((y, x));
        }
    }

    let center = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    groups
        .into_iter()
        .map(|pixels| {
            let n = pixels.len() as f64;
            let cy = pixels.iter().map(|p| p.0 as f64).sum::<f64>() / n;
            let cx = pixels.iter().map(|p| p.1 as f64).sum::<f64>() / n;
            let center_distance = ((cy - center.0).powi(2) + (cx - center.1).powi(2)).sqrt();
            Component {
                pixels,
                centroid: (cy, cx),
                center_distance,
            }
        })
        .collect()
}

fn paint(h: usize, w: usize, components: &[&Component]) -> BinaryMask {
    let mut out = BinaryMask::empty(h, w);
    for c in components {
        for &(y, x) in &c.pixels {
            out.set(y, x, true);
        }
    }
    out
}

/// Keeps the two components whose centroids lie closest to the image
/// center. Equal distances prefer the larger component, then the earlier
/// one in raster order.
pub fn retain_two_regions(mask: &BinaryMask) -> BinaryMask {
    let components = connected_components(mask);
    if components.len() <= 2 {
        return mask.clone();
    }
    let mut order: Vec<usize> = (0..components.len()).collect();
    order.sort_by(|&a, &b| {
        let (ca, cb) = (&components[a], &components[b]);
        ca.center_distance
            .total_cmp(&cb.center_distance)
            .then(cb.len().cmp(&ca.len()))
            .then(a.cmp(&b))
    });
    let kept: Vec<&Component> = order[..2].iter().map(|&i| &components[i]).collect();
    paint(mask.height(), mask.width(), &kept)
}

/// When exactly one region was found, adds its mirror image across the
/// vertical centerline; any other mask is returned unchanged.
pub fn mirror_fill(mask: &BinaryMask) -> BinaryMask {
    if connected_components(mask).len() != 1 {
        return mask.clone();
    }
    combine(mask, &reflect(mask)).expect("reflection preserves dimensions")
}
