//! Slow, obviously-correct reference implementations.

use std::collections::{BTreeSet, HashSet};

use lednet_core::BinaryMask;
use rand::Rng;

pub fn foreground(mask: &BinaryMask) -> HashSet<(usize, usize)> {
    let (h, w) = mask.dims();
    (0..h)
        .flat_map(|y| (0..w).map(move |x| (y, x)))
        .filter(|&(y, x)| mask.get(y, x))
        .collect()
}

pub fn iou(a: &BinaryMask, b: &BinaryMask) -> f64 {
    let (sa, sb) = (foreground(a), foreground(b));
    let union = sa.union(&sb).count();
    if union == 0 {
        return 1.0;
    }
    sa.intersection(&sb).count() as f64 / union as f64
}

pub fn dice(a: &BinaryMask, b: &BinaryMask) -> f64 {
    let (sa, sb) = (foreground(a), foreground(b));
    if sa.is_empty() && sb.is_empty() {
        return 1.0;
    }
    2.0 * sa.intersection(&sb).count() as f64 / (sa.len() + sb.len()) as f64
}

pub fn bce(p: &[f64], y: &[f64], eps: f64) -> f64 {
    if p.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    for i in 0..p.len() {
        let q = p[i].max(eps).min(1.0 - eps);
        total += if y[i] == 1.0 { -q.ln() } else { -(1.0 - q).ln() };
    }
    total / p.len() as f64
}

pub fn accuracy(p: &[f64], y: &[f64]) -> f64 {
    if p.is_empty() {
        return 1.0;
    }
    let hits = (0..p.len()).filter(|&i| (p[i] >= 0.5) == (y[i] == 1.0)).count();
    hits as f64 / p.len() as f64
}

/// 8-connected components by depth-first flood fill, in order of their
/// first pixel in raster order.
pub fn components(mask: &BinaryMask) -> Vec<BTreeSet<(usize, usize)>> {
    let (h, w) = mask.dims();
    let mut seen = vec![vec![false; w]; h];
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !mask.get(y, x) || seen[y][x] {
                continue;
            }
            let mut comp = BTreeSet::new();
            let mut stack = vec![(y, x)];
            seen[y][x] = true;
            while let Some((cy, cx)) = stack.pop() {
                comp.insert((cy, cx));
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let (ny, nx) = (cy as i64 + dy, cx as i64 + dx);
                        if ny < 0 || nx < 0 || ny >= h as i64 || nx >= w as i64 {
                            continue;
                        }
                        let (ny, nx) = (ny as usize, nx as usize);
                        if mask.get(ny, nx) && !seen[ny][nx] {
                            seen[ny][nx] = true;
                            stack.push((ny, nx));
                        }
                    }
                }
            }
            out.push(comp);
        }
    }
    out
}

fn paint(h: usize, w: usize, pixels: impl IntoIterator<Item = (usize, usize)>) -> BinaryMask {
    let set: HashSet<_> = pixels.into_iter().collect();
    BinaryMask::from_fn(h, w, |y, x| set.contains(&(y, x)))
}

pub fn retain_two(mask: &BinaryMask) -> BinaryMask {
    let comps = components(mask);
    if comps.len() <= 2 {
        return mask.clone();
    }
    let (h, w) = mask.dims();
    let (my, mx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let mut keyed: Vec<(f64, usize, usize)> = comps
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let n = c.len() as f64;
            let cy = c.iter().map(|p| p.0 as f64).sum::<f64>() / n;
            let cx = c.iter().map(|p| p.1 as f64).sum::<f64>() / n;
            ((cy - my).hypot(cx - mx), c.len(), i)
        })
        .collect();
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)).then(a.2.cmp(&b.2)));
    paint(h, w, keyed[..2].iter().flat_map(|k| comps[k.2].iter().copied()))
}

pub fn reflect(mask: &BinaryMask) -> BinaryMask {
    let (h, w) = mask.dims();
    paint(h, w, foreground(mask).into_iter().map(|(y, x)| (y, w - 1 - x)))
}

pub fn mirror_fill(mask: &BinaryMask) -> BinaryMask {
    if components(mask).len() != 1 {
        return mask.clone();
    }
    let (h, w) = mask.dims();
    paint(h, w, foreground(mask).into_iter().chain(foreground(&reflect(mask))))
}

pub fn is_subset(a: &BinaryMask, b: &BinaryMask) -> bool {
    foreground(a).is_subset(&foreground(b))
}

/// A random mask made of a few rectangles and sprinkled pixels, so that
/// component counts vary widely.
pub fn random_mask<R: Rng + ?Sized>(rng: &mut R, h: usize, w: usize) -> BinaryMask {
    let mut m = BinaryMask::empty(h, w);
    for _ in 0..rng.random_range(0..6) {
        let (y0, x0) = (rng.random_range(0..h), rng.random_range(0..w));
        let (y1, x1) = (
            (y0 + rng.random_range(1..h / 3 + 2)).min(h),
            (x0 + rng.random_range(1..w / 3 + 2)).min(w),
        );
        for y in y0..y1 {
            for x in x0..x1 {
                m.set(y, x, true);
            }
        }
    }
    let density = rng.random_range(0.0..0.08);
    for y in 0..h {
        for x in 0..w {
            if rng.random::<f64>() < density {
                m.set(y, x, true);
            }
        }
    }
    m
}
