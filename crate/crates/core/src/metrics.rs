//! Evaluation and loss functions shared by the localizer and the
//! classifier. All reductions are means over every element.

use crate::grid::BinaryMask;
use crate::{Error, Result};

/// Probability clamp applied before taking logarithms in [`bce_loss`].
pub const BCE_EPS: f64 = 1e-7;

/// Predictions in `[0, 1]` paired with `{0, 1}` targets of the same length.
#[derive(Clone, Copy, Debug)]
pub struct ScorePair<'a> {
    prediction: &'a [f64],
    target: &'a [f64],
}

impl<'a> ScorePair<'a> {
    pub fn new(prediction: &'a [f64], target: &'a [f64]) -> Result<Self> {
        if prediction.len() != target.len() {
            return Err(Error::dimension(prediction.len(), target.len()));
        }
        if let Some(p) = prediction.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Parameter(format!("prediction {p} outside [0, 1]")));
        }
        if let Some(t) = target.iter().find(|t| **t != 0.0 && **t != 1.0) {
            return Err(Error::Parameter(format!("target {t} is not 0 or 1")));
        }
        Ok(Self { prediction, target })
    }

    pub fn prediction(&self) -> &'a [f64] {
        self.prediction
    }

    pub fn target(&self) -> &'a [f64] {
        self.target
    }

    pub fn len(&self) -> usize {
        self.prediction.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prediction.is_empty()
    }
}

fn overlap_counts(a: &BinaryMask, b: &BinaryMask) -> Result<(usize, usize, usize)> {
    if a.dims() != b.dims() {
        return Err(Error::dimension(a.dims(), b.dims()));
    }
    let mut inter = 0;
    let mut count_a = 0;
    let mut count_b = 0;
    for (&x, &y) in a.data().iter().zip(b.data()) {
        inter += (x & y) as usize;
        count_a += x as usize;
        count_b += y as usize;
    }
    Ok((inter, count_a, count_b))
}

/// Intersection over union (Jaccard index). Two empty masks agree
/// perfectly and score 1.
pub fn iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    let (inter, ca, cb) = overlap_counts(a, b)?;
    let union = ca + cb - inter;
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Dice coefficient `2|a∩b| / (|a| + |b|)`; 1 for two empty masks.
pub fn dice(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    let (inter, ca, cb) = overlap_counts(a, b)?;
    let total = ca + cb;
    Ok(if total == 0 {
        1.0
    } else {
        2.0 * inter as f64 / total as f64
    })
}

/// Mean binary cross-entropy with predictions clamped to `[ε, 1-ε]`.
/// An empty pair has zero loss.
pub fn bce_loss(pair: &ScorePair<'_>) -> f64 {
    if pair.is_empty() {
        return 0.0;
    }
    let total: f64 = pair
        .prediction
        .iter()
        .zip(pair.target)
        .map(|(&p, &y)| {
            let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum();
    total / pair.len() as f64
}

/// Gradient of [`bce_loss`] with respect to each prediction. Zero where the
/// clamp is active.
pub fn bce_gradient(pair: &ScorePair<'_>) -> Vec<f64> {
    let n = pair.len().max(1) as f64;
    pair.prediction
        .iter()
        .zip(pair.target)
        .map(|(&p, &y)| {
            if p <= BCE_EPS || p >= 1.0 - BCE_EPS {
                0.0
            } else {
                (-y / p + (1.0 - y) / (1.0 - p)) / n
            }
        })
        .collect()
}

/// Rounds a probability to a hard label; ties at 0.5 go to 1.
pub fn round_prediction(p: f64) -> f64 {
    if p >= 0.5 {
        1.0
    } else {
        0.0
    }
}

/// Fraction of entries whose rounded prediction equals the target.
/// An empty pair scores 1.
pub fn rounded_accuracy(pair: &ScorePair<'_>) -> f64 {
    if pair.is_empty() {
        return 1.0;
    }
    let hits = pair
        .prediction
        .iter()
        .zip(pair.target)
        .filter(|(&p, &y)| round_prediction(p) == y)
        .count();
    hits as f64 / pair.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn block(h: usize, w: usize, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> BinaryMask {
        BinaryMask::from_fn(h, w, |y, x| rows.contains(&y) && cols.contains(&x))
    }

    #[test]
    fn iou_and_dice_on_offset_blocks() {
        // |∩| = 1 (pixel (1,1)), |∪| = 7, |a| = |b| = 4.
        let a = block(4, 4, 0..2, 0..2);
        let b = block(4, 4, 1..3, 1..3);
        assert!((iou(&a, &b).unwrap() - 1.0 / 7.0).abs() < 1e-12);
        assert!((dice(&a, &b).unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn identical_and_disjoint_masks() {
        let a = block(5, 5, 1..3, 1..4);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        let b = block(5, 5, 4..5, 0..5);
        assert_eq!(iou(&a, &b).unwrap(), 0.0);
        assert_eq!(dice(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn both_empty_counts_as_agreement() {
        let e = BinaryMask::empty(3, 3);
        assert_eq!(iou(&e, &e).unwrap(), 1.0);
        assert_eq!(dice(&e, &e).unwrap(), 1.0);
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let err = iou(&BinaryMask::empty(2, 3), &BinaryMask::empty(3, 2)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("(2, 3)") && msg.contains("(3, 2)"), "{msg}");
        assert!(dice(&BinaryMask::empty(2, 3), &BinaryMask::empty(3, 2)).is_err());
    }

    #[test]
    fn bce_reference_values() {
        let half = [0.5; 6];
        let y = [1.0, 0.0, 1.0, 1.0, 0.0, 0.0];
        let loss = bce_loss(&ScorePair::new(&half, &y).unwrap());
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);

        // -ln 0.9
        let loss = bce_loss(&ScorePair::new(&[0.9], &[1.0]).unwrap());
        assert!((loss - 0.105_360_515_657_826_3).abs() < 1e-12);

        let exact = [0.0, 1.0, 1.0, 0.0];
        let loss = bce_loss(&ScorePair::new(&exact, &exact).unwrap());
        assert!(loss.is_finite() && loss <= -(1.0 - BCE_EPS).ln() + 1e-15);
    }

    #[test]
    fn bce_is_finite_at_the_extremes() {
        let p = [0.0, 1.0, 0.0, 1.0];
        let y = [1.0, 0.0, 0.0, 1.0];
        let loss = bce_loss(&ScorePair::new(&p, &y).unwrap());
        assert!(loss.is_finite() && loss > 0.0);
    }

    #[test]
    fn rounded_accuracy_examples() {
        let p = [0.7, 0.2, 0.51, 0.49];
        let y = [1.0, 0.0, 1.0, 1.0];
        assert_eq!(rounded_accuracy(&ScorePair::new(&p, &y).unwrap()), 0.75);
        assert_eq!(rounded_accuracy(&ScorePair::new(&y, &y).unwrap()), 1.0);
        assert_eq!(rounded_accuracy(&ScorePair::new(&[0.5], &[1.0]).unwrap()), 1.0);
    }

    #[test]
    fn score_pair_validation() {
        assert!(matches!(
            ScorePair::new(&[0.5], &[1.0, 0.0]),
            Err(Error::Dimension { .. })
        ));
        assert!(ScorePair::new(&[1.5], &[1.0]).is_err());
        assert!(ScorePair::new(&[0.5], &[0.5]).is_err());
    }
}
