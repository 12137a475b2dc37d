use imagecore::LabelMask;
use serde::{Deserialize, Serialize};

use crate::error::{MetricsError, Result};

/// Pixel confusion counts for one class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn for_class(pred: &LabelMask, gt: &LabelMask, class: u16) -> Result<Self> {
        if pred.dims() != gt.dims() {
            return Err(MetricsError::Dimensions(format!("pred {:?} vs gt {:?}", pred.dims(), gt.dims())));
        }
        let mut c = ConfusionCounts::default();
        for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
            match (p == class, g == class) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// Dice; 1 when both prediction and ground truth are empty.
    pub fn dice(&self) -> f64 {
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_, 1.0)
    }

    /// IoU; 1 when both prediction and ground truth are empty.
    pub fn iou(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp + self.fn_, 1.0)
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.total(), 1.0)
    }

    /// Precision; 1 if nothing was predicted and nothing was there, else 0 when undefined.
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp, if self.fn_ == 0 { 1.0 } else { 0.0 })
    }

    pub fn sensitivity(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_, if self.fp == 0 { 1.0 } else { 0.0 })
    }

    pub fn specificity(&self) -> f64 {
        ratio(self.tn, self.tn + self.fp, 1.0)
    }
}

fn ratio(num: u64, den: u64, undefined: f64) -> f64 {
    if den == 0 {
        undefined
    } else {
        num as f64 / den as f64
    }
}

/// Macro-averaged scores over the requested classes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentationScores {
    pub dice: f64,
    pub miou: f64,
    pub accuracy: f64,
    pub precision: f64,
    pub sensitivity: f64,
    pub specificity: f64,
}

impl SegmentationScores {
    pub fn named(&self) -> [(&'static str, f64); 6] {
        [
            ("dice", self.dice),
            ("miou", self.miou),
            ("accuracy", self.accuracy),
            ("precision", self.precision),
            ("sensitivity", self.sensitivity),
            ("specificity", self.specificity),
        ]
    }
}

/// Per-class confusion, then the mean of each score over `classes`.
pub fn segmentation_metrics(pred: &LabelMask, gt: &LabelMask, classes: &[u16]) -> Result<SegmentationScores> {
    if classes.is_empty() {
        return Err(MetricsError::InvalidInput("no classes requested".into()));
    }
    let counts = classes
        .iter()
        .map(|&c| ConfusionCounts::for_class(pred, gt, c))
        .collect::<Result<Vec<_>>>()?;
    let n = counts.len() as f64;
    let mean = |f: fn(&ConfusionCounts) -> f64| counts.iter().map(f).sum::<f64>() / n;
    Ok(SegmentationScores {
        dice: mean(ConfusionCounts::dice),
        miou: mean(ConfusionCounts::iou),
        accuracy: mean(ConfusionCounts::accuracy),
        precision: mean(ConfusionCounts::precision),
        sensitivity: mean(ConfusionCounts::sensitivity),
        specificity: mean(ConfusionCounts::specificity),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(x0: usize, y0: usize, side: usize) -> LabelMask {
        LabelMask::from_fn(32, 32, |x, y| x >= x0 && x < x0 + side && y >= y0 && y < y0 + side)
    }

    #[test]
    fn perfect_prediction() {
        let m = square(3, 3, 10);
        let s = segmentation_metrics(&m, &m, &[1]).unwrap();
        assert_eq!((s.dice, s.miou, s.accuracy), (1.0, 1.0, 1.0));
    }

    #[test]
    fn disjoint_prediction() {
        let s = segmentation_metrics(&square(0, 0, 5), &square(20, 20, 5), &[1]).unwrap();
        assert_eq!(s.dice, 0.0);
        assert_eq!(s.miou, 0.0);
    }

    #[test]
    fn shifted_square() {
        let gt = square(5, 5, 10);
        let pred = square(10, 5, 10);
        let c = ConfusionCounts::for_class(&pred, &gt, 1).unwrap();
        assert_eq!(c.tp, 50);
        let s = segmentation_metrics(&pred, &gt, &[1]).unwrap();
        assert_eq!(s.dice, 0.5);
        assert!((s.miou - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn empty_vs_empty_is_perfect() {
        let e = LabelMask::new(8, 8);
        let s = segmentation_metrics(&e, &e, &[1]).unwrap();
        assert_eq!(s.named().map(|(_, v)| v), [1.0; 6]);
    }

    #[test]
    fn dims_checked() {
        assert!(segmentation_metrics(&LabelMask::new(4, 4), &LabelMask::new(4, 5), &[1]).is_err());
    }
}
