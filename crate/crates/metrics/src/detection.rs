//! Bounding boxes, greedy matching, mAP and the box render/parse codec.

use imagecore::Image;
use serde::{Deserialize, Serialize};

use crate::components::{components, Connectivity};
use crate::error::{MetricsError, Result};

/// Axis-aligned box in pixel-edge coordinates: it covers `x0 <= x < x1`, `y0 <= y < y1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
    #[serde(default = "one")]
    pub confidence: f64,
}

fn one() -> f64 {
    1.0
}

impl Box {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        Self::with_confidence(x0, y0, x1, y1, 1.0)
    }

    pub fn with_confidence(x0: f64, y0: f64, x1: f64, y1: f64, confidence: f64) -> Result<Self> {
        if !(x0 < x1 && y0 < y1) {
            return Err(MetricsError::InvalidInput(format!("degenerate box ({x0},{y0})-({x1},{y1})")));
        }
        if !(0.0..=1.0).contains(&confidence) {
            return Err(MetricsError::InvalidInput(format!("confidence {confidence} outside [0,1]")));
        }
        Ok(Box { x0, y0, x1, y1, confidence })
    }

    pub fn area(&self) -> f64 {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }
}

pub fn box_iou(a: &Box, b: &Box) -> f64 {
    let iw = (a.x1.min(b.x1) - a.x0.max(b.x0)).max(0.0);
    let ih = (a.y1.min(b.y1) - a.y0.max(b.y0)).max(0.0);
    let inter = iw * ih;
    if inter == 0.0 {
        return 0.0;
    }
    inter / (a.area() + b.area() - inter)
}

/// Absorbs the rounding of thresholds written as decimals.
const THR_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Match {
    pub pred: usize,
    pub gt: usize,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Mean IoU over matched pairs; 0 without matches.
    pub mean_iou: f64,
    pub matches: Vec<Match>,
}

/// Greedy matching: predictions by descending confidence (ties: higher best IoU
/// first, then input order); each takes the unmatched GT of highest IoU at or
/// above `iou_thr`.
pub fn greedy_match(preds: &[Box], gts: &[Box], iou_thr: f64) -> Vec<Match> {
    let best_iou = |p: &Box| gts.iter().map(|g| box_iou(p, g)).fold(0.0, f64::max);
    let mut order: Vec<(usize, f64)> = preds.iter().enumerate().map(|(i, p)| (i, best_iou(p))).collect();
    order.sort_by(|a, b| {
        preds[b.0]
            .confidence
            .total_cmp(&preds[a.0].confidence)
            .then(b.1.total_cmp(&a.1))
            .then(a.0.cmp(&b.0))
    });
    let mut taken = vec![false; gts.len()];
    let mut matches = Vec::new();
    for (pi, _) in order {
        let mut best: Option<(usize, f64)> = None;
        for (gi, g) in gts.iter().enumerate() {
            if taken[gi] {
                continue;
            }
            let iou = box_iou(&preds[pi], g);
            if iou + THR_EPS >= iou_thr && best.map_or(true, |(_, b)| iou > b) {
                best = Some((gi, iou));
            }
        }
        if let Some((gi, iou)) = best {
            taken[gi] = true;
            matches.push(Match { pred: pi, gt: gi, iou });
        }
    }
    matches
}

pub fn detection_metrics(preds: &[Box], gts: &[Box], iou_thr: f64) -> Result<DetectionScores> {
    if !(iou_thr > 0.0 && iou_thr < 1.0) {
        return Err(MetricsError::InvalidInput(format!("iou threshold {iou_thr} outside (0,1)")));
    }
    if preds.is_empty() && gts.is_empty() {
        return Ok(DetectionScores { precision: 1.0, recall: 1.0, f1: 1.0, mean_iou: 1.0, matches: vec![] });
    }
    let matches = greedy_match(preds, gts, iou_thr);
    let tp = matches.len() as f64;
    let precision = if preds.is_empty() { 0.0 } else { tp / preds.len() as f64 };
    let recall = if gts.is_empty() { 0.0 } else { tp / gts.len() as f64 };
    let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
    let mean_iou = if matches.is_empty() { 0.0 } else { matches.iter().map(|m| m.iou).sum::<f64>() / tp };
    Ok(DetectionScores { precision, recall, f1, mean_iou, matches })
}

/// IoU thresholds 0.50, 0.55, ..., 0.95.
pub fn map_thresholds() -> [f64; 10] {
    std::array::from_fn(|k| (50 + 5 * k) as f64 / 100.0)
}

/// Area under the step PR curve, one point per distinct confidence level.
/// With uniform confidences this is `precision * recall`.
pub fn average_precision(preds: &[Box], gts: &[Box], iou_thr: f64) -> f64 {
    if gts.is_empty() {
        return if preds.is_empty() { 1.0 } else { 0.0 };
    }
    let matches = greedy_match(preds, gts, iou_thr);
    let mut is_tp = vec![false; preds.len()];
    for m in &matches {
        is_tp[m.pred] = true;
    }
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].confidence.total_cmp(&preds[a].confidence));
    let (mut tp, mut seen, mut prev_recall, mut ap) = (0usize, 0usize, 0.0, 0.0);
    let mut i = 0;
    while i < order.len() {
        let level = preds[order[i]].confidence;
        while i < order.len() && preds[order[i]].confidence == level {
            tp += usize::from(is_tp[order[i]]);
            seen += 1;
            i += 1;
        }
        let recall = tp as f64 / gts.len() as f64;
        let precision = tp as f64 / seen as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    ap
}

/// Mean of [`average_precision`] over [`map_thresholds`].
pub fn mean_average_precision(preds: &[Box], gts: &[Box]) -> f64 {
    let t = map_thresholds();
    t.iter().map(|&thr| average_precision(preds, gts, thr)).sum::<f64>() / t.len() as f64
}

/// Groups pixels within `tol` of `color` into 8-connected components and
/// returns each component's pixel extent.
pub fn parse_boxes(img: &Image, color: [f32; 3], tol: f32) -> Result<Vec<Box>> {
    if img.channels() != 3 {
        return Err(MetricsError::Dimensions(format!("parse_boxes needs 3 channels, got {}", img.channels())));
    }
    let (w, h) = img.dims();
    let hit: Vec<bool> = (0..w * h)
        .map(|i| {
            let p = img.pixel(i % w, i / w);
            let d2: f32 = p.iter().zip(color).map(|(a, b)| (a - b) * (a - b)).sum();
            d2.sqrt() <= tol
        })
        .collect();
    let comps = components(&hit, w, h, Connectivity::Eight);
    Ok(comps
        .iter()
        .map(|c| {
            let (x0, y0, x1, y1) = c.extent(w);
            Box { x0: x0 as f64, y0: y0 as f64, x1: (x1 + 1) as f64, y1: (y1 + 1) as f64, confidence: 1.0 }
        })
        .collect())
}

/// Draws each box as a 1-px outline on a copy of `img` (grayscale inputs are promoted to RGB).
pub fn draw_boxes(img: &Image, boxes: &[Box], color: [f32; 3]) -> Image {
    let mut out = img.to_rgb();
    let (w, h) = out.dims();
    if w == 0 || h == 0 {
        return out;
    }
    let clampx = |v: f64| (v.round().max(0.0) as usize).min(w - 1);
    let clampy = |v: f64| (v.round().max(0.0) as usize).min(h - 1);
    for b in boxes {
        let (x0, y0) = (clampx(b.x0), clampy(b.y0));
        let (x1, y1) = (clampx(b.x1 - 1.0).max(x0), clampy(b.y1 - 1.0).max(y0));
        for x in x0..=x1 {
            out.set_pixel(x, y0, &color);
            out.set_pixel(x, y1, &color);
        }
        for y in y0..=y1 {
            out.set_pixel(x0, y, &color);
            out.set_pixel(x1, y, &color);
        }
    }
    out
}
