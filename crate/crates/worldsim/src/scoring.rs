//! Per-sample scoring of model outputs and hard-example mining.

use std::collections::BTreeMap;

use imagecore::{parse_color_mask, Image, LabelMask, Palette, TaskKind};
use metrics::{detection_metrics, parse_boxes, perceptual_distance, psnr, segmentation_metrics, ssim, Box, PyramidExtractor};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::train::{resize_nearest, HardThresholds};

pub const DETECTION_IOU: f64 = 0.5;

/// What a sampled output is compared against.
#[derive(Debug, Clone, PartialEq)]
pub enum EvalTarget {
    /// Palette-rendered mask; scored over the palette's classes after parsing.
    Mask { gt: LabelMask, palette: Palette, tol: f32 },
    /// Box outlines drawn in `color`.
    Boxes { gt: Vec<Box>, color: [f32; 3], tol: f32, size: (usize, usize) },
    Image(Image),
}

impl EvalTarget {
    pub fn resized(&self, res: usize) -> EvalTarget {
        match self {
            EvalTarget::Mask { gt, palette, tol } => {
                EvalTarget::Mask { gt: gt.resize_nearest(res, res), palette: palette.clone(), tol: *tol }
            }
            EvalTarget::Boxes { gt, color, tol, size } => {
                let (sx, sy) = (res as f64 / size.0 as f64, res as f64 / size.1 as f64);
                let gt = gt
                    .iter()
                    .filter_map(|b| {
                        let x0 = (b.x0 * sx).floor();
                        let y0 = (b.y0 * sy).floor();
                        let x1 = (b.x1 * sx).ceil().max(x0 + 1.0);
                        let y1 = (b.y1 * sy).ceil().max(y0 + 1.0);
                        Box::new(x0, y0, x1, y1).ok()
                    })
                    .collect();
                EvalTarget::Boxes { gt, color: *color, tol: *tol, size: (res, res) }
            }
            EvalTarget::Image(img) => {
                let img = if img.dims() == (res, res) { img.clone() } else { img.resize_bilinear(res, res) };
                EvalTarget::Image(img)
            }
        }
    }

    /// The target's rendering, for comparisons that need pixels.
    pub fn dims(&self) -> (usize, usize) {
        match self {
            EvalTarget::Mask { gt, .. } => gt.dims(),
            EvalTarget::Boxes { size, .. } => *size,
            EvalTarget::Image(img) => img.dims(),
        }
    }
}

/// Metric name to value for one prediction.
pub fn score(pred: &Image, target: &EvalTarget) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    let (w, h) = target.dims();
    let pred = if pred.dims() == (w, h) { pred.clone() } else { resize_nearest(pred, w, h) };
    match target {
        EvalTarget::Mask { gt, palette, tol } => {
            let parsed = parse_color_mask(&pred.to_rgb(), palette, *tol)?;
            let classes: Vec<u16> = palette.entries().iter().map(|e| e.id).collect();
            let s = segmentation_metrics(&parsed, gt, &classes)?;
            for (k, v) in s.named() {
                out.insert(k.to_string(), v);
            }
        }
        EvalTarget::Boxes { gt, color, tol, .. } => {
            let found = parse_boxes(&pred.to_rgb(), *color, *tol)?;
            let d = detection_metrics(&found, gt, DETECTION_IOU)?;
            out.insert("precision".into(), d.precision);
            out.insert("recall".into(), d.recall);
            out.insert("f1".into(), d.f1);
            // set-level Dice of detections is the F1; mIoU is the mean matched IoU
            out.insert("dice".into(), d.f1);
            out.insert("miou".into(), d.mean_iou);
        }
        EvalTarget::Image(gt) => {
            let (a, b) = (pred.to_rgb(), gt.to_rgb());
            out.insert("psnr".into(), psnr(&a, &b)?);
            out.insert("ssim".into(), ssim(&a, &b)?);
            out.insert("lpips".into(), perceptual_distance(&a, &b, &PyramidExtractor::default())?);
        }
    }
    Ok(out)
}

/// Per-sample metrics with their task, the input to mining.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub id: String,
    pub task: TaskKind,
    pub metrics: BTreeMap<String, f64>,
}

/// A flagged sample with the metric that triggered it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardHit {
    pub id: String,
    pub metric: String,
    pub value: f64,
}

/// Whether a task is scored by overlap (dice, miou) rather than image fidelity.
/// Exemplar samples demonstrate segmentation, so they count as overlap tasks.
pub fn overlap_task(task: TaskKind) -> bool {
    task.is_parsing() || task == TaskKind::Exemplar
}

/// Overlap rows are hard when dice or miou is strictly below threshold,
/// generative rows when ssim is. Ids are returned once, in row order.
pub fn mine_hard(rows: &[EvalRow], thresholds: &HardThresholds) -> Result<Vec<HardHit>> {
    let mut hits: Vec<HardHit> = Vec::new();
    for row in rows {
        let get = |name: &str| {
            row.metrics
                .get(name)
                .copied()
                .ok_or_else(|| SimError::Input(format!("{} ({}) has no {name}", row.id, row.task)))
        };
        let checks: Vec<(&str, f64)> = if overlap_task(row.task) {
            vec![("dice", thresholds.dice), ("miou", thresholds.miou)]
        } else {
            vec![("ssim", thresholds.ssim)]
        };
        let mut hit = None;
        for (name, thr) in checks {
            let v = get(name)?;
            // NaN counts as failing to clear the bar
            if hit.is_none() && !(v >= thr) {
                hit = Some(HardHit { id: row.id.clone(), metric: name.to_string(), value: v });
            }
        }
        if let Some(h) = hit {
            if !hits.iter().any(|x| x.id == h.id) {
                hits.push(h);
            }
        }
    }
    Ok(hits)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(id: &str, task: TaskKind, m: &[(&str, f64)]) -> EvalRow {
        EvalRow { id: id.into(), task, metrics: m.iter().map(|(k, v)| (k.to_string(), *v)).collect() }
    }

    #[test]
    fn strict_threshold() {
        let t = HardThresholds::default();
        let rows = vec![
            row("a", TaskKind::Segment, &[("dice", 0.49), ("miou", 0.9)]),
            row("b", TaskKind::Segment, &[("dice", 0.50), ("miou", 0.50)]),
            row("c", TaskKind::Translate, &[("ssim", 0.3)]),
            row("d", TaskKind::Detect, &[("dice", 0.8), ("miou", 0.2)]),
        ];
        let hits = mine_hard(&rows, &t).unwrap();
        let ids: Vec<&str> = hits.iter().map(|h| h.id.as_str()).collect();
        assert_eq!(ids, ["a", "c", "d"]);
        assert_eq!((hits[0].metric.as_str(), hits[0].value), ("dice", 0.49));
        assert_eq!((hits[2].metric.as_str(), hits[2].value), ("miou", 0.2));
    }

    #[test]
    fn missing_metric_errors() {
        let rows = vec![row("a", TaskKind::Translate, &[("dice", 0.1)])];
        assert!(mine_hard(&rows, &HardThresholds::default()).is_err());
    }

    #[test]
    fn perfect_mask_prediction_scores_one() {
        let palette = Palette::standard().subset(&[1]).unwrap();
        let gt = LabelMask::from_fn(16, 16, |x, y| (4..10).contains(&x) && (5..9).contains(&y));
        let img = imagecore::encode_color_mask(&gt, &palette).unwrap();
        let s = score(&img, &EvalTarget::Mask { gt, palette, tol: 0.35 }).unwrap();
        assert_eq!(s["dice"], 1.0);
        assert_eq!(s["miou"], 1.0);
    }
}
