//! Evaluation metrics for parsing, detection and generation outputs.

pub mod change;
pub mod components;
pub mod detection;
pub mod distribution;
mod error;
pub mod fidelity;
pub mod perceptual;
pub mod report;
pub mod segmentation;

pub use change::{render_change_map, signed_change_map, tissue_mask, SignedChangeMap};
pub use detection::{
    box_iou, detection_metrics, draw_boxes, mean_average_precision, parse_boxes, Box, DetectionScores, Match,
};
pub use distribution::{frechet_distance, inception_score};
pub use error::{MetricsError, Result};
pub use fidelity::{psnr, ssim};
pub use perceptual::{perceptual_distance, FeatureExtractor, FeatureMap, PyramidExtractor};
pub use report::{Aggregate, MetricReport, MetricRow};
pub use segmentation::{segmentation_metrics, ConfusionCounts, SegmentationScores};
