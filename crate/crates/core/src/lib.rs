//! Soccer field registration and tactical analytics.
//!
//! The crate turns per-frame player detections and field keypoint
//! observations into metric field coordinates:
//!
//! - [`field`]: metric field template and the 12-keypoint registry.
//! - [`ingest`]: line-delimited frame records, mask/box geometry and flip augmentation.
//! - [`homography`]: normalized DLT estimation, projection and error metrics.
//! - [`detection_metrics`]: IoU, greedy matching, precision/recall/F1.
//! - [`keypoint_metrics`]: masked MAE and visibility accuracy.
//! - [`teams`]: two-team k-means over jersey colors.
//! - [`analytics`]: tracks, distance, speed and heatmaps.
//! - [`render`]: SVG field plots.

pub mod analytics;
pub mod detection_metrics;
pub mod field;
pub mod homography;
pub mod ingest;
pub mod keypoint_metrics;
pub mod render;
pub mod teams;

pub use field::{FieldConfig, FieldTemplate, KeypointId, NormPoint, PixelPoint, WorldPoint};
pub use homography::Homography;
