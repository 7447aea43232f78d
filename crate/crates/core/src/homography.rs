//! Image-to-field homographies.
//!
//! Estimation is the normalized direct linear transform: both point sets are
//! conditioned (centroid to the origin, mean distance √2), the 2n×9 system is
//! solved for its smallest right singular vector, and the result is
//! de-normalized. There is no outlier rejection; use
//! [`reprojection_error`] to reject poor fits.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{FieldTemplate, PixelPoint, WorldPoint};
use crate::ingest::{FrameRecord, KeypointObservation};

/// `|w|` at or below this is treated as a point at infinity.
pub const INFINITY_EPS: f64 = 1e-9;
/// Minimum `|det|` of a normalized homography.
pub const SINGULAR_DET_EPS: f64 = 1e-12;
/// Rank test: second-smallest over largest singular value of the DLT system.
pub const RANK_DEFICIENCY_RATIO: f64 = 1e-8;
pub const DEFAULT_MAX_REUSE_GAP: u64 = 30;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HomographyError {
    #[error("need at least 4 correspondences, got {0}")]
    InsufficientCorrespondences(usize),
    #[error("degenerate point configuration: {0}")]
    DegenerateConfiguration(String),
    #[error("estimation failed: {0}")]
    Estimation(String),
    #[error("matrix is singular (|det| = {0:e})")]
    Singular(f64),
    #[error("matrix cannot be inverted")]
    Inversion,
    #[error("point ({x}, {y}) maps to infinity")]
    PointAtInfinity { x: f64, y: f64 },
    #[error("non-finite input: {0}")]
    NonFinite(String),
    #[error("no usable points: {0}")]
    EmptyInput(String),
    #[error("line {line}: {message}")]
    Record { line: usize, message: String },
}

/// Non-singular 3×3 projective map from image pixels to field meters.
///
/// Stored normalized: `h[2][2] = 1` whenever `|h[2][2]| > 1e-9 · ‖h‖_F`,
/// otherwise unit Frobenius norm with a positive first nonzero entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography {
    m: Matrix3<f64>,
}

pub fn normalize_matrix(m: &Matrix3<f64>) -> Matrix3<f64> {
    let norm = m.norm();
    let h22 = m[(2, 2)];
    if h22.abs() > INFINITY_EPS * norm {
        return m / h22;
    }
    let mut out = if (norm - 1.0).abs() > 1e-12 { m / norm } else { *m };
    // row-major scan for the first nonzero entry
    let first = (0..9).map(|i| out[(i / 3, i % 3)]).find(|v| *v != 0.0);
    if first.is_some_and(|v| v < 0.0) {
        out = -out;
    }
    out
}

impl Homography {
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self, HomographyError> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(HomographyError::NonFinite(format!("{m:?}")));
        }
        if m.norm() == 0.0 {
            return Err(HomographyError::Singular(0.0));
        }
        let m = normalize_matrix(&m);
        let det = m.determinant();
        if det.abs() <= SINGULAR_DET_EPS {
            return Err(HomographyError::Singular(det));
        }
        Ok(Self { m })
    }

    pub fn from_row_major(h: [f64; 9]) -> Result<Self, HomographyError> {
        Self::from_matrix(Matrix3::from_row_slice(&h))
    }

    pub fn identity() -> Self {
        Self { m: Matrix3::identity() }
    }

    pub fn translation(dx: f64, dy: f64) -> Self {
        Self::from_row_major([1.0, 0.0, dx, 0.0, 1.0, dy, 0.0, 0.0, 1.0]).expect("translations are invertible")
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.m
    }

    pub fn row_major(&self) -> [f64; 9] {
        std::array::from_fn(|i| self.m[(i / 3, i % 3)])
    }

    /// Maps raw plane coordinates through the matrix.
    pub fn map_xy(&self, x: f64, y: f64) -> Result<(f64, f64), HomographyError> {
        let m = &self.m;
        let w = m[(2, 0)] * x + m[(2, 1)] * y + m[(2, 2)];
        if w.abs() <= INFINITY_EPS || !w.is_finite() {
            return Err(HomographyError::PointAtInfinity { x, y });
        }
        Ok((
            (m[(0, 0)] * x + m[(0, 1)] * y + m[(0, 2)]) / w,
            (m[(1, 0)] * x + m[(1, 1)] * y + m[(1, 2)]) / w,
        ))
    }

    pub fn apply(&self, p: PixelPoint) -> Result<WorldPoint, HomographyError> {
        let (x, y) = self.map_xy(p.x, p.y)?;
        Ok(WorldPoint::new(x, y))
    }

    /// World-to-image mapping for a homography produced by [`Homography::invert`].
    pub fn apply_world(&self, p: WorldPoint) -> Result<PixelPoint, HomographyError> {
        let (x, y) = self.map_xy(p.x, p.y)?;
        Ok(PixelPoint::new(x, y))
    }

    pub fn invert(&self) -> Result<Self, HomographyError> {
        let inv = self.m.try_inverse().ok_or(HomographyError::Inversion)?;
        Self::from_matrix(inv).map_err(|_| HomographyError::Inversion)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub image: PixelPoint,
    pub world: WorldPoint,
}

impl Correspondence {
    pub fn new(image: PixelPoint, world: WorldPoint) -> Self {
        Self { image, world }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DltOptions {
    /// Isotropic conditioning of both point sets before solving.
    pub normalize: bool,
}

impl Default for DltOptions {
    fn default() -> Self {
        Self { normalize: true }
    }
}

/// Similarity taking a point set to zero centroid and mean distance √2.
fn conditioning(points: &[(f64, f64)]) -> Result<Matrix3<f64>, HomographyError> {
    let n = points.len() as f64;
    let (cx, cy) = points.iter().fold((0.0, 0.0), |(sx, sy), p| (sx + p.0, sy + p.1));
    let (cx, cy) = (cx / n, cy / n);
    let mean_dist = points.iter().map(|p| (p.0 - cx).hypot(p.1 - cy)).sum::<f64>() / n;
    if !(mean_dist > 0.0) {
        return Err(HomographyError::DegenerateConfiguration("all points coincide".into()));
    }
    let s = std::f64::consts::SQRT_2 / mean_dist;
    Ok(Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0))
}

fn transform(t: &Matrix3<f64>, p: (f64, f64)) -> (f64, f64) {
    let v = t * Vector3::new(p.0, p.1, 1.0);
    (v.x / v.z, v.y / v.z)
}

pub fn estimate_dlt(correspondences: &[Correspondence]) -> Result<Homography, HomographyError> {
    estimate_dlt_with(correspondences, &DltOptions::default())
}

pub fn estimate_dlt_with(
    correspondences: &[Correspondence],
    opts: &DltOptions,
) -> Result<Homography, HomographyError> {
    let n = correspondences.len();
    if n < 4 {
        return Err(HomographyError::InsufficientCorrespondences(n));
    }
    let image: Vec<(f64, f64)> = correspondences.iter().map(|c| (c.image.x, c.image.y)).collect();
    let world: Vec<(f64, f64)> = correspondences.iter().map(|c| (c.world.x, c.world.y)).collect();
    if image.iter().chain(&world).any(|p| !(p.0.is_finite() && p.1.is_finite())) {
        return Err(HomographyError::NonFinite("correspondence coordinates".into()));
    }

    let (t_img, t_world) = if opts.normalize {
        (conditioning(&image)?, conditioning(&world)?)
    } else {
        (Matrix3::identity(), Matrix3::identity())
    };

    // at least 9 rows so the SVD yields the full 9×9 right basis
    let rows = (2 * n).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, (pi, pw)) in image.iter().zip(&world).enumerate() {
        let (x, y) = transform(&t_img, *pi);
        let (u, v) = transform(&t_world, *pw);
        let r0 = 2 * i;
        let r1 = r0 + 1;
        a[(r0, 0)] = x;
        a[(r0, 1)] = y;
        a[(r0, 2)] = 1.0;
        a[(r0, 6)] = -u * x;
        a[(r0, 7)] = -u * y;
        a[(r0, 8)] = -u;
        a[(r1, 3)] = x;
        a[(r1, 4)] = y;
        a[(r1, 5)] = 1.0;
        a[(r1, 6)] = -v * x;
        a[(r1, 7)] = -v * y;
        a[(r1, 8)] = -v;
    }

    let svd = a.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| HomographyError::Estimation("SVD did not produce right singular vectors".into()))?;
    let sv = &svd.singular_values;
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&i, &j| sv[i].total_cmp(&sv[j]));
    let largest = sv[order[order.len() - 1]];
    if !(largest > 0.0) {
        return Err(HomographyError::DegenerateConfiguration("empty linear system".into()));
    }
    let second = sv[order[1]];
    if second / largest < RANK_DEFICIENCY_RATIO {
        return Err(HomographyError::DegenerateConfiguration(format!(
            "DLT system is rank deficient (σ₈/σ₁ = {:e}); points are collinear or coincident",
            second / largest
        )));
    }
    let h = v_t.row(order[0]);
    let h_norm = Matrix3::from_iterator((0..9).map(|i| h[(i % 3) * 3 + i / 3]));

    let t_world_inv = t_world
        .try_inverse()
        .ok_or_else(|| HomographyError::Estimation("conditioning transform not invertible".into()))?;
    let m = t_world_inv * h_norm * t_img;
    Homography::from_matrix(m).map_err(|e| HomographyError::Estimation(e.to_string()))
}

/// Mean world-space distance between projected image points and their
/// world counterparts.
pub fn reprojection_error(h: &Homography, correspondences: &[Correspondence]) -> Result<f64, HomographyError> {
    if correspondences.is_empty() {
        return Err(HomographyError::EmptyInput("no correspondences".into()));
    }
    let mut total = 0.0;
    for c in correspondences {
        total += h.apply(c.image)?.distance(&c.world);
    }
    Ok(total / correspondences.len() as f64)
}

/// Largest per-point world-space error.
pub fn max_reprojection_error(h: &Homography, correspondences: &[Correspondence]) -> Result<f64, HomographyError> {
    let mut worst: f64 = 0.0;
    for c in correspondences {
        worst = worst.max(h.apply(c.image)?.distance(&c.world));
    }
    Ok(worst)
}

pub fn keypoint_correspondences(
    observations: &[KeypointObservation],
    template: &FieldTemplate,
    image_w: f64,
    image_h: f64,
) -> Vec<Correspondence> {
    observations
        .iter()
        .filter(|k| k.visible)
        .map(|k| Correspondence::new(k.pos.to_pixels(image_w, image_h), template.position(k.id)))
        .collect()
}

/// Mean distance between each visible keypoint's projected position and its
/// template position, in meters.
pub fn keypoint_world_mae(
    h: &Homography,
    observations: &[KeypointObservation],
    template: &FieldTemplate,
    image_w: f64,
    image_h: f64,
) -> Result<f64, HomographyError> {
    let corrs = keypoint_correspondences(observations, template, image_w, image_h);
    if corrs.is_empty() {
        return Err(HomographyError::EmptyInput("no visible keypoints".into()));
    }
    reprojection_error(h, &corrs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionError {
    pub mean_m: f64,
    pub used: usize,
    /// Indices of points at infinity under either homography.
    pub excluded: Vec<usize>,
}

/// Mean distance between the images of the same pixels under two homographies.
pub fn projection_error_between(
    h_a: &Homography,
    h_b: &Homography,
    points: &[PixelPoint],
) -> Result<ProjectionError, HomographyError> {
    let mut total = 0.0;
    let mut used = 0;
    let mut excluded = Vec::new();
    for (i, p) in points.iter().enumerate() {
        match (h_a.apply(*p), h_b.apply(*p)) {
            (Ok(a), Ok(b)) => {
                total += a.distance(&b);
                used += 1;
            }
            _ => excluded.push(i),
        }
    }
    if used == 0 {
        return Err(HomographyError::EmptyInput(format!(
            "{} points given, none finite under both homographies",
            points.len()
        )));
    }
    Ok(ProjectionError {
        mean_m: total / used as f64,
        used,
        excluded,
    })
}

// ---------------------------------------------------------------------------
// Per-frame calibration

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FallbackPolicy {
    /// Frames (by `frame_idx` difference) a fitted homography may be reused for.
    pub max_reuse_gap: u64,
    pub dlt: DltOptions,
}

impl Default for FallbackPolicy {
    fn default() -> Self {
        Self {
            max_reuse_gap: DEFAULT_MAX_REUSE_GAP,
            dlt: DltOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CalibrationStatus {
    Fit,
    Reused,
    Gap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameCalibration {
    pub frame_idx: u64,
    pub status: CalibrationStatus,
    pub homography: Option<Homography>,
    /// Frame whose fit is being reused.
    pub source_frame: Option<u64>,
    pub reprojection_error_m: Option<f64>,
    pub diagnostic: Option<String>,
}

impl FrameCalibration {
    pub fn is_calibrated(&self) -> bool {
        self.homography.is_some()
    }
}

/// Fits one homography per frame, in frame order.
pub fn calibrate_sequence(
    frames: &[FrameRecord],
    template: &FieldTemplate,
    policy: &FallbackPolicy,
) -> Vec<FrameCalibration> {
    let mut last_fit: Option<(u64, Homography)> = None;
    let mut out = Vec::with_capacity(frames.len());
    for frame in frames {
        let corrs = keypoint_correspondences(&frame.keypoints, template, frame.image_w as f64, frame.image_h as f64);
        let fit = estimate_dlt_with(&corrs, &policy.dlt);
        match fit {
            Ok(h) => {
                let err = reprojection_error(&h, &corrs).ok();
                last_fit = Some((frame.frame_idx, h));
                out.push(FrameCalibration {
                    frame_idx: frame.frame_idx,
                    status: CalibrationStatus::Fit,
                    homography: Some(h),
                    source_frame: None,
                    reprojection_error_m: err,
                    diagnostic: None,
                });
            }
            Err(e) => {
                let reusable = last_fit
                    .filter(|(src, _)| frame.frame_idx.saturating_sub(*src) <= policy.max_reuse_gap);
                let calib = match reusable {
                    Some((src, h)) => FrameCalibration {
                        frame_idx: frame.frame_idx,
                        status: CalibrationStatus::Reused,
                        homography: Some(h),
                        source_frame: Some(src),
                        reprojection_error_m: if corrs.is_empty() {
                            None
                        } else {
                            reprojection_error(&h, &corrs).ok()
                        },
                        diagnostic: Some(format!("{e}; reusing fit from frame {src}")),
                    },
                    None => FrameCalibration {
                        frame_idx: frame.frame_idx,
                        status: CalibrationStatus::Gap,
                        homography: None,
                        source_frame: None,
                        reprojection_error_m: None,
                        diagnostic: Some(e.to_string()),
                    },
                };
                out.push(calib);
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Homography file: one JSON object per frame.
//
// {"frame_idx":3,"h":[h11,h12,h13,h21,h22,h23,h31,h32,h33],"status":"fit",
//  "reprojection_error_m":1.2e-12}
//
// `h` and `reprojection_error_m` are null for gaps; reused frames carry
// `source_frame`.

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HomographyRecord {
    frame_idx: u64,
    h: Option<[f64; 9]>,
    status: CalibrationStatus,
    reprojection_error_m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    source_frame: Option<u64>,
}

pub fn calibration_to_json(c: &FrameCalibration) -> String {
    let rec = HomographyRecord {
        frame_idx: c.frame_idx,
        h: c.homography.map(|h| h.row_major()),
        status: c.status,
        reprojection_error_m: c.reprojection_error_m,
        source_frame: c.source_frame,
    };
    serde_json::to_string(&rec).expect("homography records always serialize")
}

pub fn write_calibrations<W: Write>(mut out: W, calibs: &[FrameCalibration]) -> std::io::Result<()> {
    for c in calibs {
        writeln!(out, "{}", calibration_to_json(c))?;
    }
    Ok(())
}

pub fn read_calibrations<R: BufRead>(reader: R) -> Result<Vec<FrameCalibration>, HomographyError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| HomographyError::Record {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: HomographyRecord = serde_json::from_str(&line).map_err(|e| HomographyError::Record {
            line: line_no,
            message: e.to_string(),
        })?;
        let homography = match (rec.status, rec.h) {
            (CalibrationStatus::Gap, _) => None,
            (_, Some(h)) => Some(Homography::from_row_major(h).map_err(|e| HomographyError::Record {
                line: line_no,
                message: e.to_string(),
            })?),
            (_, None) => {
                return Err(HomographyError::Record {
                    line: line_no,
                    message: "calibrated frame without matrix".into(),
                })
            }
        };
        out.push(FrameCalibration {
            frame_idx: rec.frame_idx,
            status: rec.status,
            homography,
            source_frame: rec.source_frame,
            reprojection_error_m: rec.reprojection_error_m,
            diagnostic: None,
        });
    }
    Ok(out)
}
