//! Frame-record streams, box/mask geometry and flip augmentation.
//!
//! A frame stream is JSON Lines: one object per line, blank lines ignored.
//!
//! ```text
//! {"frame_idx":0,"timestamp_s":0.0,"image_w":710,"image_h":400,
//!  "detections":[{"track_id":3,"bbox":[x1,y1,x2,y2],
//!                 "mask":[[x,y],...],"patch":[75 x u8],"mean_color":[r,g,b]}],
//!  "keypoints":[{"id":0,"x":0.31,"y":0.52,"visible":1}]}
//! ```
//!
//! `bbox` may be omitted when `mask` is present; it is then the minimum
//! rectangle of the mask. `mask`, `patch` and `mean_color` are optional.
//! `patch` is a 5×5 grid of RGB bytes, row-major. Invisible keypoints carry
//! `x = y = -1` and `visible = 0`.

use std::collections::HashSet;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{KeypointId, NormPoint, PixelPoint, KEYPOINT_COUNT, MIRROR_PARTNER};

pub const PATCH_SIDE: usize = 5;
pub const PATCH_PIXELS: usize = PATCH_SIDE * PATCH_SIDE;

/// Extent given to zero-width or zero-height masks.
pub const DEGENERATE_EXTENT_PX: f64 = 0.5;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("line {line}: malformed record: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: invalid `{field}`: {message}")]
    Validation {
        line: usize,
        field: String,
        message: String,
    },
    #[error("mask has no vertices")]
    EmptyMask,
    #[error("invalid bounding box: {0}")]
    InvalidBBox(String),
    #[error("invalid swap map: {0}")]
    SwapMap(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Axis-aligned pixel box with `x1 < x2` and `y1 < y2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self, IngestError> {
        if ![x1, y1, x2, y2].iter().all(|v| v.is_finite()) {
            return Err(IngestError::InvalidBBox(format!(
                "non-finite coordinates ({x1}, {y1}, {x2}, {y2})"
            )));
        }
        if x1 >= x2 || y1 >= y2 {
            return Err(IngestError::InvalidBBox(format!(
                "expected x1 < x2 and y1 < y2, got ({x1}, {y1}, {x2}, {y2})"
            )));
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    pub fn x1(&self) -> f64 {
        self.x1
    }
    pub fn y1(&self) -> f64 {
        self.y1
    }
    pub fn x2(&self) -> f64 {
        self.x2
    }
    pub fn y2(&self) -> f64 {
        self.y2
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    pub fn contains(&self, p: &PixelPoint) -> bool {
        (self.x1..=self.x2).contains(&p.x) && (self.y1..=self.y2).contains(&p.y)
    }

    /// Mirror about the vertical image axis, `x -> image_w - x`.
    pub fn mirrored(&self, image_w: f64) -> Self {
        Self {
            x1: image_w - self.x2,
            y1: self.y1,
            x2: image_w - self.x1,
            y2: self.y2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskPolygon {
    pub vertices: Vec<PixelPoint>,
}

pub fn mask_to_bbox(mask: &MaskPolygon) -> Result<BBox, IngestError> {
    let first = mask.vertices.first().ok_or(IngestError::EmptyMask)?;
    let (mut x1, mut y1, mut x2, mut y2) = (first.x, first.y, first.x, first.y);
    for v in &mask.vertices {
        if !(v.x.is_finite() && v.y.is_finite()) {
            return Err(IngestError::InvalidBBox(format!("non-finite mask vertex {v:?}")));
        }
        x1 = x1.min(v.x);
        y1 = y1.min(v.y);
        x2 = x2.max(v.x);
        y2 = y2.max(v.y);
    }
    if x2 == x1 {
        x2 = x1 + DEGENERATE_EXTENT_PX;
    }
    if y2 == y1 {
        y2 = y1 + DEGENERATE_EXTENT_PX;
    }
    BBox::new(x1, y1, x2, y2)
}

pub fn bbox_center(bbox: &BBox) -> PixelPoint {
    PixelPoint::new((bbox.x1 + bbox.x2) / 2.0, (bbox.y1 + bbox.y2) / 2.0)
}

/// Bottom-center of the box (image rows grow downward): where the player
/// touches the ground.
pub fn bbox_ground_point(bbox: &BBox) -> PixelPoint {
    PixelPoint::new((bbox.x1 + bbox.x2) / 2.0, bbox.y2)
}

/// Which box point is taken as a player's position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Anchor {
    #[default]
    BottomCenter,
    Center,
}

impl Anchor {
    pub fn point(self, bbox: &BBox) -> PixelPoint {
        match self {
            Anchor::BottomCenter => bbox_ground_point(bbox),
            Anchor::Center => bbox_center(bbox),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub track_id: u64,
    pub bbox: BBox,
    pub mask: Option<MaskPolygon>,
    /// 25 RGB pixels, row-major.
    pub patch: Option<Vec<[u8; 3]>>,
    pub mean_color: Option<[f64; 3]>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeypointObservation {
    pub id: KeypointId,
    pub pos: NormPoint,
    pub visible: bool,
}

impl KeypointObservation {
    pub fn visible(id: KeypointId, x: f64, y: f64) -> Self {
        Self {
            id,
            pos: NormPoint::new(x, y),
            visible: true,
        }
    }

    pub fn hidden(id: KeypointId) -> Self {
        Self {
            id,
            pos: NormPoint::SENTINEL,
            visible: false,
        }
    }

    fn check(&self) -> Result<(), String> {
        match (self.visible, self.pos.in_unit_square(), self.pos.is_sentinel()) {
            (true, true, _) | (false, _, true) => Ok(()),
            (true, _, _) => Err(format!(
                "keypoint {} is visible but position ({}, {}) is outside [0,1]²",
                self.id, self.pos.x, self.pos.y
            )),
            (false, _, _) => Err(format!(
                "keypoint {} is invisible but position ({}, {}) is not (-1, -1)",
                self.id, self.pos.x, self.pos.y
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub frame_idx: u64,
    pub timestamp_s: f64,
    pub image_w: u32,
    pub image_h: u32,
    pub detections: Vec<Detection>,
    pub keypoints: Vec<KeypointObservation>,
}

impl FrameRecord {
    pub fn visible_keypoints(&self) -> impl Iterator<Item = &KeypointObservation> {
        self.keypoints.iter().filter(|k| k.visible)
    }

    /// Checks the per-record invariants, returning the offending field name.
    pub fn validate(&self) -> Result<(), (String, String)> {
        if !(self.timestamp_s.is_finite() && self.timestamp_s >= 0.0) {
            return Err(("timestamp_s".into(), format!("must be >= 0, got {}", self.timestamp_s)));
        }
        if self.image_w == 0 || self.image_h == 0 {
            return Err(("image_w/image_h".into(), "image dimensions must be positive".into()));
        }
        let mut tracks = HashSet::new();
        for d in &self.detections {
            if !tracks.insert(d.track_id) {
                return Err(("detections.track_id".into(), format!("duplicate track id {}", d.track_id)));
            }
            if let Some(p) = &d.patch {
                if p.len() != PATCH_PIXELS {
                    return Err(("detections.patch".into(), format!("expected {PATCH_PIXELS} pixels, got {}", p.len())));
                }
            }
            if let Some(c) = d.mean_color {
                if !c.iter().all(|v| (0.0..=255.0).contains(v)) {
                    return Err(("detections.mean_color".into(), format!("channels must be in [0,255], got {c:?}")));
                }
            }
        }
        if self.keypoints.len() > KEYPOINT_COUNT {
            return Err(("keypoints".into(), format!("at most {KEYPOINT_COUNT} keypoints, got {}", self.keypoints.len())));
        }
        let mut ids = HashSet::new();
        for k in &self.keypoints {
            if !ids.insert(k.id) {
                return Err(("keypoints.id".into(), format!("duplicate keypoint id {}", k.id)));
            }
            k.check().map_err(|m| ("keypoints".to_string(), m))?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Wire format

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireDetection {
    track_id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bbox: Option<[f64; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mask: Option<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    patch: Option<Vec<u8>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mean_color: Option<[f64; 3]>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireKeypoint {
    id: i64,
    x: f64,
    y: f64,
    visible: u8,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireFrame {
    frame_idx: u64,
    timestamp_s: f64,
    image_w: u32,
    image_h: u32,
    #[serde(default)]
    detections: Vec<WireDetection>,
    #[serde(default)]
    keypoints: Vec<WireKeypoint>,
}

fn invalid(line: usize, field: &str, message: impl Into<String>) -> IngestError {
    IngestError::Validation {
        line,
        field: field.to_string(),
        message: message.into(),
    }
}

impl WireFrame {
    fn into_record(self, line: usize) -> Result<FrameRecord, IngestError> {
        let mut detections = Vec::with_capacity(self.detections.len());
        for d in self.detections {
            let mask = d.mask.map(|vs| MaskPolygon {
                vertices: vs.iter().map(|v| PixelPoint::new(v[0], v[1])).collect(),
            });
            let bbox = match (d.bbox, &mask) {
                (Some([x1, y1, x2, y2]), _) => {
                    BBox::new(x1, y1, x2, y2).map_err(|e| invalid(line, "detections.bbox", e.to_string()))?
                }
                (None, Some(m)) => mask_to_bbox(m).map_err(|e| invalid(line, "detections.mask", e.to_string()))?,
                (None, None) => return Err(invalid(line, "detections.bbox", "either bbox or mask is required")),
            };
            let patch = match d.patch {
                None => None,
                Some(bytes) if bytes.len() == 3 * PATCH_PIXELS => {
                    Some(bytes.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
                }
                Some(bytes) => {
                    return Err(invalid(
                        line,
                        "detections.patch",
                        format!("expected {} bytes, got {}", 3 * PATCH_PIXELS, bytes.len()),
                    ))
                }
            };
            detections.push(Detection {
                track_id: d.track_id,
                bbox,
                mask,
                patch,
                mean_color: d.mean_color,
            });
        }
        let mut keypoints = Vec::with_capacity(self.keypoints.len());
        for k in self.keypoints {
            let id = KeypointId::new(k.id).map_err(|e| invalid(line, "keypoints.id", e.to_string()))?;
            let visible = match k.visible {
                0 => false,
                1 => true,
                v => return Err(invalid(line, "keypoints.visible", format!("must be 0 or 1, got {v}"))),
            };
            keypoints.push(KeypointObservation {
                id,
                pos: NormPoint::new(k.x, k.y),
                visible,
            });
        }
        let record = FrameRecord {
            frame_idx: self.frame_idx,
            timestamp_s: self.timestamp_s,
            image_w: self.image_w,
            image_h: self.image_h,
            detections,
            keypoints,
        };
        record.validate().map_err(|(field, msg)| invalid(line, &field, msg))?;
        Ok(record)
    }

    fn from_record(r: &FrameRecord) -> Self {
        Self {
            frame_idx: r.frame_idx,
            timestamp_s: r.timestamp_s,
            image_w: r.image_w,
            image_h: r.image_h,
            detections: r
                .detections
                .iter()
                .map(|d| WireDetection {
                    track_id: d.track_id,
                    bbox: Some(d.bbox.as_array()),
                    mask: d.mask.as_ref().map(|m| m.vertices.iter().map(|v| [v.x, v.y]).collect()),
                    patch: d.patch.as_ref().map(|p| p.iter().flatten().copied().collect()),
                    mean_color: d.mean_color,
                })
                .collect(),
            keypoints: r
                .keypoints
                .iter()
                .map(|k| WireKeypoint {
                    id: k.id.into(),
                    x: k.pos.x,
                    y: k.pos.y,
                    visible: k.visible as u8,
                })
                .collect(),
        }
    }
}

/// Streaming reader over a JSON Lines frame stream.
///
/// Yields records in input order and enforces non-decreasing timestamps
/// across the stream.
pub struct FrameReader<R> {
    lines: std::io::Lines<R>,
    line_no: usize,
    last_timestamp: Option<f64>,
}

impl<R: BufRead> FrameReader<R> {
    pub fn new(reader: R) -> Self {
        Self {
            lines: reader.lines(),
            line_no: 0,
            last_timestamp: None,
        }
    }
}

impl<R: BufRead> Iterator for FrameReader<R> {
    type Item = Result<FrameRecord, IngestError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = match self.lines.next()? {
                Ok(l) => l,
                Err(e) => return Some(Err(e.into())),
            };
            self.line_no += 1;
            if line.trim().is_empty() {
                continue;
            }
            let line_no = self.line_no;
            let wire: WireFrame = match serde_json::from_str(&line) {
                Ok(w) => w,
                Err(e) => {
                    return Some(Err(IngestError::Parse {
                        line: line_no,
                        message: e.to_string(),
                    }))
                }
            };
            let record = match wire.into_record(line_no) {
                Ok(r) => r,
                Err(e) => return Some(Err(e)),
            };
            if let Some(prev) = self.last_timestamp {
                if record.timestamp_s < prev {
                    return Some(Err(invalid(
                        line_no,
                        "timestamp_s",
                        format!("{} is earlier than the previous record's {prev}", record.timestamp_s),
                    )));
                }
            }
            self.last_timestamp = Some(record.timestamp_s);
            return Some(Ok(record));
        }
    }
}

pub fn parse_frames<R: BufRead>(reader: R) -> Result<Vec<FrameRecord>, IngestError> {
    FrameReader::new(reader).collect()
}

pub fn parse_frames_str(text: &str) -> Result<Vec<FrameRecord>, IngestError> {
    parse_frames(text.as_bytes())
}

pub fn frame_to_json(record: &FrameRecord) -> String {
    serde_json::to_string(&WireFrame::from_record(record)).expect("frame records always serialize")
}

pub fn write_frames<W: Write>(mut out: W, records: &[FrameRecord]) -> std::io::Result<()> {
    for r in records {
        writeln!(out, "{}", frame_to_json(r))?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Flip augmentation

/// Involution over keypoint ids used to swap left/right labels on flip.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SwapMap([u8; KEYPOINT_COUNT]);

impl SwapMap {
    /// Builds a swap map from unordered pairs; unlisted ids map to themselves.
    pub fn from_pairs(pairs: &[(i64, i64)]) -> Result<Self, IngestError> {
        let mut map: [u8; KEYPOINT_COUNT] = std::array::from_fn(|i| i as u8);
        let mut assigned = [false; KEYPOINT_COUNT];
        for &(a, b) in pairs {
            let ia = KeypointId::new(a).map_err(|e| IngestError::SwapMap(e.to_string()))?;
            let ib = KeypointId::new(b).map_err(|e| IngestError::SwapMap(e.to_string()))?;
            if let Some(id) = [ia, ib].into_iter().find(|id| assigned[id.index()]) {
                return Err(IngestError::SwapMap(format!(
                    "id {id} appears in more than one pair; the map would not be an involution"
                )));
            }
            assigned[ia.index()] = true;
            assigned[ib.index()] = true;
            map[ia.index()] = ib.index() as u8;
            map[ib.index()] = ia.index() as u8;
        }
        Self::from_table(map)
    }

    /// Builds a swap map from a full table `id -> image`.
    pub fn from_table(table: [u8; KEYPOINT_COUNT]) -> Result<Self, IngestError> {
        for (i, &j) in table.iter().enumerate() {
            if j as usize >= KEYPOINT_COUNT || table[j as usize] as usize != i {
                return Err(IngestError::SwapMap(format!(
                    "mapping {i} -> {j} is not part of an involution"
                )));
            }
        }
        Ok(Self(table))
    }

    /// Parses `"0:9,1:10"` style pair lists.
    pub fn parse(text: &str) -> Result<Self, IngestError> {
        let mut pairs = Vec::new();
        for item in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (a, b) = item
                .split_once(':')
                .ok_or_else(|| IngestError::SwapMap(format!("expected `a:b`, got `{item}`")))?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<i64>()
                    .map_err(|_| IngestError::SwapMap(format!("`{s}` is not an integer")))
            };
            pairs.push((parse(a)?, parse(b)?));
        }
        Self::from_pairs(&pairs)
    }

    /// Left/right partners of the canonical field layout.
    pub fn canonical() -> Self {
        Self(MIRROR_PARTNER)
    }

    pub fn apply(&self, id: KeypointId) -> KeypointId {
        KeypointId::new(self.0[id.index()] as i64).expect("table entries are valid ids")
    }
}

impl Default for SwapMap {
    fn default() -> Self {
        Self::canonical()
    }
}

/// Horizontally flips a record: keypoint `x -> 1 - x` with ids swapped,
/// boxes and masks `x -> image_w - x`, patches mirrored column-wise.
///
/// In floating point `1 - (1 - x) == x` holds exactly for `x >= 0.5` and
/// for coordinates on a dyadic grid no finer than 2^-53; elsewhere the
/// double flip may differ from the input by one ulp.
pub fn flip_annotations(record: &FrameRecord, swap: &SwapMap) -> FrameRecord {
    let w = record.image_w as f64;
    let detections = record
        .detections
        .iter()
        .map(|d| Detection {
            track_id: d.track_id,
            bbox: d.bbox.mirrored(w),
            mask: d.mask.as_ref().map(|m| MaskPolygon {
                vertices: m.vertices.iter().map(|v| PixelPoint::new(w - v.x, v.y)).collect(),
            }),
            patch: d.patch.as_ref().map(|p| mirror_patch(p)),
            mean_color: d.mean_color,
        })
        .collect();
    let keypoints = record
        .keypoints
        .iter()
        .map(|k| KeypointObservation {
            id: swap.apply(k.id),
            pos: if k.visible {
                NormPoint::new(1.0 - k.pos.x, k.pos.y)
            } else {
                k.pos
            },
            visible: k.visible,
        })
        .collect();
    FrameRecord {
        frame_idx: record.frame_idx,
        timestamp_s: record.timestamp_s,
        image_w: record.image_w,
        image_h: record.image_h,
        detections,
        keypoints,
    }
}

fn mirror_patch(patch: &[[u8; 3]]) -> Vec<[u8; 3]> {
    if patch.len() != PATCH_PIXELS {
        return patch.to_vec();
    }
    let mut out = patch.to_vec();
    for row in out.chunks_exact_mut(PATCH_SIDE) {
        row.reverse();
    }
    out
}
