//! Metric field template and keypoint registry.
//!
//! World coordinates are meters with the origin at the bottom-left corner of
//! the pitch: `x` runs along the touchline from the left goal line, `y` runs
//! along the goal line from the bottom touchline.
//!
//! The 12 canonical keypoints, for a field of length `L` and width `W`
//! (`r = 9.15` circle radius, `d = sqrt(r² - 5.5²)` half-chord where the
//! penalty arc meets the box line):
//!
//! | id | landmark                                   | x            | y         |
//! |----|--------------------------------------------|--------------|-----------|
//! | 0  | left penalty arc ∩ box line, upper         | 16.5         | W/2 + d   |
//! | 1  | left penalty arc apex                      | 11 + r       | W/2       |
//! | 2  | left penalty arc ∩ box line, lower         | 16.5         | W/2 - d   |
//! | 3  | center circle, left extreme                | L/2 - r      | W/2       |
//! | 4  | midfield line ∩ far touchline              | L/2          | W         |
//! | 5  | center circle ∩ midfield line, upper       | L/2          | W/2 + r   |
//! | 6  | center circle center                       | L/2          | W/2       |
//! | 7  | center circle ∩ midfield line, lower       | L/2          | W/2 - r   |
//! | 8  | center circle, right extreme               | L/2 + r      | W/2       |
//! | 9  | right penalty arc ∩ box line, upper        | L - 16.5     | W/2 + d   |
//! | 10 | right penalty arc apex                     | L - 11 - r   | W/2       |
//! | 11 | right penalty arc ∩ box line, lower        | L - 16.5     | W/2 - d   |

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const KEYPOINT_COUNT: usize = 12;

pub const CENTER_CIRCLE_RADIUS_M: f64 = 9.15;
pub const PENALTY_BOX_DEPTH_M: f64 = 16.5;
pub const PENALTY_BOX_HALF_WIDTH_M: f64 = 20.16;
pub const GOAL_AREA_DEPTH_M: f64 = 5.5;
pub const GOAL_AREA_HALF_WIDTH_M: f64 = 9.16;
pub const PENALTY_SPOT_DISTANCE_M: f64 = 11.0;

pub const DEFAULT_LENGTH_M: f64 = 105.0;
pub const DEFAULT_WIDTH_M: f64 = 68.0;

/// Left/right partner of every keypoint under the mirror `x -> L - x`.
/// On-axis keypoints map to themselves.
pub const MIRROR_PARTNER: [u8; KEYPOINT_COUNT] = [9, 10, 11, 8, 4, 5, 6, 7, 3, 0, 1, 2];

#[derive(Debug, Error, PartialEq)]
pub enum FieldError {
    #[error("invalid field configuration: {0}")]
    Config(String),
    #[error("keypoint id {0} out of range 0..=11")]
    KeypointOutOfRange(i64),
    #[error("failed to read field config {path}: {reason}")]
    Read { path: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WorldPoint {
    pub x: f64,
    pub y: f64,
}

impl WorldPoint {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &WorldPoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PixelPoint {
    pub x: f64,
    pub y: f64,
}

impl PixelPoint {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

/// Image-normalized coordinates, or the `(-1, -1)` sentinel for a keypoint
/// that is not in the frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormPoint {
    pub x: f64,
    pub y: f64,
}

impl NormPoint {
    pub const SENTINEL: NormPoint = NormPoint { x: -1.0, y: -1.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_sentinel(&self) -> bool {
        self.x == -1.0 && self.y == -1.0
    }

    pub fn in_unit_square(&self) -> bool {
        (0.0..=1.0).contains(&self.x) && (0.0..=1.0).contains(&self.y)
    }

    pub fn is_valid(&self) -> bool {
        self.is_sentinel() || self.in_unit_square()
    }

    pub fn to_pixels(&self, image_w: f64, image_h: f64) -> PixelPoint {
        PixelPoint::new(self.x * image_w, self.y * image_h)
    }
}

/// Validated keypoint identifier in `0..=11`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "i64")]
pub struct KeypointId(u8);

impl KeypointId {
    pub fn new(id: i64) -> Result<Self, FieldError> {
        if (0..KEYPOINT_COUNT as i64).contains(&id) {
            Ok(Self(id as u8))
        } else {
            Err(FieldError::KeypointOutOfRange(id))
        }
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn mirror(self) -> Self {
        Self(MIRROR_PARTNER[self.index()])
    }

    pub fn all() -> impl Iterator<Item = KeypointId> {
        (0..KEYPOINT_COUNT as u8).map(KeypointId)
    }
}

impl TryFrom<i64> for KeypointId {
    type Error = FieldError;

    fn try_from(value: i64) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<KeypointId> for i64 {
    fn from(id: KeypointId) -> Self {
        id.0 as i64
    }
}

impl std::fmt::Display for KeypointId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeypointOverride {
    pub id: i64,
    pub x: f64,
    pub y: f64,
}

/// Field dimensions plus optional keypoint overrides, as loaded from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldConfig {
    pub length_m: f64,
    pub width_m: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub keypoint_overrides: Vec<KeypointOverride>,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self {
            length_m: DEFAULT_LENGTH_M,
            width_m: DEFAULT_WIDTH_M,
            keypoint_overrides: Vec::new(),
        }
    }
}

impl FieldConfig {
    pub fn new(length_m: f64, width_m: f64) -> Self {
        Self {
            length_m,
            width_m,
            keypoint_overrides: Vec::new(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, FieldError> {
        toml::from_str(text).map_err(|e| FieldError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, FieldError> {
        let text = std::fs::read_to_string(path).map_err(|e| FieldError::Read {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), FieldError> {
        let (l, w) = (self.length_m, self.width_m);
        if !(l.is_finite() && w.is_finite()) || l <= 0.0 || w <= 0.0 {
            return Err(FieldError::Config(format!(
                "dimensions must be positive and finite, got {l} x {w}"
            )));
        }
        if l < w {
            return Err(FieldError::Config(format!(
                "length {l} must not be smaller than width {w}"
            )));
        }
        // the canonical landmarks must fit inside the rectangle
        let min_w = 2.0 * CENTER_CIRCLE_RADIUS_M;
        let min_l = 2.0 * (PENALTY_SPOT_DISTANCE_M + CENTER_CIRCLE_RADIUS_M);
        if w < min_w || l < min_l {
            return Err(FieldError::Config(format!(
                "field {l} x {w} too small for standard markings (need at least {min_l} x {min_w})"
            )));
        }
        let mut seen = [false; KEYPOINT_COUNT];
        for o in &self.keypoint_overrides {
            let id = KeypointId::new(o.id).map_err(|_| {
                FieldError::Config(format!("override id {} out of range 0..=11", o.id))
            })?;
            if std::mem::replace(&mut seen[id.index()], true) {
                return Err(FieldError::Config(format!("duplicate override id {}", o.id)));
            }
            if !(o.x.is_finite() && o.y.is_finite()) {
                return Err(FieldError::Config(format!("override {} is not finite", o.id)));
            }
            if !(0.0..=l).contains(&o.x) || !(0.0..=w).contains(&o.y) {
                return Err(FieldError::Config(format!(
                    "override {} at ({}, {}) lies outside the field",
                    o.id, o.x, o.y
                )));
            }
        }
        Ok(())
    }
}

/// Field line geometry in world meters, used for rendering.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Marking {
    Segment { a: WorldPoint, b: WorldPoint },
    /// Counter-clockwise arc from `start_rad` to `end_rad` (world frame, y up).
    Arc {
        center: WorldPoint,
        radius: f64,
        start_rad: f64,
        end_rad: f64,
    },
    Spot { center: WorldPoint },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldTemplate {
    config: FieldConfig,
    keypoints: [WorldPoint; KEYPOINT_COUNT],
    markings: Vec<Marking>,
}

impl FieldTemplate {
    /// Builds the canonical template; overrides are applied last.
    ///
    /// Overriding one member of a left/right pair moves its partner to the
    /// mirror image so the template stays symmetric about midfield. On-axis
    /// keypoints may only be moved along the midfield line.
    pub fn canonical(config: FieldConfig) -> Result<Self, FieldError> {
        config.validate()?;
        let (l, w) = (config.length_m, config.width_m);
        let r = CENTER_CIRCLE_RADIUS_M;
        let half_chord = arc_box_half_chord();
        let mid_x = l / 2.0;
        let mid_y = w / 2.0;
        let apex = PENALTY_SPOT_DISTANCE_M + r;

        let mut keypoints = [
            WorldPoint::new(PENALTY_BOX_DEPTH_M, mid_y + half_chord),
            WorldPoint::new(apex, mid_y),
            WorldPoint::new(PENALTY_BOX_DEPTH_M, mid_y - half_chord),
            WorldPoint::new(mid_x - r, mid_y),
            WorldPoint::new(mid_x, w),
            WorldPoint::new(mid_x, mid_y + r),
            WorldPoint::new(mid_x, mid_y),
            WorldPoint::new(mid_x, mid_y - r),
            WorldPoint::new(mid_x + r, mid_y),
            WorldPoint::new(l - PENALTY_BOX_DEPTH_M, mid_y + half_chord),
            WorldPoint::new(l - apex, mid_y),
            WorldPoint::new(l - PENALTY_BOX_DEPTH_M, mid_y - half_chord),
        ];

        let mut overridden = [false; KEYPOINT_COUNT];
        for o in &config.keypoint_overrides {
            overridden[o.id as usize] = true;
        }
        for o in &config.keypoint_overrides {
            let id = KeypointId::new(o.id)?;
            let partner = id.mirror();
            let p = WorldPoint::new(o.x, o.y);
            if partner == id {
                if (p.x - mid_x).abs() > 1e-9 {
                    return Err(FieldError::Config(format!(
                        "keypoint {id} lies on the midfield line; override x must be {mid_x}"
                    )));
                }
                keypoints[id.index()] = p;
                continue;
            }
            let mirrored = WorldPoint::new(l - p.x, p.y);
            if overridden[partner.index()] {
                let other = config
                    .keypoint_overrides
                    .iter()
                    .find(|q| q.id == i64::from(partner))
                    .expect("partner marked as overridden");
                if (other.x - mirrored.x).abs() > 1e-9 || (other.y - mirrored.y).abs() > 1e-9 {
                    return Err(FieldError::Config(format!(
                        "overrides for mirror pair {id}/{partner} are not symmetric about x = {mid_x}"
                    )));
                }
            }
            keypoints[id.index()] = p;
            keypoints[partner.index()] = mirrored;
        }

        let markings = standard_markings(l, w);
        Ok(Self {
            config,
            keypoints,
            markings,
        })
    }

    pub fn config(&self) -> &FieldConfig {
        &self.config
    }

    pub fn length_m(&self) -> f64 {
        self.config.length_m
    }

    pub fn width_m(&self) -> f64 {
        self.config.width_m
    }

    pub fn keypoints(&self) -> &[WorldPoint; KEYPOINT_COUNT] {
        &self.keypoints
    }

    pub fn markings(&self) -> &[Marking] {
        &self.markings
    }

    pub fn position(&self, id: KeypointId) -> WorldPoint {
        self.keypoints[id.index()]
    }

    pub fn keypoint_world_position(&self, keypoint_id: i64) -> Result<WorldPoint, FieldError> {
        Ok(self.position(KeypointId::new(keypoint_id)?))
    }

    pub fn contains(&self, p: &WorldPoint) -> bool {
        (0.0..=self.length_m()).contains(&p.x) && (0.0..=self.width_m()).contains(&p.y)
    }
}

impl Default for FieldTemplate {
    fn default() -> Self {
        Self::canonical(FieldConfig::default()).expect("default field config is valid")
    }
}

fn arc_box_half_chord() -> f64 {
    let spot_to_line = PENALTY_BOX_DEPTH_M - PENALTY_SPOT_DISTANCE_M;
    (CENTER_CIRCLE_RADIUS_M.powi(2) - spot_to_line.powi(2)).sqrt()
}

fn standard_markings(l: f64, w: f64) -> Vec<Marking> {
    let seg = |ax, ay, bx, by| Marking::Segment {
        a: WorldPoint::new(ax, ay),
        b: WorldPoint::new(bx, by),
    };
    let mid_x = l / 2.0;
    let mid_y = w / 2.0;
    let box_hw = PENALTY_BOX_HALF_WIDTH_M.min(mid_y);
    let goal_hw = GOAL_AREA_HALF_WIDTH_M.min(mid_y);
    let arc_half_angle = ((PENALTY_BOX_DEPTH_M - PENALTY_SPOT_DISTANCE_M) / CENTER_CIRCLE_RADIUS_M).acos();

    let mut m = vec![
        seg(0.0, 0.0, l, 0.0),
        seg(l, 0.0, l, w),
        seg(l, w, 0.0, w),
        seg(0.0, w, 0.0, 0.0),
        seg(mid_x, 0.0, mid_x, w),
        Marking::Arc {
            center: WorldPoint::new(mid_x, mid_y),
            radius: CENTER_CIRCLE_RADIUS_M,
            start_rad: 0.0,
            end_rad: 2.0 * PI,
        },
        Marking::Spot {
            center: WorldPoint::new(mid_x, mid_y),
        },
    ];
    for (goal_x, dir) in [(0.0, 1.0), (l, -1.0)] {
        let bx = goal_x + dir * PENALTY_BOX_DEPTH_M;
        m.push(seg(goal_x, mid_y - box_hw, bx, mid_y - box_hw));
        m.push(seg(bx, mid_y - box_hw, bx, mid_y + box_hw));
        m.push(seg(bx, mid_y + box_hw, goal_x, mid_y + box_hw));
        let gx = goal_x + dir * GOAL_AREA_DEPTH_M;
        m.push(seg(goal_x, mid_y - goal_hw, gx, mid_y - goal_hw));
        m.push(seg(gx, mid_y - goal_hw, gx, mid_y + goal_hw));
        m.push(seg(gx, mid_y + goal_hw, goal_x, mid_y + goal_hw));
        let spot = WorldPoint::new(goal_x + dir * PENALTY_SPOT_DISTANCE_M, mid_y);
        m.push(Marking::Spot { center: spot });
        let facing = if dir > 0.0 { 0.0 } else { PI };
        m.push(Marking::Arc {
            center: spot,
            radius: CENTER_CIRCLE_RADIUS_M,
            start_rad: facing - arc_half_angle,
            end_rad: facing + arc_half_angle,
        });
    }
    m
}
