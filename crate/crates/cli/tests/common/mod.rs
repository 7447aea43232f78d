//! Synthetic match footage with known geometry, shared by the CLI tests and
//! the acceptance suite.
#![allow(dead_code)]

use std::collections::BTreeMap;

use pitchmap::ingest::{BBox, Detection, FrameRecord, KeypointObservation};
use pitchmap::{FieldTemplate, Homography, KeypointId, PixelPoint, WorldPoint};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const IMAGE_W: u32 = 710;
pub const IMAGE_H: u32 = 400;
pub const FPS: f64 = 25.0;

/// Pinhole camera on the near touchline, rotating about a vertical axis so
/// that it aims at `(L/2 + aim_offset_m, W/2)`.
#[derive(Debug, Clone, Copy)]
pub struct Camera {
    pub aim_offset_m: f64,
    pub height_m: f64,
    pub setback_m: f64,
    pub focal_px: f64,
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn unit(a: [f64; 3]) -> [f64; 3] {
    let n = dot(a, a).sqrt();
    [a[0] / n, a[1] / n, a[2] / n]
}

impl Camera {
    pub fn sideline(aim_offset_m: f64) -> Self {
        Self {
            aim_offset_m,
            height_m: 18.0,
            setback_m: 30.0,
            focal_px: 500.0,
        }
    }

    /// Field-plane to pixel map.
    pub fn world_to_image(&self, field: &FieldTemplate) -> Homography {
        let (l, w) = (field.length_m(), field.width_m());
        let c = [l / 2.0, -self.setback_m, self.height_m];
        let target = [l / 2.0 + self.aim_offset_m, w / 2.0, 0.0];
        let f = unit(sub(target, c));
        let r = unit(cross(f, [0.0, 0.0, 1.0]));
        let d = cross(f, r);
        let (cx, cy) = (IMAGE_W as f64 / 2.0, IMAGE_H as f64 / 2.0);
        let rows = [r, d, f];
        let m: Vec<[f64; 3]> = rows.iter().map(|row| [row[0], row[1], -dot(*row, c)]).collect();
        let fp = self.focal_px;
        let k = |i: usize| [fp * m[0][i] + cx * m[2][i], fp * m[1][i] + cy * m[2][i], m[2][i]];
        let (c0, c1, c2) = (k(0), k(1), k(2));
        Homography::from_row_major([c0[0], c1[0], c2[0], c0[1], c1[1], c2[1], c0[2], c1[2], c2[2]]).unwrap()
    }

    /// Pixel to field-plane map.
    pub fn image_to_world(&self, field: &FieldTemplate) -> Homography {
        self.world_to_image(field).invert().unwrap()
    }
}

pub fn in_image(p: &PixelPoint) -> bool {
    (0.0..=IMAGE_W as f64).contains(&p.x) && (0.0..=IMAGE_H as f64).contains(&p.y)
}

/// Pixel position of a world point through a world-to-image map.
pub fn project(w2i: &Homography, p: &WorldPoint) -> PixelPoint {
    let (x, y) = w2i.map_xy(p.x, p.y).unwrap();
    PixelPoint::new(x, y)
}

/// Keypoints of the template seen by the camera, in normalized coordinates.
pub fn visible_keypoints(field: &FieldTemplate, w2i: &Homography) -> Vec<(KeypointId, PixelPoint)> {
    KeypointId::all()
        .map(|id| (id, project(w2i, &field.position(id))))
        .filter(|(_, p)| in_image(p))
        .collect()
}

pub struct Fixture {
    pub field: FieldTemplate,
    pub frames: Vec<FrameRecord>,
    /// Pixel-to-world map of each frame.
    pub truth_h: Vec<Homography>,
    /// Generating positions per track, one per frame.
    pub trajectories: BTreeMap<u64, Vec<WorldPoint>>,
    /// Generating team per track; team 0 wears the darker kit.
    pub teams: BTreeMap<u64, u8>,
}

pub const KITS: [[f64; 3]; 2] = [[170.0, 25.0, 35.0], [235.0, 235.0, 225.0]];

/// `n_frames` frames of 22 players, 11 per kit, under a panning camera.
pub fn match_fixture(n_frames: usize, with_colors: bool) -> Fixture {
    let field = FieldTemplate::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let players: Vec<(u64, u8, WorldPoint, f64, f64, f64)> = (0..22)
        .map(|i| {
            let team = (i / 11) as u8;
            let base = WorldPoint::new(rng.random_range(30.0..75.0), rng.random_range(12.0..56.0));
            let radius = rng.random_range(2.0..8.0);
            let omega = rng.random_range(0.3..1.2);
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            (i as u64 + 1, team, base, radius, omega, phase)
        })
        .collect();

    let mut frames = Vec::with_capacity(n_frames);
    let mut truth_h = Vec::with_capacity(n_frames);
    let mut trajectories: BTreeMap<u64, Vec<WorldPoint>> = BTreeMap::new();
    for k in 0..n_frames {
        let t = k as f64 / FPS;
        let cam = Camera::sideline(8.0 * (t * 0.9).sin());
        let w2i = cam.world_to_image(&field);
        let keypoints = visible_keypoints(&field, &w2i)
            .into_iter()
            .map(|(id, p)| KeypointObservation::visible(id, p.x / IMAGE_W as f64, p.y / IMAGE_H as f64))
            .collect();
        let mut detections = Vec::new();
        for &(id, team, base, radius, omega, phase) in &players {
            let a = omega * t + phase;
            let pos = WorldPoint::new(base.x + radius * a.cos(), base.y + 0.6 * radius * a.sin());
            trajectories.entry(id).or_default().push(pos);
            let foot = project(&w2i, &pos);
            let bbox = BBox::new(foot.x - 8.0, foot.y - 40.0, foot.x + 8.0, foot.y).unwrap();
            let patch = with_colors.then(|| {
                (0..25)
                    .map(|_| {
                        let c = KITS[team as usize];
                        std::array::from_fn(|ch| (c[ch] + rng.random_range(-12.0..12.0)).clamp(0.0, 255.0).round() as u8)
                    })
                    .collect()
            });
            detections.push(Detection {
                track_id: id,
                bbox,
                mask: None,
                patch,
                mean_color: None,
            });
        }
        frames.push(FrameRecord {
            frame_idx: k as u64,
            timestamp_s: t,
            image_w: IMAGE_W,
            image_h: IMAGE_H,
            detections,
            keypoints,
        });
        truth_h.push(cam.image_to_world(&field));
    }
    let teams = players.iter().map(|p| (p.0, p.1)).collect();
    Fixture {
        field,
        frames,
        truth_h,
        trajectories,
        teams,
    }
}

/// Path length of a generating trajectory.
pub fn true_distance(points: &[WorldPoint]) -> f64 {
    points.windows(2).map(|w| (w[1].x - w[0].x).hypot(w[1].y - w[0].y)).sum()
}

pub fn write_frames_file(path: &std::path::Path, frames: &[FrameRecord]) {
    let mut buf = Vec::new();
    pitchmap::ingest::write_frames(&mut buf, frames).unwrap();
    std::fs::write(path, buf).unwrap();
}
