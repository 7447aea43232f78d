//! Unsupervised two-team classification from jersey colors.
//!
//! Each detection contributes the mean RGB of a 5×5 patch taken at the box
//! center. Colors are split into two clusters with k-means: the first seed is
//! drawn from a fixed-seed generator over a canonical ordering of the input,
//! the second is the point farthest from it; Lloyd iterations run until the
//! centroids move less than 1e-6 or 100 iterations pass, then single-point
//! moves are applied while any of them lowers the inertia. Team 0 is the
//! cluster with the darker centroid (luma `0.299 r + 0.587 g + 0.114 b`).

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{Detection, FrameRecord, PATCH_PIXELS};

pub const DEFAULT_SEED: u64 = 0x5eed;
pub const MAX_ITERATIONS: usize = 100;
pub const CONVERGENCE_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TeamError {
    #[error("patch must hold {PATCH_PIXELS} pixels, got {0}")]
    PatchSize(usize),
    #[error("need at least 2 colors to cluster, got {0}")]
    InsufficientData(usize),
    #[error("all colors are identical; every track placed in team 0")]
    Degenerate { fallback: Box<TeamAssignment> },
    #[error("track {0} listed more than once")]
    DuplicateTrack(u64),
    #[error("no detection carries a color patch or mean color")]
    NoColors,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ColorVec {
    pub r: f64,
    pub g: f64,
    pub b: f64,
}

impl ColorVec {
    pub const fn new(r: f64, g: f64, b: f64) -> Self {
        Self { r, g, b }
    }

    pub fn from_array(c: [f64; 3]) -> Self {
        Self::new(c[0], c[1], c[2])
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.r, self.g, self.b]
    }

    pub fn dist2(&self, o: &ColorVec) -> f64 {
        (self.r - o.r).powi(2) + (self.g - o.g).powi(2) + (self.b - o.b).powi(2)
    }

    pub fn distance(&self, o: &ColorVec) -> f64 {
        self.dist2(o).sqrt()
    }

    pub fn luminance(&self) -> f64 {
        0.299 * self.r + 0.587 * self.g + 0.114 * self.b
    }

    fn total_cmp(&self, o: &ColorVec) -> std::cmp::Ordering {
        self.r
            .total_cmp(&o.r)
            .then(self.g.total_cmp(&o.g))
            .then(self.b.total_cmp(&o.b))
    }
}

pub fn patch_mean_color(patch: &[[u8; 3]]) -> Result<ColorVec, TeamError> {
    if patch.len() != PATCH_PIXELS {
        return Err(TeamError::PatchSize(patch.len()));
    }
    let mut sum = [0u32; 3];
    for px in patch {
        for c in 0..3 {
            sum[c] += px[c] as u32;
        }
    }
    let n = PATCH_PIXELS as f64;
    Ok(ColorVec::new(sum[0] as f64 / n, sum[1] as f64 / n, sum[2] as f64 / n))
}

/// Patch mean when a patch is present, else the precomputed mean color.
pub fn detection_color(d: &Detection) -> Option<ColorVec> {
    match (&d.patch, d.mean_color) {
        (Some(p), _) => patch_mean_color(p).ok(),
        (None, Some(c)) => Some(ColorVec::from_array(c)),
        (None, None) => None,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TeamAssignment {
    pub labels: BTreeMap<u64, u8>,
    pub centroids: [ColorVec; 2],
    pub inertia: f64,
}

/// Nearest centroid; exact ties go to team 0.
pub fn assign_color(assignment: &TeamAssignment, color: &ColorVec) -> u8 {
    let d0 = color.dist2(&assignment.centroids[0]);
    let d1 = color.dist2(&assignment.centroids[1]);
    if d1 < d0 {
        1
    } else {
        0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterOptions {
    pub seed: u64,
    /// Independent seedings; the lowest-inertia result is kept.
    pub restarts: usize,
}

impl Default for ClusterOptions {
    fn default() -> Self {
        Self {
            seed: DEFAULT_SEED,
            restarts: 1,
        }
    }
}

pub fn cluster_teams(colors: &[(u64, ColorVec)]) -> Result<TeamAssignment, TeamError> {
    cluster_teams_with(colors, &ClusterOptions::default())
}

pub fn cluster_teams_with(colors: &[(u64, ColorVec)], opts: &ClusterOptions) -> Result<TeamAssignment, TeamError> {
    if colors.len() < 2 {
        return Err(TeamError::InsufficientData(colors.len()));
    }
    let mut entries = colors.to_vec();
    entries.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let mut sorted_ids: Vec<u64> = entries.iter().map(|e| e.0).collect();
    sorted_ids.sort_unstable();
    if let Some(w) = sorted_ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(TeamError::DuplicateTrack(w[0]));
    }
    let points: Vec<ColorVec> = entries.iter().map(|e| e.1).collect();
    if points.iter().all(|p| p == &points[0]) {
        return Err(TeamError::Degenerate {
            fallback: Box::new(TeamAssignment {
                labels: entries.iter().map(|e| (e.0, 0)).collect(),
                centroids: [points[0], points[0]],
                inertia: 0.0,
            }),
        });
    }

    let mut best: Option<(Vec<u8>, f64)> = None;
    for restart in 0..opts.restarts.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(restart as u64));
        let first = rng.random_range(0..points.len());
        let labels = two_means(&points, first);
        let inertia = inertia_of(&points, &labels);
        if best.as_ref().is_none_or(|(_, b)| inertia < *b) {
            best = Some((labels, inertia));
        }
    }
    let (mut labels, inertia) = best.expect("at least one restart");
    let mut centroids = centroids_of(&points, &labels);
    if centroids[1].luminance() < centroids[0].luminance()
        || (centroids[1].luminance() == centroids[0].luminance()
            && centroids[1].total_cmp(&centroids[0]).is_lt())
    {
        centroids.swap(0, 1);
        labels.iter_mut().for_each(|l| *l = 1 - *l);
    }
    Ok(TeamAssignment {
        labels: entries.iter().zip(&labels).map(|(e, &l)| (e.0, l)).collect(),
        centroids,
        inertia,
    })
}

fn centroids_of(points: &[ColorVec], labels: &[u8]) -> [ColorVec; 2] {
    let mut sum = [[0.0f64; 3]; 2];
    let mut count = [0usize; 2];
    for (p, &l) in points.iter().zip(labels) {
        let l = l as usize;
        count[l] += 1;
        sum[l][0] += p.r;
        sum[l][1] += p.g;
        sum[l][2] += p.b;
    }
    std::array::from_fn(|k| {
        let n = count[k].max(1) as f64;
        ColorVec::new(sum[k][0] / n, sum[k][1] / n, sum[k][2] / n)
    })
}

fn inertia_of(points: &[ColorVec], labels: &[u8]) -> f64 {
    let c = centroids_of(points, labels);
    points.iter().zip(labels).map(|(p, &l)| p.dist2(&c[l as usize])).sum()
}

fn nearest(p: &ColorVec, c: &[ColorVec; 2]) -> u8 {
    if p.dist2(&c[1]) < p.dist2(&c[0]) {
        1
    } else {
        0
    }
}

fn farthest_from(points: &[ColorVec], from: &ColorVec) -> usize {
    let mut best = 0;
    for (i, p) in points.iter().enumerate() {
        if p.dist2(from) > points[best].dist2(from) {
            best = i;
        }
    }
    best
}

/// Lloyd iterations from seeds `first` and its farthest point, then
/// single-point refinement. Requires at least two distinct points.
fn two_means(points: &[ColorVec], first: usize) -> Vec<u8> {
    let second = farthest_from(points, &points[first]);
    let mut centroids = [points[first], points[second]];
    let mut labels = vec![0u8; points.len()];

    for _ in 0..MAX_ITERATIONS {
        for (l, p) in labels.iter_mut().zip(points) {
            *l = nearest(p, &centroids);
        }
        for k in 0..2u8 {
            if !labels.contains(&k) {
                // reseed an empty cluster with the point farthest from the other centroid
                let other = centroids[1 - k as usize];
                let i = farthest_from(points, &other);
                labels[i] = k;
            }
        }
        let next = centroids_of(points, &labels);
        let moved = next
            .iter()
            .zip(&centroids)
            .map(|(a, b)| a.distance(b))
            .fold(0.0, f64::max);
        centroids = next;
        if moved < CONVERGENCE_TOL {
            break;
        }
    }
    for (l, p) in labels.iter_mut().zip(points) {
        *l = nearest(p, &centroids);
    }
    refine_single_moves(points, &mut labels);
    labels
}

/// Moves single points between clusters while doing so strictly lowers
/// the inertia (Hartigan's criterion).
fn refine_single_moves(points: &[ColorVec], labels: &mut [u8]) {
    // a full pass without improvement terminates; inertia strictly decreases otherwise
    let scale = points.iter().map(|p| p.dist2(&ColorVec::default())).fold(1.0, f64::max);
    loop {
        let mut improved = false;
        for i in 0..points.len() {
            let from = labels[i] as usize;
            let mut count = [0usize; 2];
            for &l in labels.iter() {
                count[l as usize] += 1;
            }
            if count[from] < 2 {
                continue;
            }
            let c = centroids_of(points, labels);
            let to = 1 - from;
            let n_from = count[from] as f64;
            let n_to = count[to] as f64;
            let gain = n_from / (n_from - 1.0) * points[i].dist2(&c[from]);
            let cost = n_to / (n_to + 1.0) * points[i].dist2(&c[to]);
            if cost < gain - 1e-12 * scale {
                labels[i] = to as u8;
                improved = true;
            }
        }
        if !improved {
            break;
        }
    }
}

// ---------------------------------------------------------------------------
// Sequence-level assignment

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SequenceTeamOptions {
    pub cluster: ClusterOptions,
    /// Re-fit the centroids every N frames and take each track's majority label.
    pub reestimate_every: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackTeam {
    pub track_id: u64,
    pub team: u8,
    pub color: [f64; 3],
    pub dist_to_centroid0: f64,
    pub dist_to_centroid1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceTeams {
    pub assignment: TeamAssignment,
    pub tracks: Vec<TrackTeam>,
    /// Frame used to fit the reported centroids.
    pub init_frame: u64,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Per-channel median of a set of colors.
pub fn median_color(colors: &[ColorVec]) -> ColorVec {
    let mut r: Vec<f64> = colors.iter().map(|c| c.r).collect();
    let mut g: Vec<f64> = colors.iter().map(|c| c.g).collect();
    let mut b: Vec<f64> = colors.iter().map(|c| c.b).collect();
    ColorVec::new(median(&mut r), median(&mut g), median(&mut b))
}

fn frame_colors(frame: &FrameRecord) -> Vec<(u64, ColorVec)> {
    frame
        .detections
        .iter()
        .filter_map(|d| detection_color(d).map(|c| (d.track_id, c)))
        .collect()
}

fn fit_window(frames: &[FrameRecord], opts: &ClusterOptions) -> Option<Result<(u64, TeamAssignment), TeamError>> {
    let frame = frames.iter().find(|f| {
        let colors = frame_colors(f);
        colors.len() >= 2 && colors.iter().any(|c| c.1 != colors[0].1)
    })?;
    Some(cluster_teams_with(&frame_colors(frame), opts).map(|a| (frame.frame_idx, a)))
}

/// Fits team centroids on the first frame with two distinct colors, then
/// labels every track by the median of its per-frame colors.
pub fn assign_sequence(frames: &[FrameRecord], opts: &SequenceTeamOptions) -> Result<SequenceTeams, TeamError> {
    let mut per_track: BTreeMap<u64, Vec<ColorVec>> = BTreeMap::new();
    for f in frames {
        for (id, c) in frame_colors(f) {
            per_track.entry(id).or_default().push(c);
        }
    }
    if per_track.is_empty() {
        return Err(TeamError::NoColors);
    }
    let (init_frame, base) = match fit_window(frames, &opts.cluster) {
        Some(r) => r?,
        None => {
            let most = frames.iter().map(|f| frame_colors(f).len()).max().unwrap_or(0);
            return Err(TeamError::InsufficientData(most));
        }
    };

    let window = opts.reestimate_every.filter(|&n| n > 0).unwrap_or(frames.len().max(1));
    // (label votes, first window label) per track
    let mut votes: BTreeMap<u64, ([usize; 2], Option<u8>)> = BTreeMap::new();
    for chunk in frames.chunks(window) {
        let centroids = match fit_window(chunk, &opts.cluster) {
            Some(Ok((_, a))) => a,
            _ => base.clone(),
        };
        let mut colors: BTreeMap<u64, Vec<ColorVec>> = BTreeMap::new();
        for f in chunk {
            for (id, c) in frame_colors(f) {
                colors.entry(id).or_default().push(c);
            }
        }
        for (id, cs) in colors {
            let label = assign_color(&centroids, &median_color(&cs));
            let v = votes.entry(id).or_insert(([0, 0], None));
            v.0[label as usize] += 1;
            v.1.get_or_insert(label);
        }
    }

    let mut labels = BTreeMap::new();
    let mut tracks = Vec::new();
    for (id, colors) in &per_track {
        let (count, first) = votes[id];
        let team = match count[0].cmp(&count[1]) {
            std::cmp::Ordering::Greater => 0,
            std::cmp::Ordering::Less => 1,
            std::cmp::Ordering::Equal => first.unwrap_or(0),
        };
        let color = median_color(colors);
        labels.insert(*id, team);
        tracks.push(TrackTeam {
            track_id: *id,
            team,
            color: color.as_array(),
            dist_to_centroid0: color.distance(&base.centroids[0]),
            dist_to_centroid1: color.distance(&base.centroids[1]),
        });
    }
    Ok(SequenceTeams {
        assignment: TeamAssignment {
            labels,
            centroids: base.centroids,
            inertia: base.inertia,
        },
        tracks,
        init_frame,
    })
}
