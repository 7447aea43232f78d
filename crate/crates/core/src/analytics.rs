//! World-space tracks and the statistics derived from them.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{FieldTemplate, WorldPoint};
use crate::homography::FrameCalibration;
use crate::ingest::{Anchor, FrameRecord};
use crate::teams::TeamAssignment;

pub const DEFAULT_SPEED_WINDOW_S: f64 = 0.5;
pub const DEFAULT_CELL_SIZE_M: f64 = 5.0;
const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum AnalyticsError {
    #[error("track {track_id}: {message}")]
    InvalidTrack { track_id: u64, message: String },
    #[error("speed needs at least 2 samples, track {0} has fewer")]
    TooFewSamples(u64),
    #[error("{name} must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("track file line {line}: {message}")]
    Record { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackSample {
    pub frame_idx: u64,
    pub timestamp_s: f64,
    pub pos: WorldPoint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub track_id: u64,
    samples: Vec<TrackSample>,
    pub team: Option<u8>,
}

impl Track {
    /// Samples must be non-empty with strictly increasing timestamps.
    pub fn new(track_id: u64, samples: Vec<TrackSample>, team: Option<u8>) -> Result<Self, AnalyticsError> {
        if samples.is_empty() {
            return Err(AnalyticsError::InvalidTrack {
                track_id,
                message: "no samples".into(),
            });
        }
        if let Some(w) = samples.windows(2).find(|w| !(w[1].timestamp_s > w[0].timestamp_s)) {
            return Err(AnalyticsError::InvalidTrack {
                track_id,
                message: format!("timestamps not increasing: {} then {}", w[0].timestamp_s, w[1].timestamp_s),
            });
        }
        Ok(Self { track_id, samples, team })
    }

    pub fn samples(&self) -> &[TrackSample] {
        &self.samples
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.last().unwrap().timestamp_s - self.samples[0].timestamp_s
    }

    /// Centered moving average of positions over `window` samples (odd
    /// windows are symmetric; the window shrinks at the ends).
    pub fn smoothed(&self, window: usize) -> Track {
        if window <= 1 {
            return self.clone();
        }
        let half_lo = (window - 1) / 2;
        let half_hi = window / 2;
        let n = self.samples.len();
        let samples = (0..n)
            .map(|i| {
                let lo = i.saturating_sub(half_lo);
                let hi = (i + half_hi).min(n - 1);
                let m = (hi - lo + 1) as f64;
                let (sx, sy) = self.samples[lo..=hi]
                    .iter()
                    .fold((0.0, 0.0), |(sx, sy), s| (sx + s.pos.x, sy + s.pos.y));
                TrackSample {
                    pos: WorldPoint::new(sx / m, sy / m),
                    ..self.samples[i]
                }
            })
            .collect();
        Track {
            track_id: self.track_id,
            samples,
            team: self.team,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BuildDiagnostics {
    /// Frames with no usable homography.
    pub uncalibrated_frames: Vec<u64>,
    /// (frame, track, reason) for detections that produced no sample.
    pub dropped: Vec<(u64, u64, String)>,
}

/// Projects every detection of every calibrated frame into world space and
/// groups the results by track id.
pub fn build_tracks(
    frames: &[FrameRecord],
    calibrations: &[FrameCalibration],
    anchor: Anchor,
) -> (Vec<Track>, BuildDiagnostics) {
    let by_frame: HashMap<u64, &FrameCalibration> = calibrations.iter().map(|c| (c.frame_idx, c)).collect();
    let mut grouped: BTreeMap<u64, Vec<TrackSample>> = BTreeMap::new();
    let mut diag = BuildDiagnostics::default();
    for frame in frames {
        let Some(h) = by_frame.get(&frame.frame_idx).and_then(|c| c.homography) else {
            diag.uncalibrated_frames.push(frame.frame_idx);
            continue;
        };
        for d in &frame.detections {
            let pos = match h.apply(anchor.point(&d.bbox)) {
                Ok(p) => p,
                Err(e) => {
                    diag.dropped.push((frame.frame_idx, d.track_id, e.to_string()));
                    continue;
                }
            };
            let samples = grouped.entry(d.track_id).or_default();
            if let Some(last) = samples.last() {
                if !(frame.timestamp_s > last.timestamp_s) {
                    diag.dropped.push((
                        frame.frame_idx,
                        d.track_id,
                        format!("timestamp {} does not advance past {}", frame.timestamp_s, last.timestamp_s),
                    ));
                    continue;
                }
            }
            samples.push(TrackSample {
                frame_idx: frame.frame_idx,
                timestamp_s: frame.timestamp_s,
                pos,
            });
        }
    }
    let tracks = grouped
        .into_iter()
        .map(|(id, samples)| Track::new(id, samples, None).expect("samples grouped in increasing time"))
        .collect();
    (tracks, diag)
}

pub fn distance_covered(track: &Track) -> f64 {
    track.samples.windows(2).map(|w| w[0].pos.distance(&w[1].pos)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeedSample {
    pub timestamp_s: f64,
    /// `None` when no other sample falls inside the window.
    pub speed_mps: Option<f64>,
}

/// Windowed speed: for each sample, path length between the earliest and
/// latest samples within `±window_s/2` divided by their time difference.
/// Near the ends the window is one-sided.
pub fn speed_series(track: &Track, window_s: f64) -> Result<Vec<SpeedSample>, AnalyticsError> {
    if !(window_s > 0.0) {
        return Err(AnalyticsError::NonPositive {
            name: "speed window",
            value: window_s,
        });
    }
    let s = &track.samples;
    if s.len() < 2 {
        return Err(AnalyticsError::TooFewSamples(track.track_id));
    }
    let mut cumulative = Vec::with_capacity(s.len());
    let mut acc = 0.0;
    cumulative.push(0.0);
    for w in s.windows(2) {
        acc += w[0].pos.distance(&w[1].pos);
        cumulative.push(acc);
    }
    let half = window_s / 2.0;
    let out = (0..s.len())
        .map(|i| {
            let t = s[i].timestamp_s;
            let lo = s.partition_point(|x| x.timestamp_s < t - half - TIME_EPS);
            let hi = s.partition_point(|x| x.timestamp_s <= t + half + TIME_EPS) - 1;
            let speed_mps = (hi > lo).then(|| (cumulative[hi] - cumulative[lo]) / (s[hi].timestamp_s - s[lo].timestamp_s));
            SpeedSample { timestamp_s: t, speed_mps }
        })
        .collect();
    Ok(out)
}

// ---------------------------------------------------------------------------
// Heatmaps

/// Occupancy counts over the field rectangle. Cell `(ix, iy)` covers
/// `[ix·c, (ix+1)·c) × [iy·c, (iy+1)·c)` and is stored at `iy * nx + ix`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapGrid {
    pub nx: usize,
    pub ny: usize,
    pub cell_size_m: f64,
    pub normalized: bool,
    pub counts: Vec<f64>,
    pub in_field: u64,
    /// Samples outside the field, counted in the nearest border cell.
    pub clamped: u64,
}

impl HeatmapGrid {
    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }

    pub fn get(&self, ix: usize, iy: usize) -> f64 {
        self.counts[iy * self.nx + ix]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct GridLayout {
    nx: usize,
    ny: usize,
    cell: f64,
    length: f64,
    width: f64,
}

impl GridLayout {
    fn new(field: &FieldTemplate, cell: f64) -> Result<Self, AnalyticsError> {
        if !(cell > 0.0 && cell.is_finite()) {
            return Err(AnalyticsError::NonPositive {
                name: "heatmap cell size",
                value: cell,
            });
        }
        Ok(Self {
            nx: ((field.length_m() / cell).ceil() as usize).max(1),
            ny: ((field.width_m() / cell).ceil() as usize).max(1),
            cell,
            length: field.length_m(),
            width: field.width_m(),
        })
    }

    /// Cell index plus whether the point had to be clamped.
    fn bin(&self, p: &WorldPoint) -> (usize, bool) {
        let outside = !(0.0..=self.length).contains(&p.x) || !(0.0..=self.width).contains(&p.y);
        let ix = ((p.x / self.cell).floor().max(0.0) as usize).min(self.nx - 1);
        let iy = ((p.y / self.cell).floor().max(0.0) as usize).min(self.ny - 1);
        (iy * self.nx + ix, outside)
    }
}

pub fn heatmap(tracks: &[Track], field: &FieldTemplate, cell_size_m: f64, normalized: bool) -> Result<HeatmapGrid, AnalyticsError> {
    let layout = GridLayout::new(field, cell_size_m)?;
    let mut counts = vec![0u64; layout.nx * layout.ny];
    let (mut in_field, mut clamped) = (0u64, 0u64);
    for s in tracks.iter().flat_map(|t| t.samples.iter()) {
        let (i, outside) = layout.bin(&s.pos);
        counts[i] += 1;
        if outside {
            clamped += 1;
        } else {
            in_field += 1;
        }
    }
    let total = (in_field + clamped) as f64;
    let counts = counts
        .into_iter()
        .map(|c| if normalized && total > 0.0 { c as f64 / total } else { c as f64 })
        .collect();
    Ok(HeatmapGrid {
        nx: layout.nx,
        ny: layout.ny,
        cell_size_m,
        normalized,
        counts,
        in_field,
        clamped,
    })
}

// ---------------------------------------------------------------------------
// Per-player and per-team statistics

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackStats {
    pub track_id: u64,
    pub team: Option<u8>,
    pub samples: usize,
    pub duration_s: f64,
    pub distance_m: f64,
    /// Distance over duration; 0 for single-sample tracks.
    pub mean_speed_mps: f64,
    pub max_speed_mps: Option<f64>,
}

pub fn track_stats(track: &Track, speed_window_s: f64) -> Result<TrackStats, AnalyticsError> {
    let distance_m = distance_covered(track);
    let duration_s = track.duration_s();
    let max_speed_mps = if track.samples.len() >= 2 {
        speed_series(track, speed_window_s)?
            .iter()
            .filter_map(|s| s.speed_mps)
            .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))))
    } else {
        None
    };
    Ok(TrackStats {
        track_id: track.track_id,
        team: track.team,
        samples: track.samples.len(),
        duration_s,
        distance_m,
        mean_speed_mps: if duration_s > 0.0 { distance_m / duration_s } else { 0.0 },
        max_speed_mps,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeamSummary {
    pub team: u8,
    pub players: usize,
    pub total_distance_m: f64,
    /// Mean over players of their mean speeds; 0 with no players.
    pub mean_speed_mps: f64,
    pub heatmap: HeatmapGrid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeamSummaries {
    pub teams: [TeamSummary; 2],
    pub unlabeled_tracks: Vec<u64>,
}

/// Team label of a track: its own label, else the assignment's.
pub fn track_team(track: &Track, assignment: Option<&TeamAssignment>) -> Option<u8> {
    track
        .team
        .or_else(|| assignment.and_then(|a| a.labels.get(&track.track_id).copied()))
}

pub fn team_summary(
    tracks: &[Track],
    assignment: Option<&TeamAssignment>,
    field: &FieldTemplate,
    cell_size_m: f64,
    speed_window_s: f64,
) -> Result<TeamSummaries, AnalyticsError> {
    let mut members: [Vec<Track>; 2] = [Vec::new(), Vec::new()];
    let mut unlabeled = Vec::new();
    for t in tracks {
        match track_team(t, assignment) {
            Some(team @ (0 | 1)) => members[team as usize].push(t.clone()),
            _ => unlabeled.push(t.track_id),
        }
    }
    let mut summaries = Vec::with_capacity(2);
    for (team, ts) in members.iter().enumerate() {
        let stats = ts
            .iter()
            .map(|t| track_stats(t, speed_window_s))
            .collect::<Result<Vec<_>, _>>()?;
        summaries.push(TeamSummary {
            team: team as u8,
            players: ts.len(),
            total_distance_m: stats.iter().map(|s| s.distance_m).sum(),
            mean_speed_mps: if stats.is_empty() {
                0.0
            } else {
                stats.iter().map(|s| s.mean_speed_mps).sum::<f64>() / stats.len() as f64
            },
            heatmap: heatmap(ts, field, cell_size_m, false)?,
        });
    }
    Ok(TeamSummaries {
        teams: summaries.try_into().expect("two teams"),
        unlabeled_tracks: unlabeled,
    })
}

// ---------------------------------------------------------------------------
// Track file: CSV with header
// frame_idx,track_id,timestamp_s,x_m,y_m,team
// `team` is empty for unlabeled tracks.

#[derive(Debug, Serialize, Deserialize)]
struct TrackRow {
    frame_idx: u64,
    track_id: u64,
    timestamp_s: f64,
    x_m: f64,
    y_m: f64,
    team: Option<u8>,
}

pub fn write_tracks<W: Write>(out: W, tracks: &[Track]) -> Result<(), AnalyticsError> {
    let mut w = csv::Writer::from_writer(out);
    for t in tracks {
        for s in &t.samples {
            w.serialize(TrackRow {
                frame_idx: s.frame_idx,
                track_id: t.track_id,
                timestamp_s: s.timestamp_s,
                x_m: s.pos.x,
                y_m: s.pos.y,
                team: t.team,
            })
            .map_err(|e| AnalyticsError::Record { line: 0, message: e.to_string() })?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a track file; rows of one track may be interleaved with others but
/// must be in increasing time.
pub fn read_tracks<R: Read>(input: R) -> Result<Vec<Track>, AnalyticsError> {
    let mut r = csv::Reader::from_reader(input);
    let mut grouped: BTreeMap<u64, (Vec<TrackSample>, Option<u8>)> = BTreeMap::new();
    for (i, row) in r.deserialize::<TrackRow>().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| AnalyticsError::Record { line, message: e.to_string() })?;
        if ![row.timestamp_s, row.x_m, row.y_m].iter().all(|v| v.is_finite()) {
            return Err(AnalyticsError::Record { line, message: "non-finite value".into() });
        }
        let entry = grouped.entry(row.track_id).or_insert((Vec::new(), row.team));
        if entry.1 != row.team {
            return Err(AnalyticsError::Record {
                line,
                message: format!("track {} changes team label", row.track_id),
            });
        }
        entry.0.push(TrackSample {
            frame_idx: row.frame_idx,
            timestamp_s: row.timestamp_s,
            pos: WorldPoint::new(row.x_m, row.y_m),
        });
    }
    grouped
        .into_iter()
        .map(|(id, (samples, team))| Track::new(id, samples, team))
        .collect()
}
