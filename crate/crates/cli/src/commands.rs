use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use pitchmap::analytics::{
    build_tracks, heatmap, team_summary, track_stats, BuildDiagnostics, HeatmapGrid, Track, TrackStats,
};
use pitchmap::detection_metrics::{aggregate, align_frames, match_detections, Averaging, DetectionCounts, FrameBoxes};
use pitchmap::homography::{calibrate_sequence, write_calibrations, CalibrationStatus, DltOptions, FallbackPolicy, FrameCalibration};
use pitchmap::ingest::{flip_annotations, write_frames, BBox, FrameRecord, KeypointObservation, SwapMap};
use pitchmap::keypoint_metrics::{build_batch, keypoint_report};
use pitchmap::render::{frame_file_name, render_frame, render_heatmap, RenderStyle};
use pitchmap::teams::{assign_sequence, ClusterOptions, SequenceTeamOptions, TeamError};
use pitchmap::{FieldTemplate, NormPoint, PixelPoint, WorldPoint};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::files::{self, TeamsFile};
use crate::{
    AnalysisFlags, AnalyzeArgs, AugmentArgs, AveragingArg, CalibrateArgs, CalibrationFlags, CliError, EvalDetectionsArgs,
    EvalKeypointsArgs, Outcome, PipelineArgs, ProjectArgs, ProjectionFlags, RenderArgs, TeamFlags, TeamsArgs,
};

/// Decimal places kept by `augment` for normalized and pixel coordinates.
pub const NORM_DECIMALS: i32 = 9;
pub const PIXEL_DECIMALS: i32 = 6;

fn outcome(human: String, json: serde_json::Value) -> Outcome {
    Outcome {
        human,
        json,
        warnings: Vec::new(),
    }
}

// ---------------------------------------------------------------------------
// calibrate

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationSummary {
    pub frames: usize,
    pub fit: usize,
    pub reused: usize,
    pub gap: usize,
    pub mean_reprojection_error_m: Option<f64>,
}

impl CalibrationSummary {
    pub fn of(calibs: &[FrameCalibration]) -> Self {
        let count = |s| calibs.iter().filter(|c| c.status == s).count();
        let errors: Vec<f64> = calibs.iter().filter_map(|c| c.reprojection_error_m).collect();
        Self {
            frames: calibs.len(),
            fit: count(CalibrationStatus::Fit),
            reused: count(CalibrationStatus::Reused),
            gap: count(CalibrationStatus::Gap),
            mean_reprojection_error_m: (!errors.is_empty()).then(|| errors.iter().sum::<f64>() / errors.len() as f64),
        }
    }

    fn table(&self) -> String {
        let mut s = format!(
            "frames  {}\nfit     {}\nreused  {}\ngap     {}\n",
            self.frames, self.fit, self.reused, self.gap
        );
        if let Some(e) = self.mean_reprojection_error_m {
            writeln!(s, "mean reprojection error  {e:.6} m").unwrap();
        }
        s
    }
}

fn policy(flags: &CalibrationFlags) -> FallbackPolicy {
    FallbackPolicy {
        max_reuse_gap: flags.max_reuse_gap,
        dlt: DltOptions {
            normalize: !flags.no_normalize,
        },
    }
}

/// Calibrates and writes the homography file; fails when no frame ends up
/// with a homography.
fn calibrate_to(
    frames: &[FrameRecord],
    field: &FieldTemplate,
    flags: &CalibrationFlags,
    out: &Path,
) -> Result<(Vec<FrameCalibration>, CalibrationSummary), CliError> {
    let calibs = calibrate_sequence(frames, field, &policy(flags));
    files::write_output(out, |w| write_calibrations(w, &calibs))?;
    let summary = CalibrationSummary::of(&calibs);
    if summary.fit == 0 {
        let why = calibs
            .iter()
            .find_map(|c| c.diagnostic.as_deref())
            .unwrap_or("no frames in input");
        return Err(CliError::Numerical(format!("no frame could be calibrated ({why})")));
    }
    Ok((calibs, summary))
}

pub fn calibrate(a: &CalibrateArgs, field: &FieldTemplate) -> Result<Outcome, CliError> {
    let frames = files::read_frames(&a.frames)?;
    let (_, summary) = calibrate_to(&frames, field, &a.calibration, &a.out)?;
    Ok(outcome(summary.table(), json!(summary)))
}

// ---------------------------------------------------------------------------
// project

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProjectSummary {
    pub tracks: usize,
    pub samples: usize,
    pub uncalibrated_frames: usize,
    pub dropped_detections: usize,
}

fn project_tracks(
    frames: &[FrameRecord],
    calibs: &[FrameCalibration],
    flags: &ProjectionFlags,
    labels: Option<&BTreeMap<u64, u8>>,
) -> (Vec<Track>, BuildDiagnostics) {
    let (mut tracks, diag) = build_tracks(frames, calibs, flags.anchor.into());
    if let Some(n) = flags.smooth {
        tracks = tracks.iter().map(|t| t.smoothed(n as usize)).collect();
    }
    if let Some(labels) = labels {
        files::label_tracks(&mut tracks, labels);
    }
    (tracks, diag)
}

fn project_summary(tracks: &[Track], diag: &BuildDiagnostics) -> ProjectSummary {
    ProjectSummary {
        tracks: tracks.len(),
        samples: tracks.iter().map(|t| t.samples().len()).sum(),
        uncalibrated_frames: diag.uncalibrated_frames.len(),
        dropped_detections: diag.dropped.len(),
    }
}

fn drop_warnings(diag: &BuildDiagnostics) -> Vec<String> {
    diag.dropped
        .iter()
        .map(|(f, t, why)| format!("frame {f}, track {t}: detection dropped: {why}"))
        .collect()
}

pub fn project(a: &ProjectArgs) -> Result<Outcome, CliError> {
    let frames = files::read_frames(&a.frames)?;
    let calibs = files::read_homographies(&a.homographies)?;
    let labels = a.teams.as_deref().map(files::read_teams).transpose()?.map(|t| t.labels());
    let (tracks, diag) = project_tracks(&frames, &calibs, &a.projection, labels.as_ref());
    files::write_track_file(&a.out, &tracks)?;
    let s = project_summary(&tracks, &diag);
    let human = format!(
        "tracks   {}\nsamples  {}\nuncalibrated frames  {}\ndropped detections   {}\n",
        s.tracks, s.samples, s.uncalibrated_frames, s.dropped_detections
    );
    let mut out = outcome(human, json!(s));
    out.warnings = drop_warnings(&diag);
    Ok(out)
}

// ---------------------------------------------------------------------------
// eval-detections

fn frame_boxes(frames: Vec<FrameRecord>) -> Vec<FrameBoxes> {
    frames
        .into_iter()
        .map(|f| FrameBoxes {
            frame_idx: f.frame_idx,
            boxes: f.detections.iter().map(|d| d.bbox).collect(),
        })
        .collect()
}

pub fn eval_detections(a: &EvalDetectionsArgs) -> Result<Outcome, CliError> {
    let thr = a.iou_threshold;
    if !(thr > 0.0 && thr <= 1.0) {
        return Err(CliError::Usage(format!("--iou-threshold must lie in (0, 1], got {thr}")));
    }
    let preds = frame_boxes(files::read_frames(&a.pred)?);
    let truths = frame_boxes(files::read_frames(&a.truth)?);
    let pairs = align_frames(&preds, &truths)?;
    let counts: Vec<DetectionCounts> = pairs
        .par_iter()
        .map(|(p, t)| DetectionCounts::from_match(&match_detections(&p.boxes, &t.boxes, thr)))
        .collect();
    let (averaging, name) = match a.averaging {
        AveragingArg::Micro => (Averaging::Micro, "micro"),
        AveragingArg::Macro => (Averaging::Macro, "macro"),
    };
    let r = aggregate(&counts, averaging);
    let human = format!(
        "frames     {}\nIoU >=     {thr} ({name})\nMean IoU   {:.4}\nRecall     {:.4}\nPrecision  {:.4}\nF1         {:.4}\nTP/FP/FN   {}/{}/{}\n",
        counts.len(),
        r.mean_iou,
        r.recall,
        r.precision,
        r.f1,
        r.tp,
        r.fp,
        r.fn_
    );
    let mut j = json!(r);
    j["frames"] = json!(counts.len());
    j["iou_threshold"] = json!(thr);
    j["averaging"] = json!(name);
    Ok(outcome(human, j))
}

// ---------------------------------------------------------------------------
// eval-keypoints

pub fn eval_keypoints(a: &EvalKeypointsArgs) -> Result<Outcome, CliError> {
    let truth = files::read_frames(&a.truth)?;
    let preds = files::read_predictions(&a.pred)?;
    let batch = build_batch(&truth, &preds)?;
    let first = truth.first().ok_or_else(|| CliError::Data(format!("{}: no frames", a.truth.display())))?;
    let w = a.width.unwrap_or(first.image_w);
    let h = a.height.unwrap_or(first.image_h);
    if w == 0 || h == 0 {
        return Err(CliError::Usage("image dimensions must be positive".into()));
    }
    let r = keypoint_report(&batch, w as f64, h as f64)?;
    let human = format!(
        "frames       {} ({} without visible keypoints)\naccuracy     {:.4}\nMAE          {:.4}\nMAE (px)     {:.4} at {w}x{h}\n",
        r.frames, r.skipped_frames, r.accuracy, r.mae_norm, r.mae_pixels
    );
    let mut j = json!(r);
    j["image_w"] = json!(w);
    j["image_h"] = json!(h);
    Ok(outcome(human, j))
}

// ---------------------------------------------------------------------------
// teams

fn team_options(flags: &TeamFlags) -> SequenceTeamOptions {
    SequenceTeamOptions {
        cluster: ClusterOptions {
            seed: flags.seed,
            ..ClusterOptions::default()
        },
        reestimate_every: flags.reestimate_every.map(|n| n as usize),
    }
}

fn teams_table(t: &TeamsFile) -> String {
    let mut s = format!("fitted on frame {}\n", t.init_frame);
    for k in 0..2u8 {
        let c = t.centroids[k as usize];
        let n = t.tracks.iter().filter(|x| x.team == k).count();
        writeln!(s, "team {k}: {n} tracks, color ({:.1}, {:.1}, {:.1})", c[0], c[1], c[2]).unwrap();
    }
    s
}

pub fn teams(a: &TeamsArgs) -> Result<Outcome, CliError> {
    let frames = files::read_frames(&a.frames)?;
    let s = assign_sequence(&frames, &team_options(&a.teams))?;
    let file = TeamsFile::from(&s);
    files::write_json(&a.out, &file)?;
    Ok(outcome(teams_table(&file), json!(file)))
}

// ---------------------------------------------------------------------------
// analyze

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TeamStats {
    pub team: u8,
    pub players: usize,
    pub total_distance_m: f64,
    pub mean_speed_mps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatsReport {
    pub speed_window_s: f64,
    pub cell_size_m: f64,
    pub players: Vec<TrackStats>,
    pub teams: Vec<TeamStats>,
    pub unlabeled_tracks: Vec<u64>,
}

fn check_flags(flags: &AnalysisFlags) -> Result<(), CliError> {
    if !(flags.cell_size > 0.0 && flags.cell_size.is_finite()) {
        return Err(CliError::Usage(format!("--cell-size must be positive, got {}", flags.cell_size)));
    }
    if !(flags.speed_window > 0.0 && flags.speed_window.is_finite()) {
        return Err(CliError::Usage(format!("--speed-window must be positive, got {}", flags.speed_window)));
    }
    Ok(())
}

fn stats_table(r: &StatsReport) -> String {
    let mut s = String::from("track  team  samples  duration_s  distance_m  mean_mps  max_mps\n");
    for p in &r.players {
        let team = p.team.map_or("-".to_string(), |t| t.to_string());
        let max = p.max_speed_mps.map_or("-".to_string(), |v| format!("{v:.3}"));
        writeln!(
            s,
            "{:>5}  {:>4}  {:>7}  {:>10.3}  {:>10.3}  {:>8.3}  {:>7}",
            p.track_id, team, p.samples, p.duration_s, p.distance_m, p.mean_speed_mps, max
        )
        .unwrap();
    }
    s.push_str("\nteam  players  distance_m  mean_mps\n");
    for t in &r.teams {
        writeln!(s, "{:>4}  {:>7}  {:>10.3}  {:>8.3}", t.team, t.players, t.total_distance_m, t.mean_speed_mps).unwrap();
    }
    if !r.unlabeled_tracks.is_empty() {
        writeln!(s, "\nunlabeled tracks: {}", r.unlabeled_tracks.len()).unwrap();
    }
    s
}

/// Writes stats.json, stats.txt and the heatmap grids into `dir`.
fn write_analysis(dir: &Path, tracks: &[Track], field: &FieldTemplate, flags: &AnalysisFlags) -> Result<StatsReport, CliError> {
    check_flags(flags)?;
    let players = tracks
        .par_iter()
        .map(|t| track_stats(t, flags.speed_window))
        .collect::<Result<Vec<_>, _>>()?;
    let summary = team_summary(tracks, None, field, flags.cell_size, flags.speed_window)?;
    let all = heatmap(tracks, field, flags.cell_size, false)?;
    let report = StatsReport {
        speed_window_s: flags.speed_window,
        cell_size_m: flags.cell_size,
        players,
        teams: summary
            .teams
            .iter()
            .map(|t| TeamStats {
                team: t.team,
                players: t.players,
                total_distance_m: t.total_distance_m,
                mean_speed_mps: t.mean_speed_mps,
            })
            .collect(),
        unlabeled_tracks: summary.unlabeled_tracks.clone(),
    };
    files::ensure_dir(dir)?;
    files::write_json(&dir.join("stats.json"), &report)?;
    files::write_string(&dir.join("stats.txt"), &stats_table(&report))?;
    files::write_json(&dir.join("heatmap_all.json"), &all)?;
    for t in &summary.teams {
        files::write_json(&dir.join(format!("heatmap_team{}.json", t.team)), &t.heatmap)?;
    }
    Ok(report)
}

fn load_labeled_tracks(tracks: &Path, teams: Option<&Path>) -> Result<Vec<Track>, CliError> {
    let mut tracks = files::read_track_file(tracks)?;
    if let Some(p) = teams {
        files::label_tracks(&mut tracks, &files::read_teams(p)?.labels());
    }
    Ok(tracks)
}

pub fn analyze(a: &AnalyzeArgs, field: &FieldTemplate) -> Result<Outcome, CliError> {
    let tracks = load_labeled_tracks(&a.tracks, a.teams.as_deref())?;
    let report = write_analysis(&a.out_dir, &tracks, field, &a.analysis)?;
    Ok(outcome(stats_table(&report), json!(report)))
}

// ---------------------------------------------------------------------------
// render

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RenderSummary {
    pub frames: usize,
    pub heatmaps: Vec<String>,
}

/// Positions per frame, in track-id order within a frame.
pub fn positions_by_frame(tracks: &[Track]) -> BTreeMap<u64, Vec<(WorldPoint, Option<u8>)>> {
    let mut frames: BTreeMap<u64, Vec<(WorldPoint, Option<u8>)>> = BTreeMap::new();
    for t in tracks {
        for s in t.samples() {
            frames.entry(s.frame_idx).or_default().push((s.pos, t.team));
        }
    }
    frames
}

fn write_renders(
    dir: &Path,
    tracks: &[Track],
    field: &FieldTemplate,
    cell_size: f64,
    with_frames: bool,
) -> Result<RenderSummary, CliError> {
    if !(cell_size > 0.0 && cell_size.is_finite()) {
        return Err(CliError::Usage(format!("--cell-size must be positive, got {cell_size}")));
    }
    let style = RenderStyle::default();
    files::ensure_dir(dir)?;
    let mut frames = 0;
    if with_frames {
        let frame_dir = dir.join("frames");
        files::ensure_dir(&frame_dir)?;
        let by_frame: Vec<_> = positions_by_frame(tracks).into_iter().collect();
        by_frame.par_iter().try_for_each(|(idx, positions)| {
            let doc = render_frame(field, positions, &style)?;
            files::write_string(&frame_dir.join(frame_file_name(*idx)), &doc)
        })?;
        frames = by_frame.len();
    }
    let mut heatmaps = Vec::new();
    let groups: [(&str, Option<u8>); 3] = [("all", None), ("team0", Some(0)), ("team1", Some(1))];
    for (name, team) in groups {
        let members: Vec<Track> = tracks
            .iter()
            .filter(|t| team.is_none() || t.team == team)
            .cloned()
            .collect();
        let grid: HeatmapGrid = heatmap(&members, field, cell_size, false)?;
        let file = format!("heatmap_{name}.svg");
        files::write_string(&dir.join(&file), &render_heatmap(field, &grid, &style)?)?;
        heatmaps.push(file);
    }
    Ok(RenderSummary { frames, heatmaps })
}

pub fn render(a: &RenderArgs, field: &FieldTemplate) -> Result<Outcome, CliError> {
    let tracks = load_labeled_tracks(&a.tracks, a.teams.as_deref())?;
    let s = write_renders(&a.out_dir, &tracks, field, a.cell_size, true)?;
    let human = format!("frame renders  {}\nheatmaps       {}\n", s.frames, s.heatmaps.join(", "));
    Ok(outcome(human, json!(s)))
}

// ---------------------------------------------------------------------------
// augment

fn round_to(v: f64, decimals: i32) -> f64 {
    let scale = 10f64.powi(decimals);
    (v * scale).round() / scale
}

/// Rounds coordinates to the fixed precision used by the augment output, so
/// flipping an augmented file twice reproduces it exactly.
pub fn quantize(record: &FrameRecord) -> FrameRecord {
    let px = |v: f64| round_to(v, PIXEL_DECIMALS);
    let mut out = record.clone();
    for d in &mut out.detections {
        let [x1, y1, x2, y2] = d.bbox.as_array();
        if let Ok(b) = BBox::new(px(x1), px(y1), px(x2), px(y2)) {
            d.bbox = b;
        }
        if let Some(m) = &mut d.mask {
            for v in &mut m.vertices {
                *v = PixelPoint::new(px(v.x), px(v.y));
            }
        }
    }
    for k in &mut out.keypoints {
        if k.visible {
            *k = KeypointObservation {
                pos: NormPoint::new(round_to(k.pos.x, NORM_DECIMALS), round_to(k.pos.y, NORM_DECIMALS)),
                ..*k
            };
        }
    }
    out
}

pub fn augment(a: &AugmentArgs) -> Result<Outcome, CliError> {
    let swap = match &a.swap_map {
        Some(text) => SwapMap::parse(text)?,
        None => SwapMap::canonical(),
    };
    let frames = files::read_frames(&a.input)?;
    let flipped: Vec<FrameRecord> = frames.par_iter().map(|f| quantize(&flip_annotations(f, &swap))).collect();
    files::write_output(&a.out, |w| write_frames(w, &flipped))?;
    Ok(outcome(format!("flipped {} frames\n", flipped.len()), json!({ "frames": flipped.len() })))
}

// ---------------------------------------------------------------------------
// pipeline

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineSummary {
    pub calibration: CalibrationSummary,
    pub projection: ProjectSummary,
    /// Track counts per team, absent when teams could not be assigned.
    pub teams: Option<[usize; 2]>,
    pub renders: RenderSummary,
}

pub fn pipeline(a: &PipelineArgs, field: &FieldTemplate) -> Result<Outcome, CliError> {
    let dir = &a.out_dir;
    files::ensure_dir(dir)?;
    let mut warnings = Vec::new();

    let frames = files::read_frames(&a.frames).map_err(|e| e.in_stage("ingest"))?;
    let (calibs, calibration) =
        calibrate_to(&frames, field, &a.calibration, &dir.join("homographies.jsonl")).map_err(|e| e.in_stage("calibrate"))?;

    let (mut tracks, diag) = project_tracks(&frames, &calibs, &a.projection, None);
    warnings.extend(drop_warnings(&diag));
    let projection = project_summary(&tracks, &diag);

    let teams = match assign_sequence(&frames, &team_options(&a.teams)) {
        Ok(s) => {
            let file = TeamsFile::from(&s);
            files::write_json(&dir.join("teams.json"), &file).map_err(|e| e.in_stage("teams"))?;
            files::label_tracks(&mut tracks, &file.labels());
            let n0 = file.tracks.iter().filter(|t| t.team == 0).count();
            Some([n0, file.tracks.len() - n0])
        }
        Err(e @ (TeamError::NoColors | TeamError::InsufficientData(_) | TeamError::Degenerate { .. })) => {
            warnings.push(format!("teams not assigned: {e}"));
            None
        }
        Err(e) => return Err(CliError::from(e).in_stage("teams")),
    };
    files::write_track_file(&dir.join("tracks.csv"), &tracks).map_err(|e| e.in_stage("project"))?;

    write_analysis(dir, &tracks, field, &a.analysis).map_err(|e| e.in_stage("analyze"))?;
    let renders = write_renders(dir, &tracks, field, a.analysis.cell_size, !a.no_frames).map_err(|e| e.in_stage("render"))?;

    let summary = PipelineSummary {
        calibration,
        projection,
        teams,
        renders,
    };
    let mut human = summary.calibration.table();
    writeln!(human, "tracks   {}\nsamples  {}", summary.projection.tracks, summary.projection.samples).unwrap();
    match summary.teams {
        Some([a, b]) => writeln!(human, "teams    {a} / {b}").unwrap(),
        None => human.push_str("teams    unassigned\n"),
    }
    writeln!(human, "renders  {} frames\noutput   {}", summary.renders.frames, dir.display()).unwrap();
    Ok(Outcome {
        human,
        json: json!(summary),
        warnings,
    })
}
