mod common;

use std::path::{Path, PathBuf};
use std::process::Command;

use common::{match_fixture, write_frames_file};
use pitchmap::ingest::{parse_frames_str, BBox, Detection, FrameRecord, KeypointObservation};
use pitchmap::KeypointId;
use serde_json::Value;

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

fn pitchmap(args: &[&str]) -> Run {
    let out = Command::new(env!("CARGO_BIN_EXE_pitchmap"))
        .args(args)
        .env_remove(pitchmap_cli::FIELD_CONFIG_ENV)
        .output()
        .unwrap();
    Run {
        code: out.status.code().unwrap(),
        stdout: String::from_utf8(out.stdout).unwrap(),
        stderr: String::from_utf8(out.stderr).unwrap(),
    }
}

fn json_of(r: &Run) -> Value {
    assert_eq!(r.code, 0, "stderr: {}", r.stderr);
    serde_json::from_str(&r.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn fixture_file(dir: &Path, name: &str, frames: &[FrameRecord]) -> PathBuf {
    let path = dir.join(name);
    write_frames_file(&path, frames);
    path
}

fn boxes_frame(idx: u64, boxes: &[[f64; 4]]) -> FrameRecord {
    FrameRecord {
        frame_idx: idx,
        timestamp_s: idx as f64 * 0.04,
        image_w: 710,
        image_h: 400,
        detections: boxes
            .iter()
            .enumerate()
            .map(|(i, b)| Detection {
                track_id: i as u64,
                bbox: BBox::new(b[0], b[1], b[2], b[3]).unwrap(),
                mask: None,
                patch: None,
                mean_color: None,
            })
            .collect(),
        keypoints: vec![],
    }
}

#[test]
fn calibrate_fits_every_exact_frame() {
    let dir = tempfile::tempdir().unwrap();
    let fx = match_fixture(10, false);
    let frames = fixture_file(dir.path(), "frames.jsonl", &fx.frames);
    let out = dir.path().join("h.jsonl");
    let j = json_of(&pitchmap(&["--json", "calibrate", "--frames", p(&frames), "--out", p(&out)]));
    assert_eq!(j["fit"], 10);
    assert_eq!(j["gap"], 0);
    assert!(j["mean_reprojection_error_m"].as_f64().unwrap() < 1e-6);
    let calibs = pitchmap::homography::read_calibrations(std::fs::read(&out).unwrap().as_slice()).unwrap();
    assert_eq!(calibs.len(), 10);
}

#[test]
fn calibrate_reuses_then_gaps() {
    let dir = tempfile::tempdir().unwrap();
    let mut frames = match_fixture(8, false).frames;
    for f in &mut frames[2..7] {
        f.keypoints.truncate(2);
    }
    let path = fixture_file(dir.path(), "frames.jsonl", &frames);
    let out = dir.path().join("h.jsonl");
    let r = pitchmap(&["--json", "calibrate", "--frames", p(&path), "--out", p(&out), "--max-reuse-gap", "2"]);
    let j = json_of(&r);
    assert_eq!((j["fit"].as_u64(), j["reused"].as_u64(), j["gap"].as_u64()), (Some(3), Some(2), Some(3)));
    let text = std::fs::read_to_string(&out).unwrap();
    let statuses: Vec<String> = text
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap()["status"].as_str().unwrap().to_string())
        .collect();
    assert_eq!(statuses, ["fit", "fit", "reused", "reused", "gap", "gap", "gap", "fit"]);
}

#[test]
fn missing_input_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let r = pitchmap(&["calibrate", "--frames", "/nonexistent/frames.jsonl", "--out", p(&dir.path().join("h"))]);
    assert_eq!(r.code, 1);
    assert!(r.stderr.contains("cannot open"));
}

#[test]
fn no_calibratable_frame_is_a_numerical_failure() {
    let dir = tempfile::tempdir().unwrap();
    let frames = fixture_file(dir.path(), "frames.jsonl", &[boxes_frame(0, &[[0.0, 0.0, 5.0, 5.0]])]);
    let r = pitchmap(&["calibrate", "--frames", p(&frames), "--out", p(&dir.path().join("h.jsonl"))]);
    assert_eq!(r.code, 3, "{}", r.stderr);
}

#[test]
fn bad_arguments_exit_with_usage_code() {
    assert_eq!(pitchmap(&["calibrate", "--frobnicate"]).code, 1);
    assert_eq!(pitchmap(&[]).code, 1);
    assert_eq!(pitchmap(&["--help"]).code, 0);
    assert_eq!(pitchmap(&["--workers", "0", "teams", "--frames", "x", "--out", "y"]).code, 1);
}

#[test]
fn malformed_frames_are_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.jsonl");
    std::fs::write(&path, "{\"frame_idx\":0}\n").unwrap();
    let r = pitchmap(&["calibrate", "--frames", p(&path), "--out", p(&dir.path().join("h"))]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("line 1"), "{}", r.stderr);
}

#[test]
fn field_config_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("field.toml");
    std::fs::write(&bad, "length_m = 30.0\nwidth_m = 20.0\n").unwrap();
    let frames = fixture_file(dir.path(), "frames.jsonl", &match_fixture(2, false).frames);
    let out = Command::new(env!("CARGO_BIN_EXE_pitchmap"))
        .args(["calibrate", "--frames", p(&frames), "--out", p(&dir.path().join("h"))])
        .env(pitchmap_cli::FIELD_CONFIG_ENV, &bad)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));

    let shipped = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../config/field_default.toml");
    let r = pitchmap(&["--field-config", p(&shipped), "calibrate", "--frames", p(&frames), "--out", p(&dir.path().join("h"))]);
    assert_eq!(r.code, 0, "{}", r.stderr);
}

#[test]
fn eval_detections_identity_and_counts() {
    let dir = tempfile::tempdir().unwrap();
    let truth = [boxes_frame(0, &[[0.0, 0.0, 10.0, 10.0], [20.0, 20.0, 30.0, 30.0]]), boxes_frame(1, &[[5.0, 5.0, 9.0, 9.0]])];
    let t = fixture_file(dir.path(), "truth.jsonl", &truth);
    let j = json_of(&pitchmap(&["--json", "eval-detections", "--pred", p(&t), "--truth", p(&t)]));
    for k in ["mean_iou", "recall", "precision", "f1"] {
        assert_eq!(j[k], 1.0, "{k}");
    }

    // frame 0: one exact hit, one miss, one false alarm; frame 1: one hit
    let preds = [
        boxes_frame(0, &[[0.0, 0.0, 10.0, 10.0], [50.0, 50.0, 60.0, 60.0]]),
        boxes_frame(1, &[[5.0, 5.0, 9.0, 9.0]]),
    ];
    let pr = fixture_file(dir.path(), "pred.jsonl", &preds);
    let j = json_of(&pitchmap(&["--json", "eval-detections", "--pred", p(&pr), "--truth", p(&t)]));
    assert_eq!((j["tp"].as_u64(), j["fp"].as_u64(), j["fn"].as_u64()), (Some(2), Some(1), Some(1)));
    assert_eq!(j["precision"].as_f64(), Some(2.0 / 3.0));
    assert_eq!(j["recall"].as_f64(), Some(2.0 / 3.0));
    assert!((j["f1"].as_f64().unwrap() - 2.0 / 3.0).abs() < 1e-15);

    let human = pitchmap(&["eval-detections", "--pred", p(&pr), "--truth", p(&t)]);
    assert!(human.stdout.contains("F1         0.6667"), "{}", human.stdout);
}

#[test]
fn eval_detections_misaligned_frames() {
    let dir = tempfile::tempdir().unwrap();
    let t = fixture_file(dir.path(), "truth.jsonl", &[boxes_frame(0, &[]), boxes_frame(1, &[])]);
    let pr = fixture_file(dir.path(), "pred.jsonl", &[boxes_frame(0, &[])]);
    assert_eq!(pitchmap(&["eval-detections", "--pred", p(&pr), "--truth", p(&t)]).code, 2);
    assert_eq!(pitchmap(&["eval-detections", "--pred", p(&t), "--truth", p(&t), "--iou-threshold", "0"]).code, 1);
}

fn keypoint_truth(idx: u64) -> FrameRecord {
    let mut f = boxes_frame(idx, &[]);
    f.keypoints = KeypointId::all()
        .map(|id| {
            if id.index() % 3 == 0 {
                KeypointObservation::hidden(id)
            } else {
                KeypointObservation::visible(id, 0.05 * id.index() as f64, 0.5)
            }
        })
        .collect();
    f
}

fn prediction_line(truth: &FrameRecord, offset: f64) -> String {
    let kps: Vec<Value> = truth
        .keypoints
        .iter()
        .map(|k| {
            if k.visible {
                serde_json::json!({"id": i64::from(k.id), "x": k.pos.x + offset, "y": k.pos.y + offset, "prob": 0.9})
            } else {
                serde_json::json!({"id": i64::from(k.id), "x": 0.0, "y": 0.0, "prob": 0.1})
            }
        })
        .collect();
    serde_json::json!({"frame_idx": truth.frame_idx, "keypoints": kps}).to_string()
}

#[test]
fn eval_keypoints_exact_and_offset() {
    let dir = tempfile::tempdir().unwrap();
    let truth: Vec<_> = (0..3).map(keypoint_truth).collect();
    let t = fixture_file(dir.path(), "truth.jsonl", &truth);
    let exact = dir.path().join("exact.jsonl");
    std::fs::write(&exact, truth.iter().map(|f| prediction_line(f, 0.0) + "\n").collect::<String>()).unwrap();
    let j = json_of(&pitchmap(&["--json", "eval-keypoints", "--pred", p(&exact), "--truth", p(&t)]));
    assert_eq!(j["mae_norm"], 0.0);
    assert_eq!(j["accuracy"], 1.0);

    let shifted = dir.path().join("shifted.jsonl");
    std::fs::write(&shifted, truth.iter().map(|f| prediction_line(f, 0.05) + "\n").collect::<String>()).unwrap();
    let j = json_of(&pitchmap(&["--json", "eval-keypoints", "--pred", p(&shifted), "--truth", p(&t)]));
    assert!((j["mae_norm"].as_f64().unwrap() - 0.10).abs() < 1e-12);
    assert!((j["mae_pixels"].as_f64().unwrap() - 0.10 * 555.0).abs() < 1e-9);

    let one = dir.path().join("one.jsonl");
    std::fs::write(&one, prediction_line(&truth[0], 0.0) + "\n").unwrap();
    assert_eq!(pitchmap(&["eval-keypoints", "--pred", p(&one), "--truth", p(&t)]).code, 2);
}

#[test]
fn teams_split_the_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let fx = match_fixture(5, true);
    let frames = fixture_file(dir.path(), "frames.jsonl", &fx.frames);
    let out = dir.path().join("teams.json");
    let j = json_of(&pitchmap(&["--json", "teams", "--frames", p(&frames), "--out", p(&out)]));
    for t in j["tracks"].as_array().unwrap() {
        let id = t["track_id"].as_u64().unwrap();
        assert_eq!(t["team"].as_u64().unwrap() as u8, fx.teams[&id], "track {id}");
    }
    let no_colors = fixture_file(dir.path(), "plain.jsonl", &match_fixture(2, false).frames);
    assert_eq!(pitchmap(&["teams", "--frames", p(&no_colors), "--out", p(&out)]).code, 2);
}

#[test]
fn stepwise_commands_chain() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let fx = match_fixture(6, true);
    let frames = fixture_file(d, "frames.jsonl", &fx.frames);
    let (h, teams, tracks) = (d.join("h.jsonl"), d.join("teams.json"), d.join("tracks.csv"));
    assert_eq!(pitchmap(&["calibrate", "--frames", p(&frames), "--out", p(&h)]).code, 0);
    assert_eq!(pitchmap(&["teams", "--frames", p(&frames), "--out", p(&teams)]).code, 0);
    let j = json_of(&pitchmap(&[
        "--json", "project", "--frames", p(&frames), "--homographies", p(&h), "--teams", p(&teams), "--out", p(&tracks),
    ]));
    assert_eq!(j["samples"], 6 * 22);
    let j = json_of(&pitchmap(&["--json", "analyze", "--tracks", p(&tracks), "--out-dir", p(&d.join("stats"))]));
    assert_eq!(j["players"].as_array().unwrap().len(), 22);
    assert_eq!(j["teams"][0]["players"], 11);
    let j = json_of(&pitchmap(&["--json", "render", "--tracks", p(&tracks), "--out-dir", p(&d.join("svg"))]));
    assert_eq!(j["frames"], 6);
    assert!(d.join("svg/frames/frame_000005.svg").exists());
    assert!(d.join("svg/heatmap_team1.svg").exists());
}

#[test]
fn pipeline_without_colors_warns_and_completes() {
    let dir = tempfile::tempdir().unwrap();
    let frames = fixture_file(dir.path(), "frames.jsonl", &match_fixture(4, false).frames);
    let out = dir.path().join("out");
    let r = pitchmap(&["pipeline", "--frames", p(&frames), "--out-dir", p(&out)]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert!(r.stderr.contains("warning: teams not assigned"), "{}", r.stderr);
    assert!(!out.join("teams.json").exists());
    for f in ["homographies.jsonl", "tracks.csv", "stats.json", "stats.txt", "heatmap_all.svg", "frames/frame_000003.svg"] {
        assert!(out.join(f).exists(), "{f}");
    }
}

#[test]
fn pipeline_conserves_detections_over_calibrated_frames() {
    let dir = tempfile::tempdir().unwrap();
    let mut frames = match_fixture(10, true).frames;
    for f in &mut frames[3..6] {
        f.keypoints.clear();
    }
    let path = fixture_file(dir.path(), "frames.jsonl", &frames);
    let out = dir.path().join("out");
    let j = json_of(&pitchmap(&["--json", "pipeline", "--frames", p(&path), "--out-dir", p(&out), "--max-reuse-gap", "1"]));
    // frame 3 reuses frame 2, frames 4 and 5 have no homography
    assert_eq!(j["calibration"]["gap"], 2);
    assert_eq!(j["projection"]["samples"], 8 * 22);
    let csv = std::fs::read_to_string(out.join("tracks.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 8 * 22);
}

#[test]
fn pipeline_stage_failure_names_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    let frames = fixture_file(dir.path(), "frames.jsonl", &[boxes_frame(0, &[[0.0, 0.0, 5.0, 5.0]])]);
    let out = dir.path().join("out");
    let r = pitchmap(&["pipeline", "--frames", p(&frames), "--out-dir", p(&out)]);
    assert_eq!(r.code, 3);
    assert!(r.stderr.contains("stage calibrate"), "{}", r.stderr);
    assert!(out.join("homographies.jsonl").exists());
}

#[test]
fn worker_count_does_not_change_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let frames = fixture_file(dir.path(), "frames.jsonl", &match_fixture(12, true).frames);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(pitchmap(&["--workers", "1", "pipeline", "--frames", p(&frames), "--out-dir", p(&a)]).code, 0);
    assert_eq!(pitchmap(&["--workers", "4", "pipeline", "--frames", p(&frames), "--out-dir", p(&b)]).code, 0);
    for f in ["homographies.jsonl", "tracks.csv", "teams.json", "stats.json", "heatmap_all.json", "frames/frame_000007.svg"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn augment_flips_and_keeps_sentinels() {
    let dir = tempfile::tempdir().unwrap();
    let mut frame = boxes_frame(0, &[[10.0, 20.0, 30.0, 60.0]]);
    frame.keypoints = vec![
        KeypointObservation::visible(KeypointId::new(0).unwrap(), 0.25, 0.5),
        KeypointObservation::hidden(KeypointId::new(6).unwrap()),
    ];
    let input = fixture_file(dir.path(), "in.jsonl", &[frame]);
    let out = dir.path().join("out.jsonl");
    assert_eq!(pitchmap(&["augment", "--input", p(&input), "--out", p(&out)]).code, 0);
    let flipped = parse_frames_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(flipped.len(), 1);
    assert_eq!(i64::from(flipped[0].keypoints[0].id), 9);
    assert_eq!(flipped[0].keypoints[0].pos.x, 0.75);
    assert!(!flipped[0].keypoints[1].visible);
    assert_eq!(flipped[0].keypoints[1].pos, pitchmap::NormPoint::SENTINEL);
    assert_eq!(flipped[0].detections[0].bbox.as_array(), [680.0, 20.0, 700.0, 60.0]);

    let r = pitchmap(&["augment", "--input", p(&input), "--out", p(&out), "--swap-map", "0:9,0:10"]);
    assert_eq!(r.code, 1);
}
