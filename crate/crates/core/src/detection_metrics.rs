//! Box-level detection evaluation: IoU, greedy matching and
//! precision/recall/F1 summaries.
//!
//! Conventions:
//! - matching is greedy by descending IoU, at or above a threshold (0.5 by default);
//! - mean IoU is taken over matched pairs only;
//! - with no predictions precision is 1 if nothing was missed, else 0
//!   (recall symmetrically); F1 is 0 when precision + recall is 0;
//! - with no matched pairs mean IoU is 1 if both sides are empty, else 0.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::BBox;

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("frame sets differ: {0}")]
    Alignment(String),
    #[error("IoU threshold must lie in (0, 1], got {0}")]
    Threshold(f64),
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x2().min(b.x2()) - a.x1().max(b.x1())).max(0.0);
    let ih = (a.y2().min(b.y2()) - a.y1().max(b.y1())).max(0.0);
    let inter = iw * ih;
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchedPair {
    pub pred: usize,
    pub truth: usize,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatchResult {
    pub pairs: Vec<MatchedPair>,
    pub unmatched_preds: Vec<usize>,
    pub unmatched_truths: Vec<usize>,
}

fn box_order(a: &BBox, b: &BBox) -> Ordering {
    a.as_array()
        .iter()
        .zip(b.as_array().iter())
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Rank of every box under a canonical coordinate order (ties by index).
fn canonical_ranks(boxes: &[BBox]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..boxes.len()).collect();
    idx.sort_by(|&i, &j| box_order(&boxes[i], &boxes[j]).then(i.cmp(&j)));
    let mut rank = vec![0; boxes.len()];
    for (r, i) in idx.into_iter().enumerate() {
        rank[i] = r;
    }
    rank
}

/// Greedy one-to-one matching.
///
/// Candidate pairs with IoU ≥ `iou_threshold` are visited by descending IoU;
/// ties go to the lower prediction, then the lower truth, in canonical box
/// order, so the matched boxes do not depend on input order. Pairs come out
/// in acceptance order; unmatched indices ascending.
pub fn match_detections(preds: &[BBox], truths: &[BBox], iou_threshold: f64) -> MatchResult {
    let pred_rank = canonical_ranks(preds);
    let truth_rank = canonical_ranks(truths);
    let mut candidates = Vec::new();
    for (p, pb) in preds.iter().enumerate() {
        for (t, tb) in truths.iter().enumerate() {
            let v = iou(pb, tb);
            if v >= iou_threshold && v > 0.0 {
                candidates.push(MatchedPair { pred: p, truth: t, iou: v });
            }
        }
    }
    candidates.sort_by(|a, b| {
        b.iou
            .total_cmp(&a.iou)
            .then(pred_rank[a.pred].cmp(&pred_rank[b.pred]))
            .then(truth_rank[a.truth].cmp(&truth_rank[b.truth]))
    });
    let mut pred_used = vec![false; preds.len()];
    let mut truth_used = vec![false; truths.len()];
    let mut pairs = Vec::new();
    for c in candidates {
        if !pred_used[c.pred] && !truth_used[c.truth] {
            pred_used[c.pred] = true;
            truth_used[c.truth] = true;
            pairs.push(c);
        }
    }
    MatchResult {
        pairs,
        unmatched_preds: (0..preds.len()).filter(|&i| !pred_used[i]).collect(),
        unmatched_truths: (0..truths.len()).filter(|&i| !truth_used[i]).collect(),
    }
}

/// Pooled counts; merging is associative and commutative on the integer
/// fields. IoU sums are merged in the order given, so reductions must keep
/// frame order to be bit-reproducible.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DetectionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub iou_sum: f64,
}

impl DetectionCounts {
    pub fn from_match(m: &MatchResult) -> Self {
        Self {
            tp: m.pairs.len() as u64,
            fp: m.unmatched_preds.len() as u64,
            fn_: m.unmatched_truths.len() as u64,
            iou_sum: m.pairs.iter().map(|p| p.iou).sum(),
        }
    }

    pub fn merge(self, other: Self) -> Self {
        Self {
            tp: self.tp + other.tp,
            fp: self.fp + other.fp,
            fn_: self.fn_ + other.fn_,
            iou_sum: self.iou_sum + other.iou_sum,
        }
    }

    pub fn report(&self) -> DetectionReport {
        let (tp, fp, fn_) = (self.tp as f64, self.fp as f64, self.fn_ as f64);
        let precision = if self.tp + self.fp == 0 {
            if self.fn_ == 0 { 1.0 } else { 0.0 }
        } else {
            tp / (tp + fp)
        };
        let recall = if self.tp + self.fn_ == 0 {
            if self.fp == 0 { 1.0 } else { 0.0 }
        } else {
            tp / (tp + fn_)
        };
        let mean_iou = if self.tp == 0 {
            if self.fp == 0 && self.fn_ == 0 { 1.0 } else { 0.0 }
        } else {
            self.iou_sum / tp
        };
        DetectionReport {
            mean_iou,
            recall,
            precision,
            f1: f1_score(precision, recall),
            tp: self.tp,
            fp: self.fp,
            fn_: self.fn_,
        }
    }
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub mean_iou: f64,
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

pub fn detection_report(m: &MatchResult) -> DetectionReport {
    DetectionCounts::from_match(m).report()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Averaging {
    /// Pool counts over all frames.
    #[default]
    Micro,
    /// Average the per-frame metrics.
    Macro,
}

/// Boxes of one frame, keyed by frame index.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameBoxes {
    pub frame_idx: u64,
    pub boxes: Vec<BBox>,
}

/// Pairs frames by index; both sides must hold the same frame set.
pub fn align_frames<'a>(
    preds: &'a [FrameBoxes],
    truths: &'a [FrameBoxes],
) -> Result<Vec<(&'a FrameBoxes, &'a FrameBoxes)>, EvalError> {
    use std::collections::BTreeMap;
    let index = |frames: &'a [FrameBoxes], side: &str| -> Result<BTreeMap<u64, &'a FrameBoxes>, EvalError> {
        let mut map = BTreeMap::new();
        for f in frames {
            if map.insert(f.frame_idx, f).is_some() {
                return Err(EvalError::Alignment(format!("{side} frame {} appears twice", f.frame_idx)));
            }
        }
        Ok(map)
    };
    let p = index(preds, "prediction")?;
    let t = index(truths, "truth")?;
    if let Some(missing) = t.keys().find(|k| !p.contains_key(k)) {
        return Err(EvalError::Alignment(format!("truth frame {missing} has no prediction frame")));
    }
    if let Some(extra) = p.keys().find(|k| !t.contains_key(k)) {
        return Err(EvalError::Alignment(format!("prediction frame {extra} has no truth frame")));
    }
    Ok(t.into_iter().map(|(k, tf)| (p[&k], tf)).collect())
}

pub fn evaluate_sequence(
    preds: &[FrameBoxes],
    truths: &[FrameBoxes],
    iou_threshold: f64,
    averaging: Averaging,
) -> Result<DetectionReport, EvalError> {
    if !(iou_threshold > 0.0 && iou_threshold <= 1.0) {
        return Err(EvalError::Threshold(iou_threshold));
    }
    let per_frame: Vec<DetectionCounts> = align_frames(preds, truths)?
        .into_iter()
        .map(|(p, t)| DetectionCounts::from_match(&match_detections(&p.boxes, &t.boxes, iou_threshold)))
        .collect();
    Ok(aggregate(&per_frame, averaging))
}

/// Reduces per-frame counts in the given order.
pub fn aggregate(per_frame: &[DetectionCounts], averaging: Averaging) -> DetectionReport {
    let pooled = per_frame.iter().fold(DetectionCounts::default(), |acc, c| acc.merge(*c));
    match averaging {
        Averaging::Micro => pooled.report(),
        Averaging::Macro => {
            let mut r = pooled.report();
            if per_frame.is_empty() {
                return r;
            }
            let n = per_frame.len() as f64;
            let reports: Vec<DetectionReport> = per_frame.iter().map(|c| c.report()).collect();
            r.mean_iou = reports.iter().map(|x| x.mean_iou).sum::<f64>() / n;
            r.recall = reports.iter().map(|x| x.recall).sum::<f64>() / n;
            r.precision = reports.iter().map(|x| x.precision).sum::<f64>() / n;
            r.f1 = reports.iter().map(|x| x.f1).sum::<f64>() / n;
            r
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    /// Unit-pixel counting over integer boxes.
    fn pixel_iou(a: [i32; 4], c: [i32; 4]) -> f64 {
        let (mut inter, mut union) = (0u32, 0u32);
        for x in 0..16 {
            for y in 0..16 {
                let ina = x >= a[0] && x < a[2] && y >= a[1] && y < a[3];
                let inc = x >= c[0] && x < c[2] && y >= c[1] && y < c[3];
                inter += (ina && inc) as u32;
                union += (ina || inc) as u32;
            }
        }
        inter as f64 / union as f64
    }

    #[test]
    fn iou_examples() {
        let a = b(0.0, 0.0, 2.0, 2.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &b(5.0, 5.0, 6.0, 6.0)), 0.0);
        // touching edges
        assert_eq!(iou(&a, &b(2.0, 0.0, 4.0, 2.0)), 0.0);
        let v = iou(&a, &b(1.0, 1.0, 3.0, 3.0));
        assert_eq!(v, 1.0 / 7.0);
        assert_eq!(v, pixel_iou([0, 0, 2, 2], [1, 1, 3, 3]));
        assert_eq!(iou(&b(0.0, 0.0, 4.0, 4.0), &b(1.0, 1.0, 3.0, 3.0)), pixel_iou([0, 0, 4, 4], [1, 1, 3, 3]));
    }

    #[test]
    fn identical_lists_match_perfectly() {
        let boxes = vec![b(0.0, 0.0, 2.0, 2.0), b(5.0, 5.0, 9.0, 9.0), b(10.0, 0.0, 12.0, 4.0)];
        let m = match_detections(&boxes, &boxes, 0.5);
        assert_eq!(m.pairs.len(), 3);
        assert!(m.pairs.iter().all(|p| p.pred == p.truth && p.iou == 1.0));
        assert!(m.unmatched_preds.is_empty() && m.unmatched_truths.is_empty());
    }

    #[test]
    fn greedy_prefers_larger_overlap() {
        // pred overlaps truth 0 at 0.9 and truth 1 at 0.6
        let pred = b(0.0, 0.0, 10.0, 10.0);
        let t_hi = b(0.0, 0.0, 10.0, 9.0);
        let t_lo = b(0.0, 0.0, 10.0, 6.0);
        assert!((iou(&pred, &t_hi) - 0.9).abs() < 1e-12);
        assert!((iou(&pred, &t_lo) - 0.6).abs() < 1e-12);
        let m = match_detections(&[pred], &[t_lo, t_hi], 0.5);
        assert_eq!(m.pairs.len(), 1);
        assert_eq!((m.pairs[0].pred, m.pairs[0].truth), (0, 1));
        assert_eq!(m.unmatched_truths, vec![0]);
    }

    #[test]
    fn below_threshold_never_matches() {
        let m = match_detections(&[b(0.0, 0.0, 2.0, 2.0)], &[b(1.0, 1.0, 3.0, 3.0)], 0.5);
        assert!(m.pairs.is_empty());
        assert_eq!((m.unmatched_preds.len(), m.unmatched_truths.len()), (1, 1));
    }

    #[test]
    fn report_examples() {
        // YOLOv5x row of the published comparison
        assert!((f1_score(0.8963, 0.7995) - 0.8451).abs() < 5e-4);

        let counts = DetectionCounts { tp: 8, fp: 2, fn_: 2, iou_sum: 6.4 };
        let r = counts.report();
        assert!((r.precision - 0.8).abs() < 1e-15 && (r.recall - 0.8).abs() < 1e-15);
        assert!((r.f1 - 0.8).abs() < 1e-15);
        assert!((r.mean_iou - 0.8).abs() < 1e-15);

        let empty = detection_report(&MatchResult::default());
        assert_eq!((empty.precision, empty.recall, empty.f1, empty.mean_iou), (1.0, 1.0, 1.0, 1.0));

        let only_fn = DetectionCounts { tp: 0, fp: 0, fn_: 3, iou_sum: 0.0 }.report();
        assert_eq!((only_fn.precision, only_fn.recall, only_fn.f1, only_fn.mean_iou), (0.0, 0.0, 0.0, 0.0));
        let only_fp = DetectionCounts { tp: 0, fp: 3, fn_: 0, iou_sum: 0.0 }.report();
        assert_eq!((only_fp.precision, only_fp.recall), (0.0, 0.0));
    }

    fn fb(frame_idx: u64, boxes: Vec<BBox>) -> FrameBoxes {
        FrameBoxes { frame_idx, boxes }
    }

    #[test]
    fn sequence_examples() {
        let a = b(0.0, 0.0, 4.0, 4.0);
        let c = b(10.0, 10.0, 14.0, 14.0);
        let perfect = vec![fb(0, vec![a, c]), fb(1, vec![c])];
        let r = evaluate_sequence(&perfect, &perfect, 0.5, Averaging::Micro).unwrap();
        assert_eq!((r.precision, r.recall, r.f1, r.mean_iou), (1.0, 1.0, 1.0, 1.0));

        // frame 0: tp=1, fp=1; frame 1: tp=1, fn=1
        let preds = vec![fb(0, vec![a, c]), fb(1, vec![a])];
        let truths = vec![fb(0, vec![a]), fb(1, vec![a, c])];
        let r = evaluate_sequence(&preds, &truths, 0.5, Averaging::Micro).unwrap();
        assert_eq!((r.tp, r.fp, r.fn_), (2, 1, 1));
        assert!((r.precision - 2.0 / 3.0).abs() < 1e-15);
        assert!((r.recall - 2.0 / 3.0).abs() < 1e-15);
        assert!((r.f1 - 2.0 / 3.0).abs() < 1e-15);

        let r = evaluate_sequence(&preds, &truths, 0.5, Averaging::Macro).unwrap();
        assert!((r.precision - 0.75).abs() < 1e-15);
        assert!((r.recall - 0.75).abs() < 1e-15);

        let no_preds = vec![fb(0, vec![]), fb(1, vec![])];
        let r = evaluate_sequence(&no_preds, &truths, 0.5, Averaging::Micro).unwrap();
        assert_eq!(r.recall, 0.0);
    }

    #[test]
    fn alignment_errors() {
        let a = b(0.0, 0.0, 4.0, 4.0);
        let preds = vec![fb(0, vec![a])];
        let truths = vec![fb(0, vec![a]), fb(1, vec![a])];
        assert!(matches!(evaluate_sequence(&preds, &truths, 0.5, Averaging::Micro), Err(EvalError::Alignment(_))));
        assert!(matches!(evaluate_sequence(&truths, &preds, 0.5, Averaging::Micro), Err(EvalError::Alignment(_))));
        let dup = vec![fb(0, vec![a]), fb(0, vec![a])];
        assert!(matches!(evaluate_sequence(&dup, &dup, 0.5, Averaging::Micro), Err(EvalError::Alignment(_))));
        assert!(matches!(evaluate_sequence(&preds, &preds, 0.0, Averaging::Micro), Err(EvalError::Threshold(_))));
    }
}
