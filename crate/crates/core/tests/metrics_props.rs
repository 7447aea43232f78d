use pitchmap::detection_metrics::{
    aggregate, f1_score, iou, match_detections, Averaging, DetectionCounts, DEFAULT_IOU_THRESHOLD,
};
use pitchmap::ingest::{BBox, KeypointObservation};
use pitchmap::keypoint_metrics::{masked_mae, visibility_accuracy, KeypointEvalBatch, KeypointPair, KeypointPrediction};
use pitchmap::KeypointId;
use proptest::prelude::*;

fn bbox() -> impl Strategy<Value = BBox> {
    (0u32..60, 0u32..60, 1u32..20, 1u32..20)
        .prop_map(|(x, y, w, h)| BBox::new(x as f64, y as f64, (x + w) as f64, (y + h) as f64).unwrap())
}

fn boxes() -> impl Strategy<Value = Vec<BBox>> {
    prop::collection::vec(bbox(), 0..7)
}

fn counts_of(preds: &[BBox], truths: &[BBox], thr: f64) -> (u64, u64, u64) {
    let c = DetectionCounts::from_match(&match_detections(preds, truths, thr));
    (c.tp, c.fp, c.fn_)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn iou_is_symmetric_and_bounded(a in bbox(), b in bbox()) {
        let v = iou(&a, &b);
        prop_assert_eq!(v, iou(&b, &a));
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert_eq!(iou(&a, &a), 1.0);
    }

    #[test]
    fn matching_is_a_thresholded_one_to_one_map(preds in boxes(), truths in boxes(), thr in 0.05f64..0.95) {
        let m = match_detections(&preds, &truths, thr);
        let mut seen_p = vec![false; preds.len()];
        let mut seen_t = vec![false; truths.len()];
        for p in &m.pairs {
            prop_assert!(!seen_p[p.pred] && !seen_t[p.truth]);
            seen_p[p.pred] = true;
            seen_t[p.truth] = true;
            prop_assert!(p.iou >= thr);
            prop_assert_eq!(p.iou, iou(&preds[p.pred], &truths[p.truth]));
        }
        prop_assert_eq!(m.pairs.len() + m.unmatched_preds.len(), preds.len());
        prop_assert_eq!(m.pairs.len() + m.unmatched_truths.len(), truths.len());
        // greedy leaves no matchable pair behind
        for &i in &m.unmatched_preds {
            for &j in &m.unmatched_truths {
                prop_assert!(iou(&preds[i], &truths[j]) < thr);
            }
        }
    }

    #[test]
    fn matching_ignores_input_order(preds in boxes(), truths in boxes(), rp in any::<u64>(), rt in any::<u64>()) {
        let shuffle = |v: &[BBox], r: u64| {
            let mut v = v.to_vec();
            let n = v.len();
            for i in (1..n).rev() {
                v.swap(i, (r.wrapping_mul(i as u64 + 7) % (i as u64 + 1)) as usize);
            }
            v
        };
        let a = counts_of(&preds, &truths, DEFAULT_IOU_THRESHOLD);
        let b = counts_of(&shuffle(&preds, rp), &shuffle(&truths, rt), DEFAULT_IOU_THRESHOLD);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn identical_sets_score_perfectly(truths in boxes()) {
        let r = DetectionCounts::from_match(&match_detections(&truths, &truths, DEFAULT_IOU_THRESHOLD)).report();
        prop_assert_eq!(r.fp, 0);
        prop_assert_eq!(r.fn_, 0);
        prop_assert_eq!((r.precision, r.recall, r.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn f1_lies_between_precision_and_recall(p in 0.0f64..=1.0, r in 0.0f64..=1.0) {
        let f = f1_score(p, r);
        prop_assert!((0.0..=1.0).contains(&f));
        if p + r > 0.0 {
            prop_assert!(f >= p.min(r) - 1e-15 && f <= p.max(r) + 1e-15);
        } else {
            prop_assert_eq!(f, 0.0);
        }
    }

    #[test]
    fn micro_average_equals_pooled_counts(frames in prop::collection::vec((boxes(), boxes()), 1..6)) {
        let per_frame: Vec<_> = frames
            .iter()
            .map(|(p, t)| DetectionCounts::from_match(&match_detections(p, t, DEFAULT_IOU_THRESHOLD)))
            .collect();
        let pooled = per_frame.iter().copied().fold(DetectionCounts::default(), DetectionCounts::merge);
        let micro = aggregate(&per_frame, Averaging::Micro);
        prop_assert_eq!(micro, pooled.report());
        let macro_ = aggregate(&per_frame, Averaging::Macro);
        prop_assert_eq!((macro_.tp, macro_.fp, macro_.fn_), (pooled.tp, pooled.fp, pooled.fn_));
    }
}

// ---------------------------------------------------------------------------
// Keypoint metrics against direct loops

fn pair() -> impl Strategy<Value = (bool, f64, f64, f64, f64, f64)> {
    (any::<bool>(), 0.0f64..=1.0, 0.0f64..=1.0, 0.0f64..=1.0, 0.0f64..=1.0, 0.0f64..=1.0)
}

fn batch(raw: &[Vec<(bool, f64, f64, f64, f64, f64)>]) -> KeypointEvalBatch {
    let frames = raw
        .iter()
        .map(|f| {
            f.iter()
                .enumerate()
                .map(|(i, &(vis, tx, ty, px, py, prob))| {
                    let id = KeypointId::new(i as i64).unwrap();
                    KeypointPair {
                        truth: if vis { KeypointObservation::visible(id, tx, ty) } else { KeypointObservation::hidden(id) },
                        pred: KeypointPrediction::new(id, px, py, prob).unwrap(),
                    }
                })
                .collect()
        })
        .collect();
    KeypointEvalBatch::new(frames).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn masked_mae_matches_loop(raw in prop::collection::vec(prop::collection::vec(pair(), 12), 1..8)) {
        let mut total = 0.0;
        let mut frames = 0usize;
        for f in &raw {
            let mut e = 0.0;
            let mut n = 0usize;
            for &(vis, tx, ty, px, py, _) in f {
                if vis {
                    e += (tx - px).abs() + (ty - py).abs();
                    n += 1;
                }
            }
            if n > 0 {
                total += e / n as f64;
                frames += 1;
            }
        }
        let got = masked_mae(&batch(&raw));
        if frames == 0 {
            prop_assert!(got.is_err());
        } else {
            let got = got.unwrap();
            prop_assert!((got.value - total / frames as f64).abs() < 1e-12);
            prop_assert_eq!(got.evaluated_frames, frames);
            prop_assert_eq!(got.skipped_frames, raw.len() - frames);
        }
    }

    #[test]
    fn visibility_accuracy_matches_loop(raw in prop::collection::vec(prop::collection::vec(pair(), 12), 1..8)) {
        let mut correct = 0usize;
        for f in &raw {
            for &(vis, _, _, _, _, prob) in f {
                if (prob >= 0.5) == vis {
                    correct += 1;
                }
            }
        }
        let expect = correct as f64 / (12 * raw.len()) as f64;
        prop_assert!((visibility_accuracy(&batch(&raw)).unwrap() - expect).abs() < 1e-12);
    }
}
