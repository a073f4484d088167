mod common;

use aura_core::{BinaryMask, SceneSample};
use aura_model::eval::{ciou, giou, iou, match_predictions, render_csv, scored_pairs, CSV_HEADER};
use aura_model::{evaluate_model, render_report, EvalReport, ModelError, Prediction, Predictor, SegPrediction};
use common::*;
use proptest::prelude::*;

fn square(size: usize, y0: usize, x0: usize, side: usize) -> BinaryMask {
    BinaryMask::from_fn(size, size, |y, x| y >= y0 && y < y0 + side && x >= x0 && x < x0 + side)
}

#[test]
fn iou_fixtures() {
    let a = square(5, 1, 1, 3);
    assert_eq!(iou(&a, &a).unwrap(), 1.0);
    assert_eq!(iou(&square(5, 0, 0, 1), &square(5, 3, 3, 2)).unwrap(), 0.0);
    let inner = square(5, 2, 2, 1);
    assert!((iou(&inner, &a).unwrap() - 1.0 / 9.0).abs() < 1e-9);
    assert_eq!(iou(&BinaryMask::new(3, 3), &BinaryMask::new(3, 3)).unwrap(), 1.0);
    assert!(iou(&a, &BinaryMask::new(4, 5)).is_err());
}

#[test]
fn giou_and_ciou_differ_on_the_hand_fixture() {
    let whole = square(5, 0, 0, 2);
    let pairs = vec![(whole.clone(), whole), (square(5, 2, 2, 1), square(5, 1, 1, 3))];
    let g = giou(&pairs).unwrap();
    let c = ciou(&pairs).unwrap();
    assert!((g - 5.0 / 9.0).abs() < 1e-9);
    assert!((c - 5.0 / 13.0).abs() < 1e-9);
    assert!((g - c).abs() > 0.1);

    assert!(matches!(giou(&[]), Err(ModelError::UndefinedMetric(_))));
    let empty = vec![(BinaryMask::new(2, 2), BinaryMask::new(2, 2))];
    assert!(matches!(ciou(&empty), Err(ModelError::UndefinedMetric(_))));
    let one = vec![(square(5, 0, 0, 2), square(5, 1, 1, 2))];
    assert_eq!(giou(&one).unwrap(), iou(&one[0].0, &one[0].1).unwrap());
    assert_eq!(ciou(&one).unwrap(), iou(&one[0].0, &one[0].1).unwrap());
}

#[test]
fn positional_matching_rules() {
    let m = match_predictions(&[1, 2], &['a', 'b']);
    assert_eq!(m.pairs, vec![(Some(&1), &'a'), (Some(&2), &'b')]);
    assert_eq!((m.unmatched_targets, m.surplus_predictions), (0, 0));

    let none: [i32; 0] = [];
    let m = match_predictions(&none, &['a', 'b']);
    assert_eq!(m.unmatched_targets, 2);
    assert!(m.pairs.iter().all(|(p, _)| p.is_none()));

    let m = match_predictions(&[1, 2, 3], &['a', 'b']);
    assert_eq!((m.pairs.len(), m.surplus_predictions), (2, 1));

    let gts = vec![square(4, 0, 0, 2), square(4, 1, 1, 2)];
    let pairs = scored_pairs(&[], &gts);
    assert_eq!(pairs.len(), 2);
    assert_eq!(giou(&pairs).unwrap(), 0.0);
    assert_eq!(ciou(&pairs).unwrap(), 0.0);
}

fn arb_pair(side: usize) -> impl Strategy<Value = (BinaryMask, BinaryMask)> {
    (
        prop::collection::vec(any::<bool>(), side * side),
        prop::collection::vec(any::<bool>(), side * side),
    )
        .prop_map(move |(a, b)| {
            (
                BinaryMask::from_bits(side, side, a).unwrap(),
                BinaryMask::from_bits(side, side, b).unwrap(),
            )
        })
}

proptest! {
    #[test]
    fn metric_properties(pairs in prop::collection::vec(arb_pair(4), 1..6)) {
        for (a, b) in &pairs {
            prop_assert_eq!(iou(a, b).unwrap(), iou(b, a).unwrap());
            if !a.is_empty() {
                prop_assert_eq!(iou(a, a).unwrap(), 1.0);
            }
        }
        let ious: Vec<f64> = pairs.iter().map(|(a, b)| iou(a, b).unwrap()).collect();
        let lo = ious.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = ious.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let g = giou(&pairs).unwrap();
        prop_assert!(g >= lo - 1e-12 && g <= hi + 1e-12);
        if let Ok(c) = ciou(&pairs) {
            let scored: Vec<f64> = pairs
                .iter()
                .filter(|(a, b)| a.union_count(b) > 0)
                .map(|(a, b)| iou(a, b).unwrap())
                .collect();
            let lo = scored.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = scored.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(c >= lo - 1e-12 && c <= hi + 1e-12);
            let unions: Vec<usize> = pairs.iter().map(|(a, b)| a.union_count(b)).collect();
            if unions.iter().all(|&u| u == unions[0]) {
                prop_assert!((g - c).abs() < 1e-12);
            }
        }
    }
}

/// Answers with the ground truth and saturated ground-truth masks.
struct Oracle;

impl Predictor for Oracle {
    fn predict(&self, sample: &SceneSample, question: &str) -> aura_model::Result<Prediction> {
        let conv = sample.conversations.iter().find(|c| c.question == question).unwrap();
        let segs = conv
            .target_ids
            .iter()
            .map(|id| {
                let o = sample.object(id).unwrap();
                SegPrediction {
                    visible: o.visible_mask.to_f64(),
                    amodal: o.amodal_mask.to_f64(),
                    rate: Some(o.occlusion_rate),
                    spatial: Some(o.spatial_map.values().to_vec()),
                }
            })
            .collect();
        Ok(Prediction {
            answer: conv.answer.clone(),
            tokens: Vec::new(),
            truncated: false,
            segs,
        })
    }
}

/// Never emits a `[SEG]`.
struct Silent;

impl Predictor for Silent {
    fn predict(&self, _: &SceneSample, _: &str) -> aura_model::Result<Prediction> {
        Ok(Prediction {
            answer: "I cannot tell.".into(),
            tokens: Vec::new(),
            truncated: false,
            segs: Vec::new(),
        })
    }
}

#[test]
fn oracle_scores_perfectly() {
    let data = synthetic(3);
    let r = evaluate_model(&Oracle, &data, 0.5).unwrap();
    assert_eq!(
        [r.amodal_giou, r.amodal_ciou, r.visible_giou, r.visible_ciou],
        [1.0; 4]
    );
    assert_eq!(r.rate_mae, Some(0.0));
    assert_eq!(r.spatial_accuracy, Some(1.0));
    assert_eq!(r.unmatched_targets, 0);
    assert_eq!(r.samples, 3);
}

#[test]
fn silent_model_scores_zero_with_every_target_unmatched() {
    let data = synthetic(2);
    let r = evaluate_model(&Silent, &data, 0.5).unwrap();
    assert_eq!([r.amodal_giou, r.amodal_ciou], [0.0, 0.0]);
    assert_eq!(r.unmatched_targets, r.targets);
    assert!(r.rate_mae.is_none());
}

#[test]
fn matched_pairs_follow_seg_count() {
    let sample = scene_with_all_conversations();
    for (conv, k) in sample.conversations.iter().zip([0usize, 1, 2, 3, 5]) {
        let one = SceneSample {
            conversations: vec![conv.clone()],
            ..sample.clone()
        };
        if k == 0 {
            assert!(evaluate_model(&Oracle, &[one], 0.5).is_err());
            continue;
        }
        let r = evaluate_model(&Oracle, &[one], 0.5).unwrap();
        assert_eq!(r.targets, k);
        assert_eq!(r.unmatched_targets, 0);
    }
}

fn fixture(a: f64, b: f64, c: f64, d: f64) -> EvalReport {
    EvalReport {
        amodal_giou: a,
        amodal_ciou: b,
        visible_giou: c,
        visible_ciou: d,
        ..EvalReport::default()
    }
}

#[test]
fn report_rows_match_the_fixture_layout() {
    let reports = vec![
        ("AURA".to_string(), fixture(0.4776, 0.4732, 0.5131, 0.5538)),
        ("Baseline".to_string(), fixture(0.4355, 0.4392, 0.4896, 0.4863)),
    ];
    let text = render_report(&reports);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "Method   AgIoU AcIoU VgIoU VcIoU");
    assert_eq!(lines[1], "AURA     47.76 47.32 51.31 55.38");
    assert_eq!(lines[2], "Baseline 43.55 43.92 48.96 48.63");
    assert_eq!(render_report(&reports), text);

    let wide = render_report(&[
        ("AURA".to_string(), fixture(0.4776, 0.4732, 0.5131, 0.5538)),
        (String::new(), fixture(1.0, 1.0, 1.0, 1.0)),
    ]);
    let lines: Vec<&str> = wide.lines().collect();
    assert_eq!(lines[1], "AURA    47.76  47.32  51.31  55.38");
    assert_eq!(lines[2], "run-1  100.00 100.00 100.00 100.00");
    let lone = render_report(&[(String::new(), fixture(0.0, 0.0, 0.0, 0.0))]);
    assert!(lone.lines().nth(1).unwrap().starts_with("run-0 "));

    let csv = render_csv(&reports);
    assert_eq!(csv.lines().next(), Some(CSV_HEADER));
    assert!(csv.lines().nth(1).unwrap().starts_with("AURA,0.4776,0.4732,0.5131,0.5538,,,"));
}
