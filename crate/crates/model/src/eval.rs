//! Mask metrics, positional matching and report rendering.

use std::fmt::Write as _;

use aura_core::{BinaryMask, SceneSample};
use aura_tensor::par;
use serde::{Deserialize, Serialize};

use crate::inference::Prediction;
use crate::model::AuraModel;
use crate::{ModelError, Result};

/// `|A ∩ B| / |A ∪ B|`, 1.0 when both are empty.
pub fn iou(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    pred.same_shape(gt)?;
    let union = pred.union_count(gt);
    if union == 0 {
        return Ok(1.0);
    }
    Ok(pred.intersection_count(gt) as f64 / union as f64)
}

/// Mean of per-pair IoUs.
pub fn giou(pairs: &[(BinaryMask, BinaryMask)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(ModelError::UndefinedMetric("gIoU of zero pairs".into()));
    }
    let mut total = 0.0;
    for (p, g) in pairs {
        total += iou(p, g)?;
    }
    Ok(total / pairs.len() as f64)
}

/// Cumulative intersection over cumulative union.
pub fn ciou(pairs: &[(BinaryMask, BinaryMask)]) -> Result<f64> {
    let (mut inter, mut union) = (0usize, 0usize);
    for (p, g) in pairs {
        p.same_shape(g)?;
        inter += p.intersection_count(g);
        union += p.union_count(g);
    }
    if union == 0 {
        return Err(ModelError::UndefinedMetric("cIoU with every union empty".into()));
    }
    Ok(inter as f64 / union as f64)
}

/// Positional pairing of predictions with targets.
#[derive(Clone, Debug, PartialEq)]
pub struct Matching<'a, P, G> {
    /// One entry per target; `None` when no prediction reached it.
    pub pairs: Vec<(Option<&'a P>, &'a G)>,
    pub unmatched_targets: usize,
    pub surplus_predictions: usize,
}

/// The i-th prediction goes with the i-th target.
pub fn match_predictions<'a, P, G>(preds: &'a [P], targets: &'a [G]) -> Matching<'a, P, G> {
    let pairs = targets
        .iter()
        .enumerate()
        .map(|(i, g)| (preds.get(i), g))
        .collect();
    Matching {
        pairs,
        unmatched_targets: targets.len().saturating_sub(preds.len()),
        surplus_predictions: preds.len().saturating_sub(targets.len()),
    }
}

/// Mask pairs for scoring: unmatched targets get an empty prediction.
pub fn scored_pairs(preds: &[BinaryMask], targets: &[BinaryMask]) -> Vec<(BinaryMask, BinaryMask)> {
    match_predictions(preds, targets)
        .pairs
        .into_iter()
        .map(|(p, g)| {
            let p = p.cloned().unwrap_or_else(|| BinaryMask::new(g.height(), g.width()));
            (p, g.clone())
        })
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub amodal_giou: f64,
    pub amodal_ciou: f64,
    pub visible_giou: f64,
    pub visible_ciou: f64,
    /// Mean `|r_hat - r|` over matched targets with a rate prediction.
    pub rate_mae: Option<f64>,
    /// Mean per-pixel accuracy of the spatial map over matched targets.
    pub spatial_accuracy: Option<f64>,
    pub samples: usize,
    pub conversations: usize,
    pub targets: usize,
    pub unmatched_targets: usize,
    pub surplus_predictions: usize,
    pub truncated_answers: usize,
}

/// Anything that answers a question about an image with per-`[SEG]`
/// probability maps.
pub trait Predictor: Sync {
    fn predict(&self, sample: &SceneSample, question: &str) -> Result<Prediction>;
}

impl Predictor for AuraModel {
    fn predict(&self, sample: &SceneSample, question: &str) -> Result<Prediction> {
        AuraModel::predict(self, &sample.image, question)
    }
}

#[derive(Default)]
struct Tally {
    visible: Vec<(BinaryMask, BinaryMask)>,
    amodal: Vec<(BinaryMask, BinaryMask)>,
    rate_errors: Vec<f64>,
    spatial_acc: Vec<f64>,
    unmatched: usize,
    surplus: usize,
    truncated: usize,
}

fn score_conversation(
    predictor: &dyn Predictor,
    sample: &SceneSample,
    conv_index: usize,
    threshold: f64,
) -> Result<Tally> {
    let conv = &sample.conversations[conv_index];
    let pred = predictor.predict(sample, &conv.question)?;
    let (h, w) = sample.dims();
    let targets = conv
        .target_ids
        .iter()
        .map(|id| {
            sample
                .object(id)
                .ok_or_else(|| ModelError::Shape(format!("unknown target {id}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let m = match_predictions(&pred.segs, &targets);
    let mut tally = Tally {
        unmatched: m.unmatched_targets,
        surplus: m.surplus_predictions,
        truncated: usize::from(pred.truncated),
        ..Tally::default()
    };
    for (p, g) in m.pairs {
        let empty = || BinaryMask::new(h, w);
        let (vis, amo) = match p {
            Some(p) => (
                BinaryMask::from_scores(h, w, &p.visible, threshold),
                BinaryMask::from_scores(h, w, &p.amodal, threshold),
            ),
            None => (empty(), empty()),
        };
        tally.visible.push((vis, g.visible_mask.clone()));
        tally.amodal.push((amo, g.amodal_mask.clone()));
        if let Some(p) = p {
            if let Some(r) = p.rate {
                tally.rate_errors.push((r - g.occlusion_rate).abs());
            }
            if let Some(labels) = &p.spatial {
                let truth = g.spatial_map.values();
                let hits = labels.iter().zip(truth).filter(|(a, b)| a == b).count();
                tally.spatial_acc.push(hits as f64 / truth.len() as f64);
            }
        }
    }
    Ok(tally)
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Greedy prediction on every conversation, thresholded at `threshold`,
/// positionally matched and scored.
pub fn evaluate_model(predictor: &dyn Predictor, dataset: &[SceneSample], threshold: f64) -> Result<EvalReport> {
    let jobs: Vec<(usize, usize)> = dataset
        .iter()
        .enumerate()
        .flat_map(|(s, sample)| (0..sample.conversations.len()).map(move |c| (s, c)))
        .collect();
    let tallies = par::map(&jobs, |&(s, c)| {
        score_conversation(predictor, &dataset[s], c, threshold)
            .map_err(|e| e.in_sample(&dataset[s].sample_id))
    });
    let mut all = Tally::default();
    for t in tallies {
        let t = t?;
        all.visible.extend(t.visible);
        all.amodal.extend(t.amodal);
        all.rate_errors.extend(t.rate_errors);
        all.spatial_acc.extend(t.spatial_acc);
        all.unmatched += t.unmatched;
        all.surplus += t.surplus;
        all.truncated += t.truncated;
    }
    Ok(EvalReport {
        amodal_giou: giou(&all.amodal)?,
        amodal_ciou: ciou(&all.amodal)?,
        visible_giou: giou(&all.visible)?,
        visible_ciou: ciou(&all.visible)?,
        rate_mae: mean(&all.rate_errors),
        spatial_accuracy: mean(&all.spatial_acc),
        samples: dataset.len(),
        conversations: jobs.len(),
        targets: all.amodal.len(),
        unmatched_targets: all.unmatched,
        surplus_predictions: all.surplus,
        truncated_answers: all.truncated,
    })
}

fn display_name(name: &str, i: usize) -> String {
    if name.trim().is_empty() {
        format!("run-{i}")
    } else {
        name.to_string()
    }
}

/// Fixed-width table of the four IoU metrics as percentages.
pub fn render_report(reports: &[(String, EvalReport)]) -> String {
    const HEADERS: [&str; 4] = ["AgIoU", "AcIoU", "VgIoU", "VcIoU"];
    let rows: Vec<(String, [String; 4])> = reports
        .iter()
        .enumerate()
        .map(|(i, (name, r))| {
            let cells = [r.amodal_giou, r.amodal_ciou, r.visible_giou, r.visible_ciou]
                .map(|v| format!("{:.2}", 100.0 * v));
            (display_name(name, i), cells)
        })
        .collect();
    let name_w = rows.iter().map(|(n, _)| n.len()).chain([6]).max().unwrap_or(6);
    let col_w: Vec<usize> = (0..4)
        .map(|c| rows.iter().map(|(_, cells)| cells[c].len()).chain([5]).max().unwrap_or(5))
        .collect();

    let mut out = String::new();
    let line = |name: &str, cells: &[&str]| {
        let mut s = format!("{name:<name_w$}");
        for (cell, w) in cells.iter().zip(&col_w) {
            let _ = write!(s, " {cell:>w$}");
        }
        s
    };
    out.push_str(&line("Method", &HEADERS));
    out.push('\n');
    for (name, cells) in &rows {
        let refs: Vec<&str> = cells.iter().map(String::as_str).collect();
        out.push_str(&line(name, &refs));
        out.push('\n');
    }
    out
}

pub const CSV_HEADER: &str = "name,amodal_giou,amodal_ciou,visible_giou,visible_ciou,rate_mae,spatial_accuracy,\
samples,conversations,targets,unmatched_targets,surplus_predictions,truncated_answers";

/// One CSV row per report; absent optional metrics are empty cells.
pub fn render_csv(reports: &[(String, EvalReport)]) -> String {
    let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for (i, (name, r)) in reports.iter().enumerate() {
        let name = display_name(name, i).replace([',', '"', '\n'], "_");
        let _ = writeln!(
            out,
            "{name},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.amodal_giou,
            r.amodal_ciou,
            r.visible_giou,
            r.visible_ciou,
            opt(r.rate_mae),
            opt(r.spatial_accuracy),
            r.samples,
            r.conversations,
            r.targets,
            r.unmatched_targets,
            r.surplus_predictions,
            r.truncated_answers
        );
    }
    out
}
