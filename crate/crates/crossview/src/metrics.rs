//! Detection scoring: IoU matching, precision/recall/F1, false positives
//! per single-view image, and the TPR-vs-FPI operating curve.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grad::stack_features;
use crate::heads::{classify, decode_regression, regress, MASS_CLASS};
use crate::model::ModelParams;
use crate::relation::{RoiGeometry, View};
use crate::synth::PairedSample;

/// One predicted box with its mass probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub geometry: RoiGeometry,
    pub score: f64,
    pub view: View,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrocPoint {
    pub fpi: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub fpi: f64,
    pub froc: Vec<FrocPoint>,
    pub threshold: f64,
}

/// Evaluation knobs. All three are the field-standard 0.5 defaults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    #[serde(default = "default_half")]
    pub score_threshold: f64,
    #[serde(default = "default_half")]
    pub iou_threshold: f64,
    #[serde(default = "default_half")]
    pub nms_iou: f64,
}

fn default_half() -> f64 {
    0.5
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            score_threshold: 0.5,
            iou_threshold: 0.5,
            nms_iou: 0.5,
        }
    }
}

/// Intersection over union of two center-format boxes.
pub fn iou(a: &RoiGeometry, b: &RoiGeometry) -> f64 {
    let (ax0, ax1) = (a.x - a.w / 2.0, a.x + a.w / 2.0);
    let (ay0, ay1) = (a.y - a.h / 2.0, a.y + a.h / 2.0);
    let (bx0, bx1) = (b.x - b.w / 2.0, b.x + b.w / 2.0);
    let (by0, by1) = (b.y - b.h / 2.0, b.y + b.h / 2.0);
    let iw = (ax1.min(bx1) - ax0.max(bx0)).max(0.0);
    let ih = (ay1.min(by1) - ay0.max(by0)).max(0.0);
    let inter = iw * ih;
    let union = a.w * a.h + b.w * b.h - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

fn sort_by_score_desc(dets: &mut [Detection]) {
    dets.sort_by(|a, b| b.score.total_cmp(&a.score));
}

/// Greedy one-to-one matching in descending score order: each detection
/// claims the highest-IoU unmatched ground truth at or above the threshold.
pub fn match_detections(
    dets: &[Detection],
    gts: &[RoiGeometry],
    iou_threshold: f64,
) -> (usize, usize, usize) {
    let flags = label_detections(dets, gts, iou_threshold);
    let tp = flags.iter().filter(|(_, t)| *t).count();
    let fp = flags.len() - tp;
    (tp, fp, gts.len() - tp)
}

/// Per-detection TP/FP flags under the greedy rule, as (score, is_tp) in
/// descending score order. Sweeping a score threshold over this list gives
/// consistent counts at every operating point.
pub fn label_detections(
    dets: &[Detection],
    gts: &[RoiGeometry],
    iou_threshold: f64,
) -> Vec<(f64, bool)> {
    let mut ordered = dets.to_vec();
    sort_by_score_desc(&mut ordered);
    let mut claimed = vec![false; gts.len()];
    let mut out = Vec::with_capacity(ordered.len());
    for d in &ordered {
        let best = gts
            .iter()
            .enumerate()
            .filter(|(i, _)| !claimed[*i])
            .map(|(i, g)| (i, iou(&d.geometry, g)))
            .max_by(|a, b| a.1.total_cmp(&b.1));
        match best {
            Some((i, best_iou)) if best_iou >= iou_threshold => {
                claimed[i] = true;
                out.push((d.score, true));
            }
            _ => out.push((d.score, false)),
        }
    }
    out
}

/// Greedy non-maximum suppression: keep in descending score order, drop any
/// detection overlapping a kept one above `nms_iou`.
pub fn nms(dets: &[Detection], nms_iou: f64) -> Vec<Detection> {
    let mut ordered = dets.to_vec();
    sort_by_score_desc(&mut ordered);
    let mut kept: Vec<Detection> = Vec::new();
    for d in ordered {
        if kept.iter().all(|k| iou(&k.geometry, &d.geometry) <= nms_iou) {
            kept.push(d);
        }
    }
    kept
}

/// Model predictions for one view of one case: relation stack, heads, box
/// decoding, then NMS.
pub fn predict_view(
    model: &ModelParams,
    sample: &PairedSample,
    view: View,
    nms_iou: f64,
) -> Result<Vec<Detection>> {
    let (f1, f2) = stack_features(sample, model)?;
    let feats = match view {
        View::View1 => &f1,
        View::View2 => &f2,
    };
    let head = model.cls_head(view);
    let mut dets = Vec::with_capacity(feats.len());
    for (cand, f) in sample.candidates(view).iter().zip(feats) {
        let probs = classify(f, head)?;
        let offsets = regress(f, head)?;
        dets.push(Detection {
            geometry: decode_regression(&cand.geometry, &offsets)?,
            score: probs[MASS_CLASS],
            view,
        });
    }
    Ok(nms(&dets, nms_iou))
}

/// Full-pipeline evaluation over a dataset: per-view prediction, greedy
/// matching, headline metrics at `score_threshold`, and the FROC curve from
/// sweeping the threshold over all distinct detection scores. The FPI
/// denominator counts single-view images (two per paired case).
pub fn evaluate(
    model: &ModelParams,
    dataset: &[PairedSample],
    cfg: &EvalConfig,
) -> Result<MetricsReport> {
    if dataset.is_empty() {
        return Err(Error::Domain("evaluate: dataset is empty".into()));
    }
    let mut labeled: Vec<(f64, bool)> = Vec::new();
    let mut total_gt = 0usize;
    for sample in dataset {
        for view in [View::View1, View::View2] {
            let dets = predict_view(model, sample, view, cfg.nms_iou)?;
            let gts: Vec<RoiGeometry> = sample
                .ground_truth(view)
                .iter()
                .map(|g| g.geometry)
                .collect();
            total_gt += gts.len();
            labeled.extend(label_detections(&dets, &gts, cfg.iou_threshold));
        }
    }
    let images = 2 * dataset.len();
    Ok(report_from_labeled(
        &mut labeled,
        total_gt,
        images,
        cfg.score_threshold,
    ))
}

/// Metrics from pre-labeled detections, shared by `evaluate` and tests that
/// inject oracle detections directly.
pub fn report_from_labeled(
    labeled: &mut Vec<(f64, bool)>,
    total_gt: usize,
    images: usize,
    score_threshold: f64,
) -> MetricsReport {
    labeled.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut tp = 0usize;
    let mut fp = 0usize;
    for (score, is_tp) in labeled.iter() {
        if *score >= score_threshold {
            if *is_tp {
                tp += 1;
            } else {
                fp += 1;
            }
        }
    }
    let precision = if tp + fp > 0 {
        tp as f64 / (tp + fp) as f64
    } else {
        0.0
    };
    let recall = if total_gt > 0 {
        tp as f64 / total_gt as f64
    } else {
        0.0
    };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    let fpi = fp as f64 / images as f64;

    // threshold sweep: one point per distinct score, descending
    let mut froc = Vec::new();
    let mut cum_tp = 0usize;
    let mut cum_fp = 0usize;
    let mut i = 0;
    while i < labeled.len() {
        let score = labeled[i].0;
        while i < labeled.len() && labeled[i].0 == score {
            if labeled[i].1 {
                cum_tp += 1;
            } else {
                cum_fp += 1;
            }
            i += 1;
        }
        froc.push(FrocPoint {
            fpi: cum_fp as f64 / images as f64,
            tpr: if total_gt > 0 {
                cum_tp as f64 / total_gt as f64
            } else {
                0.0
            },
        });
    }

    MetricsReport {
        precision,
        recall,
        f1,
        fpi,
        froc,
        threshold: score_threshold,
    }
}

/// TPR attainable at or under a given FPI budget: the maximum TPR among
/// curve points with fpi <= query, 0 if none.
pub fn froc_interpolate(froc: &[FrocPoint], fpi_query: f64) -> f64 {
    froc.iter()
        .filter(|p| p.fpi <= fpi_query)
        .map(|p| p.tpr)
        .fold(0.0, f64::max)
}
