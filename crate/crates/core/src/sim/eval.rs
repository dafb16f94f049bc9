//! Center-distance detection metrics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::wrap_to_pi;
use crate::matching::{GroundTruth, Prediction};
use crate::query::Category;

pub const AP_THRESHOLDS: [f64; 4] = [0.5, 1.0, 2.0, 4.0];
/// Matching threshold for the true-positive error metrics.
pub const TP_THRESHOLD: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionMetrics {
    /// Mean BEV center distance of true positives; absent without matches.
    pub ate: Option<f64>,
    /// Mean absolute yaw difference of true positives in radians.
    pub aoe: Option<f64>,
    /// AP averaged over categories present in the ground truth, keyed by
    /// threshold in meters.
    pub ap: BTreeMap<String, f64>,
    pub ap_per_category: BTreeMap<Category, BTreeMap<String, f64>>,
    pub mean_ap: f64,
    pub num_predictions: usize,
    pub num_ground_truths: usize,
    pub foreground_recall: Option<f64>,
}

fn threshold_key(t: f64) -> String {
    format!("{t:.1}")
}

/// Greedy matching by descending score: each prediction takes the nearest
/// unmatched ground truth within `threshold`. Returns per-prediction matches
/// in score order.
fn greedy_match(
    preds: &[(usize, f64)],
    all_preds: &[Prediction],
    gts: &[usize],
    all_gts: &[GroundTruth],
    threshold: f64,
) -> Vec<Option<usize>> {
    let mut taken = vec![false; gts.len()];
    preds
        .iter()
        .map(|&(pi, _)| {
            let c = all_preds[pi].center();
            let mut best: Option<(usize, f64)> = None;
            for (k, &gi) in gts.iter().enumerate() {
                if taken[k] {
                    continue;
                }
                let d = c.bev_distance(&all_gts[gi].center_point());
                if d <= threshold && best.is_none_or(|(_, bd)| d < bd) {
                    best = Some((k, d));
                }
            }
            best.map(|(k, _)| {
                taken[k] = true;
                gts[k]
            })
        })
        .collect()
}

/// All-point interpolated average precision.
fn average_precision(matches: &[Option<usize>], num_gt: usize) -> f64 {
    if num_gt == 0 || matches.is_empty() {
        return 0.0;
    }
    let mut tp = 0usize;
    let mut precision = Vec::with_capacity(matches.len());
    let mut recall = Vec::with_capacity(matches.len());
    for (i, m) in matches.iter().enumerate() {
        if m.is_some() {
            tp += 1;
        }
        precision.push(tp as f64 / (i + 1) as f64);
        recall.push(tp as f64 / num_gt as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (p, r) in precision.iter().zip(&recall) {
        ap += (r - prev_recall) * p;
        prev_recall = *r;
    }
    ap
}

/// Per-category greedy center-distance evaluation. Predictions are labeled
/// with their top class and scored by its probability.
pub fn evaluate(preds: &[Prediction], gts: &[GroundTruth]) -> Result<DetectionMetrics> {
    for p in preds {
        p.validate()?;
    }
    for g in gts {
        g.validate()?;
    }
    let mut ap_per_category = BTreeMap::new();
    let mut tp_dist = Vec::new();
    let mut tp_yaw = Vec::new();
    for category in Category::ALL {
        let gt_idx: Vec<usize> = (0..gts.len()).filter(|&i| gts[i].category == category).collect();
        if gt_idx.is_empty() {
            continue;
        }
        let mut scored: Vec<(usize, f64)> = preds
            .iter()
            .enumerate()
            .filter_map(|(i, p)| {
                let (c, s) = p.top_class();
                (c == category).then_some((i, s))
            })
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let mut per_t = BTreeMap::new();
        for t in AP_THRESHOLDS {
            let m = greedy_match(&scored, preds, &gt_idx, gts, t);
            per_t.insert(threshold_key(t), average_precision(&m, gt_idx.len()));
        }
        for (&(pi, _), g) in scored.iter().zip(greedy_match(&scored, preds, &gt_idx, gts, TP_THRESHOLD)) {
            if let Some(gi) = g {
                tp_dist.push(preds[pi].center().bev_distance(&gts[gi].center_point()));
                tp_yaw.push(wrap_to_pi(preds[pi].bbox.yaw - gts[gi].yaw).abs());
            }
        }
        ap_per_category.insert(category, per_t);
    }
    let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    let mut ap = BTreeMap::new();
    for t in AP_THRESHOLDS {
        let k = threshold_key(t);
        let vals: Vec<f64> = ap_per_category.values().map(|m: &BTreeMap<String, f64>| m[&k]).collect();
        ap.insert(k, mean(&vals).unwrap_or(0.0));
    }
    let mean_ap = ap.values().sum::<f64>() / ap.len() as f64;
    Ok(DetectionMetrics {
        ate: mean(&tp_dist),
        aoe: mean(&tp_yaw),
        ap,
        ap_per_category,
        mean_ap,
        num_predictions: preds.len(),
        num_ground_truths: gts.len(),
        foreground_recall: None,
    })
}
