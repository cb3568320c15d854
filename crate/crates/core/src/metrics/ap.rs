//! COCO-style average precision and recall over mask tubes.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{check_pair, tube_iou, tube_of, MaskKind};
use crate::error::{Error, Result};
use crate::pipeline::TrackSet;

/// Tube IoU thresholds 0.50, 0.55, ..., 0.95.
pub const IOU_THRESHOLDS: [u32; 10] = [50, 55, 60, 65, 70, 75, 80, 85, 90, 95];

const AP_MAX_DETS: usize = 100;
const AR_MAX_DETS: usize = 10;

fn threshold(percent: u32) -> f64 {
    percent as f64 / 100.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdStats {
    /// Mean over categories of the interpolated precision at this threshold.
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApResult {
    pub ap: f64,
    pub ar: f64,
    /// Keyed by threshold formatted as `"0.50"`.
    pub per_threshold: BTreeMap<String, ThresholdStats>,
}

/// 101-point interpolated precision of a ranked list of hit flags.
pub(crate) fn interpolated_ap(hits: &[bool], n_gt: usize) -> f64 {
    let mut tp = 0usize;
    let mut precision = Vec::with_capacity(hits.len());
    let mut recall = Vec::with_capacity(hits.len());
    for (k, &h) in hits.iter().enumerate() {
        tp += h as usize;
        precision.push(tp as f64 / (k + 1) as f64);
        recall.push(tp as f64 / n_gt as f64);
    }
    for i in (1..precision.len()).rev() {
        if precision[i] > precision[i - 1] {
            precision[i - 1] = precision[i];
        }
    }
    let mut sum = 0.0;
    for r in 0..=100 {
        let level = r as f64 / 100.0;
        let idx = recall.partition_point(|&x| x < level);
        if idx < precision.len() {
            sum += precision[idx];
        }
    }
    sum / 101.0
}

struct Det {
    video: usize,
    track: usize,
    score: f64,
    id: usize,
}

/// Greedy score-ordered matching for one category and threshold; returns
/// the hit flags in global rank order and the number of ground truths.
fn rank_hits(
    preds: &[TrackSet],
    gts: &[TrackSet],
    ious: &[Vec<Vec<f64>>],
    category: usize,
    thr: f64,
    max_dets: usize,
) -> (Vec<bool>, usize) {
    let n_gt = gts.iter().map(|g| g.tracks.iter().filter(|t| t.class == category).count()).sum();
    let mut dets = Vec::new();
    for (v, p) in preds.iter().enumerate() {
        let mut mine: Vec<Det> = p
            .tracks
            .iter()
            .enumerate()
            .filter(|(_, t)| t.class == category)
            .map(|(k, t)| Det { video: v, track: k, score: t.score, id: t.id })
            .collect();
        mine.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.id.cmp(&b.id)));
        mine.truncate(max_dets);
        dets.extend(mine);
    }
    let mut hit = vec![false; dets.len()];
    let mut used: Vec<Vec<bool>> = gts.iter().map(|g| vec![false; g.tracks.len()]).collect();
    // matching is per video in score order, which the per-video sort gives
    for (d, det) in dets.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (i, gt) in gts[det.video].tracks.iter().enumerate() {
            if gt.class != category || used[det.video][i] {
                continue;
            }
            let iou = ious[det.video][det.track][i];
            if iou >= thr && best.is_none_or(|(_, b)| iou > b) {
                best = Some((i, iou));
            }
        }
        if let Some((i, _)) = best {
            used[det.video][i] = true;
            hit[d] = true;
        }
    }
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        let (x, y) = (&dets[a], &dets[b]);
        y.score.total_cmp(&x.score).then(x.video.cmp(&y.video)).then(x.id.cmp(&y.id))
    });
    (order.into_iter().map(|d| hit[d]).collect(), n_gt)
}

/// Average precision and recall over categories and IoU thresholds for a
/// dataset of videos (`preds[v]` pairs with `gts[v]`).
pub fn video_ap_ar(preds: &[TrackSet], gts: &[TrackSet], kind: MaskKind) -> Result<ApResult> {
    if preds.len() != gts.len() {
        return Err(Error::InvalidInput(format!("{} prediction sets for {} videos", preds.len(), gts.len())));
    }
    let mut ious = Vec::with_capacity(preds.len());
    for (p, g) in preds.iter().zip(gts) {
        check_pair(p, g)?;
        let m = (0..p.tracks.len())
            .map(|k| (0..g.tracks.len()).map(|i| tube_iou(tube_of(p, k, kind), tube_of(g, i, kind))).collect())
            .collect::<Result<Vec<Vec<f64>>>>()?;
        ious.push(m);
    }
    let categories: BTreeSet<usize> = gts.iter().flat_map(|g| g.tracks.iter().map(|t| t.class)).collect();
    let mut per_threshold = BTreeMap::new();
    let (mut ap_sum, mut ar_sum) = (0.0, 0.0);
    for &pct in &IOU_THRESHOLDS {
        let thr = threshold(pct);
        let (mut p_sum, mut r_sum) = (0.0, 0.0);
        for &c in &categories {
            let (hits, n_gt) = rank_hits(preds, gts, &ious, c, thr, AP_MAX_DETS);
            p_sum += interpolated_ap(&hits, n_gt);
            let (hits, n_gt) = rank_hits(preds, gts, &ious, c, thr, AR_MAX_DETS);
            r_sum += hits.iter().filter(|h| **h).count() as f64 / n_gt as f64;
        }
        let nc = categories.len().max(1) as f64;
        per_threshold.insert(format!("{thr:.2}"), ThresholdStats { precision: p_sum / nc, recall: r_sum / nc });
        ap_sum += p_sum;
        ar_sum += r_sum;
    }
    let n = (categories.len() * IOU_THRESHOLDS.len()).max(1) as f64;
    Ok(ApResult { ap: ap_sum / n, ar: ar_sum / n, per_threshold })
}
