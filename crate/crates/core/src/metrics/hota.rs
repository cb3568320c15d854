//! Higher Order Tracking Accuracy.
//!
//! Per video, a global alignment score between every ground-truth and
//! predicted identity weights a per-frame optimal matching; the matched
//! pairs give detection counts and association accuracy at each
//! localization threshold `alpha`. Scores are averaged over the alpha grid.

use serde::{Deserialize, Serialize};

use super::{check_pair, mask_iou, tube_of, MaskKind};
use crate::assignment::max_weight_matching;
use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::pipeline::TrackSet;

/// Localization thresholds 0.05, 0.10, ..., 0.95 in percent.
pub const ALPHAS: [u32; 19] = [5, 10, 15, 20, 25, 30, 35, 40, 45, 50, 55, 60, 65, 70, 75, 80, 85, 90, 95];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HotaMode {
    Mask,
    /// Tight bounding boxes of the masks.
    Box,
}

/// Poolable HOTA counts for one alpha.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct HotaStats {
    pub tp: f64,
    pub fn_: f64,
    pub fp: f64,
    /// Sum over true positives of their association accuracy.
    pub ass_sum: f64,
}

impl HotaStats {
    pub fn add(&mut self, other: &HotaStats) {
        self.tp += other.tp;
        self.fn_ += other.fn_;
        self.fp += other.fp;
        self.ass_sum += other.ass_sum;
    }

    pub fn det_a(&self) -> f64 {
        self.tp / (self.tp + self.fn_ + self.fp).max(1.0)
    }

    pub fn ass_a(&self) -> f64 {
        self.ass_sum / self.tp.max(1.0)
    }

    /// Perfect when there is nothing to detect and nothing was predicted.
    pub fn hota(&self) -> f64 {
        if self.tp + self.fn_ + self.fp == 0.0 {
            return 1.0;
        }
        (self.det_a() * self.ass_a()).sqrt()
    }
}

/// Per-frame detections `(track index, mask)` of non-empty masks.
fn detections(set: &TrackSet, kind: MaskKind, mode: HotaMode) -> Vec<Vec<(usize, Mask)>> {
    (0..set.n_frames)
        .map(|t| {
            (0..set.tracks.len())
                .filter_map(|k| {
                    let m = &tube_of(set, k, kind)[t];
                    (!m.is_empty()).then(|| {
                        let m = match mode {
                            HotaMode::Mask => m.clone(),
                            HotaMode::Box => m.bounding_box(),
                        };
                        (k, m)
                    })
                })
                .collect()
        })
        .collect()
}

/// HOTA counts of one video for every alpha in [`ALPHAS`].
pub fn hota_stats(pred: &TrackSet, gt: &TrackSet, kind: MaskKind, mode: HotaMode) -> Result<Vec<HotaStats>> {
    check_pair(pred, gt)?;
    let (ng, np) = (gt.tracks.len(), pred.tracks.len());
    let gd = detections(gt, kind, mode);
    let pd = detections(pred, kind, mode);
    let sims: Vec<Vec<Vec<f64>>> = gd
        .iter()
        .zip(&pd)
        .map(|(g, p)| g.iter().map(|(_, gm)| p.iter().map(|(_, pm)| mask_iou(gm, pm)).collect()).collect())
        .collect();

    let mut potential = vec![vec![0.0; np]; ng];
    let mut gt_count = vec![0.0; ng];
    let mut pr_count = vec![0.0; np];
    for ((g, p), sim) in gd.iter().zip(&pd).zip(&sims) {
        let row_sum: Vec<f64> = sim.iter().map(|r| r.iter().sum()).collect();
        let col_sum: Vec<f64> = (0..p.len()).map(|b| sim.iter().map(|r| r[b]).sum()).collect();
        for (a, (gi, _)) in g.iter().enumerate() {
            for (b, (pi, _)) in p.iter().enumerate() {
                let denom = row_sum[a] + col_sum[b] - sim[a][b];
                if denom > f64::EPSILON {
                    potential[*gi][*pi] += sim[a][b] / denom;
                }
            }
        }
        g.iter().for_each(|(gi, _)| gt_count[*gi] += 1.0);
        p.iter().for_each(|(pi, _)| pr_count[*pi] += 1.0);
    }
    let alignment: Vec<Vec<f64>> = (0..ng)
        .map(|i| (0..np).map(|j| potential[i][j] / (gt_count[i] + pr_count[j] - potential[i][j])).collect())
        .collect();

    let mut stats = vec![HotaStats::default(); ALPHAS.len()];
    let mut matches = vec![vec![vec![0.0; np]; ng]; ALPHAS.len()];
    for ((g, p), sim) in gd.iter().zip(&pd).zip(&sims) {
        let score: Vec<Vec<f64>> = g
            .iter()
            .enumerate()
            .map(|(a, (gi, _))| p.iter().enumerate().map(|(b, (pi, _))| alignment[*gi][*pi] * sim[a][b]).collect())
            .collect();
        let assignment = if g.is_empty() { Vec::new() } else { max_weight_matching(&score)? };
        for (ai, &alpha) in ALPHAS.iter().enumerate() {
            let alpha = alpha as f64 / 100.0;
            let mut n = 0.0;
            for (a, b) in assignment.iter().enumerate().filter_map(|(a, b)| b.map(|b| (a, b))) {
                if sim[a][b] >= alpha - f64::EPSILON {
                    n += 1.0;
                    matches[ai][g[a].0][p[b].0] += 1.0;
                }
            }
            let s = &mut stats[ai];
            s.tp += n;
            s.fn_ += g.len() as f64 - n;
            s.fp += p.len() as f64 - n;
        }
    }
    for (ai, m) in matches.iter().enumerate() {
        let mut sum = 0.0;
        for i in 0..ng {
            for j in 0..np {
                if m[i][j] > 0.0 {
                    sum += m[i][j] * m[i][j] / (gt_count[i] + pr_count[j] - m[i][j]);
                }
            }
        }
        stats[ai].ass_sum = sum;
    }
    Ok(stats)
}

/// Dataset HOTA: counts pooled over videos per alpha, scores averaged over
/// the alpha grid.
pub fn hota(preds: &[TrackSet], gts: &[TrackSet], kind: MaskKind, mode: HotaMode) -> Result<f64> {
    if preds.len() != gts.len() {
        return Err(Error::InvalidInput(format!("{} prediction sets for {} videos", preds.len(), gts.len())));
    }
    let mut pooled = vec![HotaStats::default(); ALPHAS.len()];
    for (p, g) in preds.iter().zip(gts) {
        for (acc, s) in pooled.iter_mut().zip(hota_stats(p, g, kind, mode)?) {
            acc.add(&s);
        }
    }
    Ok(pooled.iter().map(HotaStats::hota).sum::<f64>() / ALPHAS.len() as f64)
}
