//! Identity F1 and CLEAR-MOT identity switches.

use serde::{Deserialize, Serialize};

use super::{check_pair, mask_iou, tube_of, MaskKind};
use crate::assignment::max_weight_matching;
use crate::error::{Error, Result};
use crate::pipeline::TrackSet;

/// Per-frame IoU needed for a ground-truth/prediction correspondence.
pub const ID_IOU_THRESHOLD: f64 = 0.5;

/// Bonus that makes continuing the previous frame's correspondence win over
/// any IoU difference.
const CONTINUITY_BONUS: f64 = 1000.0;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdentityStats {
    pub idtp: usize,
    pub idfp: usize,
    pub idfn: usize,
    pub ids: usize,
}

impl IdentityStats {
    pub fn add(&mut self, o: &IdentityStats) {
        self.idtp += o.idtp;
        self.idfp += o.idfp;
        self.idfn += o.idfn;
        self.ids += o.ids;
    }

    /// `1` when there is nothing to match on either side.
    pub fn idf1(&self) -> f64 {
        let denom = 2 * self.idtp + self.idfp + self.idfn;
        if denom == 0 {
            1.0
        } else {
            2.0 * self.idtp as f64 / denom as f64
        }
    }
}

/// Per-frame IoU matrix `[gt][pred]` where both masks are non-empty, else 0.
fn frame_ious(pred: &TrackSet, gt: &TrackSet, kind: MaskKind, t: usize) -> Vec<Vec<f64>> {
    (0..gt.tracks.len())
        .map(|i| (0..pred.tracks.len()).map(|j| mask_iou(&tube_of(gt, i, kind)[t], &tube_of(pred, j, kind)[t])).collect())
        .collect()
}

pub fn identity_stats(pred: &TrackSet, gt: &TrackSet, kind: MaskKind) -> Result<IdentityStats> {
    check_pair(pred, gt)?;
    let (ng, np) = (gt.tracks.len(), pred.tracks.len());
    let present = |s: &TrackSet, k: usize, t: usize| !tube_of(s, k, kind)[t].is_empty();
    let gt_dets: usize = (0..ng).map(|i| (0..gt.n_frames).filter(|&t| present(gt, i, t)).count()).sum();
    let pr_dets: usize = (0..np).map(|j| (0..pred.n_frames).filter(|&t| present(pred, j, t)).count()).sum();

    let mut overlap = vec![vec![0.0; np]; ng];
    let mut ids = 0;
    let mut last_match: Vec<Option<usize>> = vec![None; ng];
    let mut prev_frame: Vec<Option<usize>> = vec![None; ng];
    for t in 0..gt.n_frames {
        let iou = frame_ious(pred, gt, kind, t);
        let mut score = vec![vec![0.0; np]; ng];
        for i in 0..ng {
            for j in 0..np {
                if iou[i][j] >= ID_IOU_THRESHOLD - f64::EPSILON {
                    overlap[i][j] += 1.0;
                    score[i][j] = iou[i][j] + if prev_frame[i] == Some(j) { CONTINUITY_BONUS } else { 0.0 };
                }
            }
        }
        let matched = if ng == 0 { Vec::new() } else { max_weight_matching(&score)? };
        for (i, m) in matched.iter().enumerate() {
            if let Some(j) = *m {
                if last_match[i].is_some_and(|prev| prev != j) {
                    ids += 1;
                }
                last_match[i] = Some(j);
            }
        }
        prev_frame = matched;
    }
    let global = if ng == 0 { Vec::new() } else { max_weight_matching(&overlap)? };
    let idtp = global.iter().enumerate().filter_map(|(i, j)| j.map(|j| overlap[i][j] as usize)).sum::<usize>();
    Ok(IdentityStats { idtp, idfp: pr_dets - idtp, idfn: gt_dets - idtp, ids })
}

/// Dataset IDF1 and total identity switches.
pub fn idf1_ids(preds: &[TrackSet], gts: &[TrackSet], kind: MaskKind) -> Result<(f64, usize)> {
    if preds.len() != gts.len() {
        return Err(Error::InvalidInput(format!("{} prediction sets for {} videos", preds.len(), gts.len())));
    }
    let mut total = IdentityStats::default();
    for (p, g) in preds.iter().zip(gts) {
        total.add(&identity_stats(p, g, kind)?);
    }
    Ok((total.idf1(), total.ids))
}
