//! Video instance segmentation and tracking metrics over [`TrackSet`]s.
//!
//! Every metric works on one kind of mask at a time (visible or amodal), so
//! [`evaluate`] runs two passes. Per-video statistics are pooled across the
//! dataset before the final scores are formed.

mod ap;
mod hota;
mod identity;
mod report;

use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::pipeline::TrackSet;

pub use ap::{video_ap_ar, ApResult, ThresholdStats, IOU_THRESHOLDS};
pub use hota::{hota, hota_stats, HotaMode, HotaStats, ALPHAS};
pub use identity::{identity_stats, idf1_ids, IdentityStats, ID_IOU_THRESHOLD};
pub use report::{evaluate, EvalReport, MaskMetrics, REPORT_SCHEMA};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskKind {
    Visible,
    Amodal,
}

pub(crate) fn tube_of(set: &TrackSet, track: usize, kind: MaskKind) -> &[Mask] {
    let t = &set.tracks[track];
    match kind {
        MaskKind::Visible => &t.visible,
        MaskKind::Amodal => &t.amodal,
    }
}

/// Spatiotemporal IoU: summed intersections over summed unions. Two empty
/// tubes score 1.
pub fn tube_iou(a: &[Mask], b: &[Mask]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("tube lengths differ: {} vs {}", a.len(), b.len())));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (x, y) in a.iter().zip(b) {
        inter += x.intersection_count(y);
        union += x.union_count(y);
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// IoU of two masks; `0` when both are empty.
pub(crate) fn mask_iou(a: &Mask, b: &Mask) -> f64 {
    let union = a.union_count(b);
    if union == 0 {
        0.0
    } else {
        a.intersection_count(b) as f64 / union as f64
    }
}

pub(crate) fn check_pair(pred: &TrackSet, gt: &TrackSet) -> Result<()> {
    if (pred.n_frames, pred.height, pred.width) != (gt.n_frames, gt.height, gt.width) {
        return Err(Error::Shape(format!(
            "prediction {}x{}x{} does not match ground truth {}x{}x{}",
            pred.n_frames, pred.height, pred.width, gt.n_frames, gt.height, gt.width
        )));
    }
    pred.validate()?;
    gt.validate()
}


#[cfg(test)]
mod tests {
    use super::*;

    fn row(bits: &[u8]) -> Mask {
        Mask::from_bits(1, bits.len(), bits.iter().map(|b| *b == 1).collect())
    }

    #[test]
    fn tube_iou_cases() {
        let a = vec![row(&[1, 1, 0]), row(&[0, 1, 1])];
        assert_eq!(tube_iou(&a, &a).unwrap(), 1.0);
        assert_eq!(tube_iou(&a, &[row(&[0, 0, 1]), row(&[1, 0, 0])]).unwrap(), 0.0);
        let p = [row(&[1, 1, 0])];
        let g = [row(&[0, 1, 1])];
        assert!((tube_iou(&p, &g).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        let e = [Mask::empty(1, 3)];
        assert_eq!(tube_iou(&e, &e).unwrap(), 1.0);
        assert_eq!(tube_iou(&e, &g).unwrap(), 0.0);
        assert!(tube_iou(&a, &p).is_err());
    }

    #[test]
    fn tube_iou_is_symmetric() {
        let a = vec![row(&[1, 1, 0, 1]), row(&[0, 0, 1, 1])];
        let b = vec![row(&[1, 0, 0, 1]), row(&[1, 1, 1, 0])];
        assert_eq!(tube_iou(&a, &b).unwrap(), tube_iou(&b, &a).unwrap());
    }
}
