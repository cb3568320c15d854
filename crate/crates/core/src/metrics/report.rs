use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{hota, idf1_ids, video_ap_ar, HotaMode, MaskKind, ThresholdStats, ID_IOU_THRESHOLD};
use crate::error::Result;
use crate::pipeline::TrackSet;

pub const REPORT_SCHEMA: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskMetrics {
    pub ap: f64,
    pub ar: f64,
    /// HOTA on mask IoU.
    pub hota: f64,
    /// HOTA on IoU of tight bounding boxes.
    pub hota_box: f64,
    pub idf1: f64,
    pub ids: usize,
    pub per_threshold: BTreeMap<String, ThresholdStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub videos: usize,
    pub id_iou_threshold: f64,
    pub visible: MaskMetrics,
    pub amodal: MaskMetrics,
}

fn metrics(preds: &[TrackSet], gts: &[TrackSet], kind: MaskKind) -> Result<MaskMetrics> {
    let ap = video_ap_ar(preds, gts, kind)?;
    let (idf1, ids) = idf1_ids(preds, gts, kind)?;
    Ok(MaskMetrics {
        ap: ap.ap,
        ar: ap.ar,
        hota: hota(preds, gts, kind, HotaMode::Mask)?,
        hota_box: hota(preds, gts, kind, HotaMode::Box)?,
        idf1,
        ids,
        per_threshold: ap.per_threshold,
    })
}

/// Visible and amodal metric passes over a dataset.
pub fn evaluate(preds: &[TrackSet], gts: &[TrackSet]) -> Result<EvalReport> {
    Ok(EvalReport {
        schema_version: REPORT_SCHEMA,
        videos: gts.len(),
        id_iou_threshold: ID_IOU_THRESHOLD,
        visible: metrics(preds, gts, MaskKind::Visible)?,
        amodal: metrics(preds, gts, MaskKind::Amodal)?,
    })
}

impl EvalReport {
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<8} {:>7} {:>7} {:>7} {:>9} {:>7} {:>5}", "masks", "AP", "AR", "HOTA", "HOTA-box", "IDF1", "IDs");
        for (name, m) in [("visible", &self.visible), ("amodal", &self.amodal)] {
            let _ = writeln!(
                s,
                "{:<8} {:>7.4} {:>7.4} {:>7.4} {:>9.4} {:>7.4} {:>5}",
                name, m.ap, m.ar, m.hota, m.hota_box, m.idf1, m.ids
            );
        }
        let _ = writeln!(s, "videos: {}  identity IoU threshold: {}", self.videos, self.id_iou_threshold);
        s
    }

    /// Largest absolute difference between the scalar scores of two reports.
    pub fn max_abs_diff(&self, other: &EvalReport) -> f64 {
        let scalars = |m: &MaskMetrics| {
            let mut v = vec![m.ap, m.ar, m.hota, m.hota_box, m.idf1, m.ids as f64];
            v.extend(m.per_threshold.values().flat_map(|t| [t.precision, t.recall]));
            v
        };
        let a: Vec<f64> = scalars(&self.visible).into_iter().chain(scalars(&self.amodal)).collect();
        let b: Vec<f64> = scalars(&other.visible).into_iter().chain(scalars(&other.amodal)).collect();
        if a.len() != b.len() {
            return f64::INFINITY;
        }
        a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }
}
