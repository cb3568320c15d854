//! Brute-force reference implementations shared by the integration tests.
//! They follow the metric definitions directly and enumerate every
//! candidate matching instead of calling the production solvers.

#![allow(dead_code)]

use amodal_vis::mask::Mask;
use amodal_vis::pipeline::{Track, TrackSet};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Every injective map from `0..n` into `0..m`, in lexicographic order.
pub fn injective_maps(n: usize, m: usize) -> Vec<Vec<usize>> {
    fn rec(n: usize, m: usize, cur: &mut Vec<usize>, used: &mut Vec<bool>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == n {
            out.push(cur.clone());
            return;
        }
        for j in 0..m {
            if !used[j] {
                used[j] = true;
                cur.push(j);
                rec(n, m, cur, used, out);
                cur.pop();
                used[j] = false;
            }
        }
    }
    let mut out = Vec::new();
    if n <= m {
        rec(n, m, &mut Vec::new(), &mut vec![false; m], &mut out);
    }
    out
}

/// Minimum total cost over all injective row-to-column maps, with the
/// lexicographically smallest map winning exact ties.
pub fn brute_force_assignment(cost: &[Vec<f64>]) -> Vec<usize> {
    let m = cost.first().map_or(0, Vec::len);
    let mut best: Option<(f64, Vec<usize>)> = None;
    for map in injective_maps(cost.len(), m) {
        let total: f64 = map.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
        if best.as_ref().is_none_or(|(b, _)| total < *b) {
            best = Some((total, map));
        }
    }
    best.map(|(_, m)| m).unwrap_or_default()
}

/// Random track set of small rectangles; each track skips a frame with
/// probability 1/4.
pub fn random_set(rng: &mut ChaCha8Rng, n_tracks: usize, frames: usize, size: usize, n_classes: usize) -> TrackSet {
    let mut set = TrackSet::empty(frames, size, size);
    for k in 0..n_tracks {
        let tube: Vec<Mask> = (0..frames)
            .map(|_| {
                if rng.gen_bool(0.25) {
                    return Mask::empty(size, size);
                }
                let (y0, x0) = (rng.gen_range(0..size / 2), rng.gen_range(0..size / 2));
                let (h, w) = (rng.gen_range(1..=size / 2), rng.gen_range(1..=size / 2));
                Mask::from_fn(size, size, |y, x| (y0..y0 + h).contains(&y) && (x0..x0 + w).contains(&x))
            })
            .collect();
        let amodal = tube.iter().map(|m| m.union(&m.bounding_box())).collect();
        set.tracks.push(Track {
            id: 10 * k + rng.gen_range(0..10),
            class: rng.gen_range(0..n_classes),
            score: rng.gen_range(1..=20) as f64 / 20.0,
            visible: tube,
            amodal,
        });
    }
    set
}

/// Perturbs a ground-truth set into a plausible prediction: some tracks are
/// dropped, some masks shifted, ids permuted.
pub fn noisy_copy(rng: &mut ChaCha8Rng, gt: &TrackSet) -> TrackSet {
    let mut out = TrackSet::empty(gt.n_frames, gt.height, gt.width);
    for (k, t) in gt.tracks.iter().enumerate() {
        if rng.gen_bool(0.2) {
            continue;
        }
        let shift = |m: &Mask, dy: usize| Mask::from_fn(m.height(), m.width(), |y, x| y >= dy && m.get(y - dy, x));
        let dy = rng.gen_range(0..2);
        out.tracks.push(Track {
            id: 100 + (k * 7) % 11,
            class: t.class,
            score: rng.gen_range(1..=20) as f64 / 20.0,
            visible: t.visible.iter().map(|m| shift(m, dy)).collect(),
            amodal: t.amodal.iter().map(|m| shift(m, dy)).collect(),
        });
    }
    out
}

fn iou(a: &Mask, b: &Mask) -> f64 {
    let (i, u) = (a.intersection_count(b), a.union_count(b));
    if u == 0 {
        0.0
    } else {
        i as f64 / u as f64
    }
}

fn tube_iou(a: &[Mask], b: &[Mask]) -> f64 {
    let i: usize = a.iter().zip(b).map(|(x, y)| x.intersection_count(y)).sum();
    let u: usize = a.iter().zip(b).map(|(x, y)| x.union_count(y)).sum();
    if u == 0 {
        1.0
    } else {
        i as f64 / u as f64
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Visible,
    Amodal,
}

fn tube(t: &Track, kind: Kind) -> &[Mask] {
    match kind {
        Kind::Visible => &t.visible,
        Kind::Amodal => &t.amodal,
    }
}

/// Average precision and recall from their definitions: precision at each
/// recall level is the best precision reached at that recall or beyond.
pub fn ap_ar(preds: &[TrackSet], gts: &[TrackSet], kind: Kind) -> (f64, f64) {
    let mut classes: Vec<usize> = gts.iter().flat_map(|g| g.tracks.iter().map(|t| t.class)).collect();
    classes.sort_unstable();
    classes.dedup();
    if classes.is_empty() {
        return (0.0, 0.0);
    }
    let (mut ap, mut ar) = (0.0, 0.0);
    for pct in (50..=95).step_by(5) {
        let thr = pct as f64 / 100.0;
        for &c in &classes {
            let n_gt = gts.iter().map(|g| g.tracks.iter().filter(|t| t.class == c).count()).sum::<usize>() as f64;
            let ranked = |limit: usize| -> Vec<(f64, usize, usize, bool)> {
                let mut all = Vec::new();
                for (v, (p, g)) in preds.iter().zip(gts).enumerate() {
                    let mut dets: Vec<&Track> = p.tracks.iter().filter(|t| t.class == c).collect();
                    dets.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap().then(a.id.cmp(&b.id)));
                    dets.truncate(limit);
                    let mut taken = vec![false; g.tracks.len()];
                    for d in dets {
                        let mut pick: Option<(usize, f64)> = None;
                        for (i, gt) in g.tracks.iter().enumerate() {
                            let s = tube_iou(tube(d, kind), tube(gt, kind));
                            if gt.class == c && !taken[i] && s >= thr && pick.is_none_or(|(_, b)| s > b) {
                                pick = Some((i, s));
                            }
                        }
                        if let Some((i, _)) = pick {
                            taken[i] = true;
                        }
                        all.push((d.score, v, d.id, pick.is_some()));
                    }
                }
                all.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
                all
            };
            let list = ranked(100);
            let mut curve = Vec::new();
            let mut tp = 0.0;
            for (k, d) in list.iter().enumerate() {
                if d.3 {
                    tp += 1.0;
                }
                curve.push((tp / n_gt, tp / (k + 1) as f64));
            }
            let mut area = 0.0;
            for r in 0..=100 {
                let level = r as f64 / 100.0;
                area += curve.iter().filter(|(rec, _)| *rec >= level).map(|(_, p)| *p).fold(0.0, f64::max);
            }
            ap += area / 101.0;
            ar += ranked(10).iter().filter(|d| d.3).count() as f64 / n_gt;
        }
    }
    let n = (classes.len() * 10) as f64;
    (ap / n, ar / n)
}

/// HOTA of one video at one alpha, with per-frame matchings found by
/// enumeration.
pub fn hota_alpha(pred: &TrackSet, gt: &TrackSet, kind: Kind, boxes: bool, alpha: f64) -> (f64, f64, f64, f64) {
    let det = |s: &TrackSet, k: usize, t: usize| -> Option<Mask> {
        let m = &tube(&s.tracks[k], kind)[t];
        (!m.is_empty()).then(|| if boxes { m.bounding_box() } else { m.clone() })
    };
    let (ng, np, nf) = (gt.tracks.len(), pred.tracks.len(), gt.n_frames);
    let sim = |i: usize, j: usize, t: usize| match (det(gt, i, t), det(pred, j, t)) {
        (Some(a), Some(b)) => iou(&a, &b),
        _ => 0.0,
    };
    let present_g = |i: usize| (0..nf).filter(|&t| det(gt, i, t).is_some()).count() as f64;
    let present_p = |j: usize| (0..nf).filter(|&t| det(pred, j, t).is_some()).count() as f64;
    let mut align = vec![vec![0.0; np]; ng];
    for i in 0..ng {
        for j in 0..np {
            let mut pot = 0.0;
            for t in 0..nf {
                if det(gt, i, t).is_none() || det(pred, j, t).is_none() {
                    continue;
                }
                let s = sim(i, j, t);
                let row: f64 = (0..np).map(|b| sim(i, b, t)).sum();
                let col: f64 = (0..ng).map(|a| sim(a, j, t)).sum();
                if row + col - s > f64::EPSILON {
                    pot += s / (row + col - s);
                }
            }
            align[i][j] = pot / (present_g(i) + present_p(j) - pot);
        }
    }
    let mut tps = Vec::new();
    let (mut fn_, mut fp) = (0.0, 0.0);
    for t in 0..nf {
        let gi: Vec<usize> = (0..ng).filter(|&i| det(gt, i, t).is_some()).collect();
        let pj: Vec<usize> = (0..np).filter(|&j| det(pred, j, t).is_some()).collect();
        let score = |a: usize, b: usize| align[gi[a]][pj[b]] * sim(gi[a], pj[b], t);
        let mut best: (f64, Vec<usize>) = (f64::NEG_INFINITY, Vec::new());
        for m in injective_maps(gi.len(), pj.len() + gi.len()) {
            // pairs with no positive score count as unmatched
            let canon: Vec<usize> =
                m.iter().enumerate().map(|(a, &b)| if b < pj.len() && score(a, b) > 0.0 { b } else { usize::MAX }).collect();
            let v: f64 = canon.iter().enumerate().filter(|(_, &b)| b != usize::MAX).map(|(a, &b)| score(a, b)).sum();
            if v > best.0 + 1e-9 || ((v - best.0).abs() <= 1e-9 && canon < best.1) {
                best = (v, canon);
            }
        }
        let mut n = 0;
        for (a, &b) in best.1.iter().enumerate() {
            if b != usize::MAX && sim(gi[a], pj[b], t) >= alpha - f64::EPSILON {
                tps.push((gi[a], pj[b]));
                n += 1;
            }
        }
        fn_ += (gi.len() - n) as f64;
        fp += (pj.len() - n) as f64;
    }
    let mut ass = 0.0;
    for &(i, j) in &tps {
        let tpa = tps.iter().filter(|&&c| c == (i, j)).count() as f64;
        ass += tpa / (present_g(i) + present_p(j) - tpa);
    }
    (tps.len() as f64, fn_, fp, ass)
}

/// Dataset HOTA with counts pooled over videos per alpha.
pub fn hota(preds: &[TrackSet], gts: &[TrackSet], kind: Kind, boxes: bool) -> f64 {
    let mut total = 0.0;
    for pct in (5..=95).step_by(5) {
        let (mut tp, mut fn_, mut fp, mut ass) = (0.0, 0.0, 0.0, 0.0);
        for (p, g) in preds.iter().zip(gts) {
            let s = hota_alpha(p, g, kind, boxes, pct as f64 / 100.0);
            tp += s.0;
            fn_ += s.1;
            fp += s.2;
            ass += s.3;
        }
        total += if tp + fn_ + fp == 0.0 {
            1.0
        } else if tp == 0.0 {
            0.0
        } else {
            ((tp / (tp + fn_ + fp)) * (ass / tp)).sqrt()
        };
    }
    total / 19.0
}

/// `(idtp, idfp, idfn)` with the identity matching found by enumeration.
pub fn identity_counts(pred: &TrackSet, gt: &TrackSet, kind: Kind) -> (usize, usize, usize) {
    let (ng, np, nf) = (gt.tracks.len(), pred.tracks.len(), gt.n_frames);
    let agree = |i: usize, j: usize| {
        (0..nf).filter(|&t| iou(&tube(&gt.tracks[i], kind)[t], &tube(&pred.tracks[j], kind)[t]) >= 0.5).count()
    };
    let idtp = injective_maps(ng, np + ng)
        .iter()
        .map(|m| m.iter().enumerate().filter(|(_, &j)| j < np).map(|(i, &j)| agree(i, j)).sum::<usize>())
        .max()
        .unwrap_or(0);
    let dets = |s: &TrackSet| s.tracks.iter().map(|t| tube(t, kind).iter().filter(|m| !m.is_empty()).count()).sum::<usize>();
    (idtp, dets(pred) - idtp, dets(gt) - idtp)
}

/// Identity switches by frame-by-frame replay: still-valid correspondences
/// from the previous frame are kept, the rest are matched for maximum total
/// IoU with lexicographic tie-breaking.
pub fn id_switches(pred: &TrackSet, gt: &TrackSet, kind: Kind) -> usize {
    let (ng, np) = (gt.tracks.len(), pred.tracks.len());
    let mut last: Vec<Option<usize>> = vec![None; ng];
    let mut prev: Vec<Option<usize>> = vec![None; ng];
    let mut ids = 0;
    for t in 0..gt.n_frames {
        let s = |i: usize, j: usize| iou(&tube(&gt.tracks[i], kind)[t], &tube(&pred.tracks[j], kind)[t]);
        let valid = |i: usize, j: usize| s(i, j) >= 0.5;
        let mut cur: Vec<Option<usize>> = (0..ng).map(|i| prev[i].filter(|&j| valid(i, j))).collect();
        let free_g: Vec<usize> = (0..ng).filter(|&i| cur[i].is_none()).collect();
        let free_p: Vec<usize> = (0..np).filter(|&j| !cur.contains(&Some(j))).collect();
        let mut best: (f64, Vec<usize>) = (f64::NEG_INFINITY, Vec::new());
        for m in injective_maps(free_g.len(), free_p.len() + free_g.len()) {
            let canon: Vec<usize> = m
                .iter()
                .enumerate()
                .map(|(a, &b)| if b < free_p.len() && valid(free_g[a], free_p[b]) { free_p[b] } else { usize::MAX })
                .collect();
            let v: f64 = canon.iter().enumerate().filter(|(_, &j)| j != usize::MAX).map(|(a, &j)| s(free_g[a], j)).sum();
            if v > best.0 + 1e-9 || ((v - best.0).abs() <= 1e-9 && canon < best.1) {
                best = (v, canon);
            }
        }
        for (a, &j) in best.1.iter().enumerate() {
            if j != usize::MAX {
                cur[free_g[a]] = Some(j);
            }
        }
        for i in 0..ng {
            if let Some(j) = cur[i] {
                if last[i].is_some_and(|l| l != j) {
                    ids += 1;
                }
                last[i] = Some(j);
            }
        }
        prev = cur;
    }
    ids
}

/// Dataset IDF1 and switch count.
pub fn idf1_ids(preds: &[TrackSet], gts: &[TrackSet], kind: Kind) -> (f64, usize) {
    let (mut tp, mut fp, mut fn_, mut ids) = (0, 0, 0, 0);
    for (p, g) in preds.iter().zip(gts) {
        let c = identity_counts(p, g, kind);
        tp += c.0;
        fp += c.1;
        fn_ += c.2;
        ids += id_switches(p, g, kind);
    }
    let denom = 2 * tp + fp + fn_;
    (if denom == 0 { 1.0 } else { 2.0 * tp as f64 / denom as f64 }, ids)
}
