//! Greedy matching, average precision, forecast error, trajectory collision
//! rate and binned breakdowns.

use serde::{Deserialize, Serialize};

use super::iou_unchecked;
use crate::geom::OrientedBox;
use crate::pnp::Outputs;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub iou_thresholds: Vec<f64>,
    pub recall_target: f64,
    /// IoU used to pick true positives for forecast error and TCR.
    pub forecast_match_iou: f64,
    pub collision_tau: f64,
    pub horizons: Vec<f64>,
    pub interval: f64,
    /// Inclusive lower edges; each bin runs to the next edge, exclusive.
    pub point_bins: Vec<usize>,
    pub speed_bins: Vec<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_thresholds: vec![0.5, 0.7],
            recall_target: 0.9,
            forecast_match_iou: 0.5,
            collision_tau: 0.01,
            horizons: vec![1.0, 2.0, 3.0],
            interval: 0.5,
            point_bins: vec![0, 1, 7, 31],
            speed_bins: vec![0.0, 0.5, 5.0, 10.0],
        }
    }
}

/// Ground truth in the receiver frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalLabel {
    pub bbox: OrientedBox,
    pub waypoints: Vec<(f64, f64)>,
    /// Returns on the actor in the receiver's own sweeps.
    pub points: usize,
    pub speed: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalFrame {
    pub detections: Outputs,
    pub labels: Vec<EvalLabel>,
    /// Other SDVs, excluded from collision counting.
    pub sdv_boxes: Vec<OrientedBox>,
}

/// Greedy score-ordered matching of one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameResult {
    /// Per detection: matched label and IoU.
    pub matches: Vec<Option<(usize, f64)>>,
    pub false_negatives: Vec<usize>,
}

/// Detection indices by descending score, ties by index.
fn score_order(dets: &Outputs) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].0.score.total_cmp(&dets[a].0.score).then(a.cmp(&b)));
    order
}

pub fn match_frame(frame: &EvalFrame, iou_thr: f64) -> FrameResult {
    let mut taken = vec![false; frame.labels.len()];
    let mut matches = vec![None; frame.detections.len()];
    for d in score_order(&frame.detections) {
        let bbox = &frame.detections[d].0.bbox;
        let mut best: Option<(usize, f64)> = None;
        for (l, label) in frame.labels.iter().enumerate() {
            if taken[l] {
                continue;
            }
            let iou = iou_unchecked(bbox, &label.bbox);
            if iou >= iou_thr && best.is_none_or(|(_, b)| iou > b) {
                best = Some((l, iou));
            }
        }
        if let Some((l, _)) = best {
            taken[l] = true;
        }
        matches[d] = best;
    }
    let false_negatives = (0..frame.labels.len()).filter(|&l| !taken[l]).collect();
    FrameResult {
        matches,
        false_negatives,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrCurve {
    /// `(score threshold, recall, precision)` at every distinct score.
    pub points: Vec<(f64, f64, f64)>,
    pub labels: usize,
}

/// One entry per scored detection: its score and whether it is a true
/// positive. `labels` is the number of ground-truth objects.
pub fn pr_curve(mut scored: Vec<(f64, bool)>, labels: usize) -> PrCurve {
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut points = Vec::new();
    let (mut tp, mut n) = (0usize, 0usize);
    let mut i = 0;
    while i < scored.len() {
        let s = scored[i].0;
        while i < scored.len() && scored[i].0 == s {
            tp += scored[i].1 as usize;
            n += 1;
            i += 1;
        }
        let recall = if labels == 0 { 0.0 } else { tp as f64 / labels as f64 };
        points.push((s, recall, tp as f64 / n as f64));
    }
    PrCurve { points, labels }
}

impl PrCurve {
    /// All-point interpolated AP: recall increments weighted by the
    /// precision envelope. `None` without labels.
    pub fn average_precision(&self) -> Option<f64> {
        if self.labels == 0 {
            return None;
        }
        let mut envelope = vec![0.0; self.points.len()];
        let mut best: f64 = 0.0;
        for (i, p) in self.points.iter().enumerate().rev() {
            best = best.max(p.2);
            envelope[i] = best;
        }
        let mut ap = 0.0;
        let mut prev = 0.0;
        for (p, e) in self.points.iter().zip(&envelope) {
            ap += (p.1 - prev) * e;
            prev = p.1;
        }
        Some(ap)
    }

    /// Lowest threshold reaching `target` recall, else the first threshold
    /// attaining the maximum recall.
    pub fn operating_threshold(&self, target: f64) -> Option<f64> {
        if let Some(p) = self.points.iter().find(|p| p.1 >= target) {
            return Some(p.0);
        }
        let max = self.points.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
        self.points.iter().find(|p| p.1 == max).map(|p| p.0)
    }
}

fn scored(frames: &[EvalFrame], results: &[FrameResult], keep_label: &dyn Fn(&EvalLabel) -> bool) -> (Vec<(f64, bool)>, usize) {
    let mut out = Vec::new();
    let mut labels = 0;
    for (f, r) in frames.iter().zip(results) {
        labels += f.labels.iter().filter(|l| keep_label(l)).count();
        for (d, m) in r.matches.iter().enumerate() {
            let score = f.detections[d].0.score;
            match m {
                Some((l, _)) if keep_label(&f.labels[*l]) => out.push((score, true)),
                // A match to a label outside the subset is neither TP nor FP.
                Some(_) => {}
                None => out.push((score, false)),
            }
        }
    }
    (out, labels)
}

pub fn average_precision(frames: &[EvalFrame], iou_thr: f64) -> (Option<f64>, PrCurve) {
    let results: Vec<FrameResult> = frames.iter().map(|f| match_frame(f, iou_thr)).collect();
    let (s, n) = scored(frames, &results, &|_| true);
    let curve = pr_curve(s, n);
    (curve.average_precision(), curve)
}

/// Mean center displacement over true positives at each horizon, at the
/// score threshold of the recall operating point. Also returns the
/// threshold.
pub fn l2_at_recall(frames: &[EvalFrame], cfg: &EvalConfig) -> (Vec<Option<f64>>, Option<f64>) {
    let results: Vec<FrameResult> = frames.iter().map(|f| match_frame(f, cfg.forecast_match_iou)).collect();
    let (s, n) = scored(frames, &results, &|_| true);
    let Some(thr) = pr_curve(s, n).operating_threshold(cfg.recall_target) else {
        return (vec![None; cfg.horizons.len()], None);
    };
    let steps: Vec<usize> = cfg.horizons.iter().map(|h| (h / cfg.interval).round() as usize).collect();
    let mut sums = vec![(0.0, 0usize); steps.len()];
    for (f, r) in frames.iter().zip(&results) {
        for (d, m) in r.matches.iter().enumerate() {
            let (det, fc) = &f.detections[d];
            let Some((l, _)) = m else { continue };
            if det.score < thr {
                continue;
            }
            let label = &f.labels[*l];
            for (k, &s) in steps.iter().enumerate() {
                if s == 0 || s > fc.waypoints.len() || s > label.waypoints.len() {
                    continue;
                }
                let (p, q) = (fc.waypoints[s - 1], label.waypoints[s - 1]);
                sums[k].0 += ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt();
                sums[k].1 += 1;
            }
        }
    }
    let l2 = sums.iter().map(|&(s, n)| (n > 0).then(|| s / n as f64)).collect();
    (l2, Some(thr))
}

/// Box placed on waypoint `k`, facing along the segment that reaches it.
pub fn box_at_waypoint(bbox: &OrientedBox, waypoints: &[(f64, f64)], k: usize) -> OrientedBox {
    let prev = if k == 0 { (bbox.cx, bbox.cy) } else { waypoints[k - 1] };
    let p = waypoints[k];
    let (dx, dy) = (p.0 - prev.0, p.1 - prev.1);
    let heading = if dx.hypot(dy) > 0.05 { dy.atan2(dx) } else { bbox.heading };
    OrientedBox::new(p.0, p.1, bbox.length, bbox.width, heading)
}

fn matches_sdv(b: &OrientedBox, sdvs: &[OrientedBox]) -> bool {
    sdvs.iter().any(|s| iou_unchecked(b, s) >= 0.5)
}

/// Pairs of detections (score ≥ `threshold`, SDVs removed) whose forecast
/// boxes overlap with IoU > `tau` at any waypoint, over all such pairs.
/// Returns `(colliding pairs, pairs)`.
pub fn collision_counts(frames: &[EvalFrame], threshold: f64, tau: f64) -> (usize, usize) {
    let (mut hits, mut pairs) = (0, 0);
    for f in frames {
        let objs: Vec<_> = f
            .detections
            .iter()
            .filter(|(d, _)| d.score >= threshold && !matches_sdv(&d.bbox, &f.sdv_boxes))
            .collect();
        for i in 0..objs.len() {
            for j in i + 1..objs.len() {
                pairs += 1;
                let (a, fa) = objs[i];
                let (b, fb) = objs[j];
                let steps = fa.waypoints.len().min(fb.waypoints.len());
                let collide = (0..steps).any(|k| {
                    let ba = box_at_waypoint(&a.bbox, &fa.waypoints, k);
                    let bb = box_at_waypoint(&b.bbox, &fb.waypoints, k);
                    iou_unchecked(&ba, &bb) > tau
                });
                hits += collide as usize;
            }
        }
    }
    (hits, pairs)
}

/// TCR at the forecast operating threshold, as a fraction.
pub fn tcr(frames: &[EvalFrame], cfg: &EvalConfig) -> Option<f64> {
    let (_, thr) = l2_at_recall(frames, cfg);
    let (hits, pairs) = collision_counts(frames, thr?, cfg.collision_tau);
    Some(if pairs == 0 { 0.0 } else { hits as f64 / pairs as f64 })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BreakdownKind {
    PointCount,
    Speed,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BinResult {
    pub label: String,
    pub labels: usize,
    pub ap: Option<f64>,
}

fn bin_of<T: PartialOrd + Copy>(edges: &[T], v: T) -> Option<usize> {
    edges.iter().rposition(|&e| v >= e)
}

fn bin_names<T: std::fmt::Display>(edges: &[T], step: &dyn Fn(usize) -> String) -> Vec<String> {
    (0..edges.len())
        .map(|i| if i + 1 < edges.len() { format!("[{},{})", edges[i], edges[i + 1]) } else { step(i) })
        .collect()
}

/// AP per bin; bins are `[edge_i, edge_{i+1})`. Detections matched to labels
/// of another bin are ignored, unmatched ones are false positives in every
/// bin. Empty bins are omitted.
pub fn breakdown(frames: &[EvalFrame], kind: BreakdownKind, iou_thr: f64, cfg: &EvalConfig) -> Vec<BinResult> {
    let results: Vec<FrameResult> = frames.iter().map(|f| match_frame(f, iou_thr)).collect();
    let (n, names) = match kind {
        BreakdownKind::PointCount => {
            let e = &cfg.point_bins;
            (e.len(), bin_names(e, &|i| format!("[{},inf)", e[i])))
        }
        BreakdownKind::Speed => {
            let e = &cfg.speed_bins;
            (e.len(), bin_names(e, &|i| format!("[{},inf)", e[i])))
        }
    };
    let which = |l: &EvalLabel| match kind {
        BreakdownKind::PointCount => bin_of(&cfg.point_bins, l.points),
        BreakdownKind::Speed => bin_of(&cfg.speed_bins, l.speed),
    };
    (0..n)
        .filter_map(|b| {
            let keep = |l: &EvalLabel| which(l) == Some(b);
            let (s, count) = scored(frames, &results, &keep);
            (count > 0).then(|| BinResult {
                label: names[b].clone(),
                labels: count,
                ap: pr_curve(s, count).average_precision(),
            })
        })
        .collect()
}

/// Table-1 style summary of one run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Summary {
    pub ap: Vec<Option<f64>>,
    pub l2: Vec<Option<f64>>,
    pub tcr: Option<f64>,
    pub operating_threshold: Option<f64>,
}

pub fn summarize(frames: &[EvalFrame], cfg: &EvalConfig) -> Summary {
    let ap = cfg.iou_thresholds.iter().map(|&t| average_precision(frames, t).0).collect();
    let (l2, thr) = l2_at_recall(frames, cfg);
    let tcr = thr.map(|t| {
        let (h, p) = collision_counts(frames, t, cfg.collision_tau);
        if p == 0 {
            0.0
        } else {
            h as f64 / p as f64
        }
    });
    Summary {
        ap,
        l2,
        tcr,
        operating_threshold: thr,
    }
}
