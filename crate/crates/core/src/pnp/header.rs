//! Dense target assignment, losses, decoding and suppression.

use numcore::{Result, Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

use super::{Detection, Forecast, GridSpec, ModelConfig, Outputs, DET_CHANNELS};
use crate::evalkit::iou_unchecked;
use crate::geom::OrientedBox;

const REG: usize = DET_CHANNELS - 1;

/// Log-size residuals are scaled up so centimeter errors still register in
/// the smooth-ℓ1 loss.
pub(crate) const SIZE_SCALE: f64 = 5.0;

/// Regression channels of a box relative to cell `(row, col)`: center offset
/// in raster cells, scaled log sizes, heading as sine/cosine.
pub fn encode_box_target(grid: &GridSpec, row: usize, col: usize, b: &OrientedBox) -> [f64; REG] {
    let (cx, cy) = grid.cell_center(row, col);
    let r = grid.raster_resolution;
    [
        (b.cx - cx) / r,
        (b.cy - cy) / r,
        b.length.ln() * SIZE_SCALE,
        b.width.ln() * SIZE_SCALE,
        b.heading.sin(),
        b.heading.cos(),
    ]
}

pub fn decode_box(grid: &GridSpec, row: usize, col: usize, v: &[f64]) -> OrientedBox {
    let (cx, cy) = grid.cell_center(row, col);
    let r = grid.raster_resolution;
    OrientedBox::new(
        cx + v[0] * r,
        cy + v[1] * r,
        (v[2] / SIZE_SCALE).clamp(-5.0, 5.0).exp(),
        (v[3] / SIZE_SCALE).clamp(-5.0, 5.0).exp(),
        v[4].atan2(v[5]),
    )
}

/// Per-cell training targets.
#[derive(Clone, Debug, PartialEq)]
pub struct Targets {
    pub h: usize,
    pub w: usize,
    /// Flat cell indices of positive cells, ascending.
    pub positives: Vec<usize>,
    pub labels: Tensor,
    /// `[P, 6]` regression targets in `positives` order.
    pub regression: Tensor,
    /// `[P, 2T]` forecast targets in forecast units.
    pub forecast: Tensor,
}

/// A cell is positive when its center lies inside a box, preferring the
/// smaller box on overlap. A box that contains no cell center claims its
/// nearest free cell.
pub fn assign_targets(boxes: &[(OrientedBox, Vec<(f64, f64)>)], grid: &GridSpec, cfg: &ModelConfig) -> Targets {
    let (h, w) = grid.feature_hw();
    let mut owner: Vec<Option<usize>> = vec![None; h * w];
    for (k, (b, _)) in boxes.iter().enumerate() {
        let mut any = false;
        for r in 0..h {
            for c in 0..w {
                if !b.contains(grid.cell_center(r, c)) {
                    continue;
                }
                any = true;
                let i = r * w + c;
                match owner[i] {
                    Some(o) if boxes[o].0.area() <= b.area() => {}
                    _ => owner[i] = Some(k),
                }
            }
        }
        if !any {
            let res = grid.feature_resolution();
            let c = ((b.cx + grid.range_x) / res - 0.5).round();
            let r = ((b.cy + grid.range_y) / res - 0.5).round();
            if c >= 0.0 && r >= 0.0 && (c as usize) < w && (r as usize) < h {
                let i = r as usize * w + c as usize;
                if owner[i].is_none() {
                    owner[i] = Some(k);
                }
            }
        }
    }
    let steps = cfg.forecast_steps;
    let mut positives = Vec::new();
    let mut reg = Vec::new();
    let mut fc = Vec::new();
    let mut labels = Tensor::zeros(vec![h, w, 1]);
    for (i, o) in owner.iter().enumerate() {
        let Some(k) = *o else { continue };
        let (b, wps) = &boxes[k];
        positives.push(i);
        labels.data_mut()[i] = 1.0;
        reg.extend_from_slice(&encode_box_target(grid, i / w, i % w, b));
        for s in 0..steps {
            let (x, y) = wps.get(s).copied().unwrap_or((b.cx, b.cy));
            fc.push((x - b.cx) / cfg.forecast_scale);
            fc.push((y - b.cy) / cfg.forecast_scale);
        }
    }
    let p = positives.len();
    Targets {
        h,
        w,
        positives,
        labels,
        regression: Tensor::new(vec![p, REG], reg).unwrap(),
        forecast: Tensor::new(vec![p, 2 * steps], fc).unwrap(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub classification: f64,
    pub regression: f64,
    pub forecast: f64,
    pub negative_ratio: usize,
    pub min_negatives: usize,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            classification: 1.0,
            regression: 1.0,
            forecast: 0.5,
            negative_ratio: 3,
            min_negatives: 256,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    pub classification: f64,
    pub regression: f64,
    pub forecast: f64,
    pub total: f64,
}

/// Weighted sum of: BCE over positives plus the hardest negatives, the mean
/// over positive cells of summed smooth-ℓ1 box residuals, and the same for
/// forecasts.
pub fn detection_loss(tape: &Tape, det: Var, fc: Var, t: &Targets, wts: &LossWeights) -> Result<(Var, LossParts)> {
    let logits = tape.slice_channels(det, 0, 1)?;
    let bce = tape.bce_with_logits(logits, &t.labels)?;
    let values = tape.value(bce);
    let n = t.h * t.w;
    let p = t.positives.len();
    let mut negatives: Vec<usize> = (0..n).filter(|&i| t.labels.data()[i] == 0.0).collect();
    let k = (wts.negative_ratio * p).max(wts.min_negatives).min(negatives.len());
    negatives.sort_by(|&a, &b| values.data()[b].total_cmp(&values.data()[a]).then(a.cmp(&b)));
    negatives.truncate(k);
    negatives.sort_unstable();
    let mut chosen = t.positives.clone();
    chosen.extend(negatives);
    chosen.sort_unstable();
    let cls = if chosen.is_empty() {
        tape.constant(Tensor::scalar(0.0))
    } else {
        tape.mean(tape.gather(bce, &chosen)?)
    };
    let mut parts = LossParts {
        classification: tape.value(cls).item(),
        ..Default::default()
    };
    let mut terms = vec![tape.scale(cls, wts.classification)];
    if p > 0 {
        let reg = tape.slice_channels(det, 1, DET_CHANNELS)?;
        let idx: Vec<usize> = t.positives.iter().flat_map(|&i| (0..REG).map(move |j| i * REG + j)).collect();
        let pr = tape.gather(reg, &idx)?;
        let lr = tape.scale(tape.sum(tape.smooth_l1(pr, &flat(&t.regression))?), 1.0 / p as f64);
        let fcw = tape.shape(fc)[2];
        let idx: Vec<usize> = t.positives.iter().flat_map(|&i| (0..fcw).map(move |j| i * fcw + j)).collect();
        let pf = tape.gather(fc, &idx)?;
        let lf = tape.scale(tape.sum(tape.smooth_l1(pf, &flat(&t.forecast))?), 1.0 / p as f64);
        parts.regression = tape.value(lr).item();
        parts.forecast = tape.value(lf).item();
        terms.push(tape.scale(lr, wts.regression));
        terms.push(tape.scale(lf, wts.forecast));
    }
    let total = tape.add_all(&terms)?;
    parts.total = tape.value(total).item();
    Ok((total, parts))
}

fn flat(t: &Tensor) -> Tensor {
    Tensor::new(vec![t.len()], t.data().to_vec()).unwrap()
}

/// Cells scoring at least `score_threshold`, best `top_k` first.
pub fn decode_grid(det: &Tensor, fc: &Tensor, grid: &GridSpec, cfg: &ModelConfig, score_threshold: f64) -> Outputs {
    let (h, w, _) = det.hwc().expect("det grid is [H, W, 7]");
    let fcw = fc.shape()[2];
    let steps = fcw / 2;
    let mut cells: Vec<(f64, usize)> = (0..h * w)
        .map(|i| (numcore::sigmoid(det.data()[i * DET_CHANNELS]), i))
        .filter(|&(s, _)| s >= score_threshold)
        .collect();
    cells.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    cells.truncate(cfg.pre_nms_top_k);
    cells
        .into_iter()
        .map(|(score, i)| {
            let v = &det.data()[i * DET_CHANNELS + 1..(i + 1) * DET_CHANNELS];
            let bbox = decode_box(grid, i / w, i % w, v);
            let f = &fc.data()[i * fcw..(i + 1) * fcw];
            let waypoints = (0..steps)
                .map(|s| {
                    (
                        bbox.cx + f[2 * s] * cfg.forecast_scale,
                        bbox.cy + f[2 * s + 1] * cfg.forecast_scale,
                    )
                })
                .collect();
            (Detection { bbox, score }, Forecast { waypoints })
        })
        .collect()
}

/// Greedy suppression in descending score order; equal scores keep input
/// order.
pub fn nms(mut items: Outputs, iou_threshold: f64) -> Outputs {
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by(|&a, &b| items[b].0.score.total_cmp(&items[a].0.score).then(a.cmp(&b)));
    let mut keep: Vec<usize> = Vec::new();
    for i in order {
        if keep
            .iter()
            .all(|&k| iou_unchecked(&items[k].0.bbox, &items[i].0.bbox) < iou_threshold)
        {
            keep.push(i);
        }
    }
    let mut slots: Vec<Option<(Detection, Forecast)>> = items.drain(..).map(Some).collect();
    keep.into_iter().map(|k| slots[k].take().unwrap()).collect()
}

pub fn decode_and_nms(
    det: &Tensor,
    fc: &Tensor,
    grid: &GridSpec,
    cfg: &ModelConfig,
    score_threshold: f64,
    iou_threshold: f64,
) -> Outputs {
    nms(decode_grid(det, fc, grid, cfg, score_threshold), iou_threshold)
}
