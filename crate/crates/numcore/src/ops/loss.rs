use crate::error::{shape_err, Result};
use crate::ops::basic::sigmoid;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Smooth-ℓ1 (Huber with β = 1) of a single residual.
pub fn smooth_l1_value(r: f64) -> f64 {
    let a = r.abs();
    if a < 1.0 {
        0.5 * r * r
    } else {
        a - 0.5
    }
}

impl Tape {
    /// Elementwise binary cross-entropy between `logits` and constant
    /// `targets` in `[0, 1]`, computed stably.
    pub fn bce_with_logits(&self, logits: Var, targets: &Tensor) -> Result<Var> {
        let lv = self.value(logits);
        if lv.shape() != targets.shape() {
            return Err(shape_err(
                "bce_with_logits",
                format!("logits {:?} vs targets {:?}", lv.shape(), targets.shape()),
            ));
        }
        let out = Tensor::from_parts(
            lv.shape().to_vec(),
            lv.data()
                .iter()
                .zip(targets.data())
                .map(|(&x, &t)| x.max(0.0) - x * t + (-x.abs()).exp().ln_1p())
                .collect(),
        );
        let t = targets.clone();
        Ok(self.custom_op(out, &[logits], move |g| {
            let d = lv
                .data()
                .iter()
                .zip(t.data())
                .zip(g.data())
                .map(|((&x, &t), &g)| g * (sigmoid(x) - t))
                .collect();
            vec![Some(Tensor::from_parts(lv.shape().to_vec(), d))]
        }))
    }

    /// Elementwise smooth-ℓ1 between `pred` and constant `target`.
    pub fn smooth_l1(&self, pred: Var, target: &Tensor) -> Result<Var> {
        let pv = self.value(pred);
        if pv.shape() != target.shape() {
            return Err(shape_err(
                "smooth_l1",
                format!("pred {:?} vs target {:?}", pv.shape(), target.shape()),
            ));
        }
        let r: Vec<f64> = pv.data().iter().zip(target.data()).map(|(p, t)| p - t).collect();
        let out = Tensor::from_parts(pv.shape().to_vec(), r.iter().map(|&r| smooth_l1_value(r)).collect());
        let shape = pv.shape().to_vec();
        Ok(self.custom_op(out, &[pred], move |g| {
            let d = r
                .iter()
                .zip(g.data())
                .map(|(&r, &g)| g * r.clamp(-1.0, 1.0))
                .collect();
            vec![Some(Tensor::from_parts(shape.clone(), d))]
        }))
    }
}
