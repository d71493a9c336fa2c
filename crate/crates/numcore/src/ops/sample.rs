use crate::error::{shape_err, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

struct Tap {
    valid: bool,
    idx: [usize; 4],
    fx: f64,
    fy: f64,
}

fn tap(u: f64, v: f64, h: usize, w: usize) -> Tap {
    let valid = u >= 0.0 && v >= 0.0 && u <= (w - 1) as f64 && v <= (h - 1) as f64;
    if !valid {
        return Tap { valid, idx: [0; 4], fx: 0.0, fy: 0.0 };
    }
    let x0 = (u.floor() as usize).min(w - 1);
    let y0 = (v.floor() as usize).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    Tap {
        valid,
        idx: [y0 * w + x0, y0 * w + x1, y1 * w + x0, y1 * w + x1],
        fx: u - x0 as f64,
        fy: v - y0 as f64,
    }
}

impl Tape {
    /// Bilinear resampling of `input[H, W, C]` at continuous pixel
    /// coordinates `coords[H', W', 2]` given as `(column, row)`; integer
    /// coordinates land exactly on cell values.
    ///
    /// Samples outside `[0, W-1] × [0, H-1]` read 0. The returned mask is 1
    /// where the sample was in bounds.
    pub fn bilinear_sample(&self, input: Var, coords: Var) -> Result<(Var, Tensor)> {
        let (xv, cv) = (self.value(input), self.value(coords));
        let (h, w, c) = xv.hwc()?;
        let (ho, wo) = match cv.shape() {
            &[ho, wo, 2] => (ho, wo),
            s => return Err(shape_err("bilinear_sample", format!("coords must be [H',W',2], got {s:?}"))),
        };
        if h == 0 || w == 0 {
            return Err(shape_err("bilinear_sample", "empty input map"));
        }
        let taps: Vec<Tap> = cv
            .data()
            .chunks(2)
            .map(|uv| tap(uv[0], uv[1], h, w))
            .collect();
        let mut out = Tensor::zeros(vec![ho, wo, c]);
        let mut mask = Tensor::zeros(vec![ho, wo]);
        for (o, t) in taps.iter().enumerate() {
            if !t.valid {
                continue;
            }
            mask.data_mut()[o] = 1.0;
            let wts = weights(t);
            let dst = &mut out.data_mut()[o * c..(o + 1) * c];
            for (q, &wt) in t.idx.iter().zip(&wts) {
                if wt == 0.0 {
                    continue;
                }
                let src = &xv.data()[q * c..(q + 1) * c];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += wt * s;
                }
            }
        }
        let var = self.custom_op(out, &[input, coords], move |g| {
            let mut gin = Tensor::zeros(vec![h, w, c]);
            let mut gc = Tensor::zeros(vec![ho, wo, 2]);
            for (o, t) in taps.iter().enumerate() {
                if !t.valid {
                    continue;
                }
                let go = &g.data()[o * c..(o + 1) * c];
                let wts = weights(t);
                for (q, &wt) in t.idx.iter().zip(&wts) {
                    if wt == 0.0 {
                        continue;
                    }
                    let dst = &mut gin.data_mut()[q * c..(q + 1) * c];
                    for (d, s) in dst.iter_mut().zip(go) {
                        *d += wt * s;
                    }
                }
                let px = |q: usize, k: usize| xv.data()[t.idx[q] * c + k];
                let (mut du, mut dv) = (0.0, 0.0);
                for (k, gk) in go.iter().enumerate() {
                    let (i00, i01, i10, i11) = (px(0, k), px(1, k), px(2, k), px(3, k));
                    du += gk * ((1.0 - t.fy) * (i01 - i00) + t.fy * (i11 - i10));
                    dv += gk * ((1.0 - t.fx) * (i10 - i00) + t.fx * (i11 - i01));
                }
                gc.data_mut()[2 * o] = du;
                gc.data_mut()[2 * o + 1] = dv;
            }
            vec![Some(gin), Some(gc)]
        });
        Ok((var, mask))
    }
}

fn weights(t: &Tap) -> [f64; 4] {
    [
        (1.0 - t.fx) * (1.0 - t.fy),
        t.fx * (1.0 - t.fy),
        (1.0 - t.fx) * t.fy,
        t.fx * t.fy,
    ]
}
