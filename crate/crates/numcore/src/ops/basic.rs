//! Elementwise, reduction, and channel-layout ops.

use std::rc::Rc;

use crate::error::{shape_err, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(shape_err(
            op,
            format!("left {:?} vs right {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor::from_parts(
        a.shape().to_vec(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    )
}

impl Tape {
    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        same_shape("add", &av, &bv)?;
        let out = zip_map(&av, &bv, |x, y| x + y);
        Ok(self.custom_op(out, &[a, b], |g| vec![Some(g.clone()), Some(g.clone())]))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        same_shape("sub", &av, &bv)?;
        let out = zip_map(&av, &bv, |x, y| x - y);
        Ok(self.custom_op(out, &[a, b], |g| vec![Some(g.clone()), Some(g.map(|v| -v))]))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        same_shape("mul", &av, &bv)?;
        let out = zip_map(&av, &bv, |x, y| x * y);
        Ok(self.custom_op(out, &[a, b], move |g| {
            vec![
                Some(zip_map(g, &bv, |g, y| g * y)),
                Some(zip_map(g, &av, |g, x| g * x)),
            ]
        }))
    }

    /// Multiplication by a constant tensor of identical shape.
    pub fn mul_const(&self, a: Var, c: Rc<Tensor>) -> Result<Var> {
        let av = self.value(a);
        same_shape("mul_const", &av, &c)?;
        let out = zip_map(&av, &c, |x, y| x * y);
        Ok(self.custom_op(out, &[a], move |g| vec![Some(zip_map(g, &c, |g, y| g * y))]))
    }

    /// Adds a constant tensor of identical shape.
    pub fn add_const(&self, a: Var, c: &Tensor) -> Result<Var> {
        let av = self.value(a);
        same_shape("add_const", &av, c)?;
        let out = zip_map(&av, c, |x, y| x + y);
        Ok(self.custom_op(out, &[a], |g| vec![Some(g.clone())]))
    }

    pub fn scale(&self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|v| v * s);
        self.custom_op(out, &[a], move |g| vec![Some(g.map(|v| v * s))])
    }

    pub fn add_scalar(&self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|v| v + s);
        self.custom_op(out, &[a], |g| vec![Some(g.clone())])
    }

    pub fn relu(&self, a: Var) -> Var {
        let av = self.value(a);
        let out = av.map(|v| v.max(0.0));
        self.custom_op(out, &[a], move |g| {
            vec![Some(zip_map(g, &av, |g, x| if x > 0.0 { g } else { 0.0 }))]
        })
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        let out = Rc::new(self.value(a).map(sigmoid));
        let y = Rc::clone(&out);
        self.custom_op((*out).clone(), &[a], move |g| {
            vec![Some(zip_map(g, &y, |g, s| g * s * (1.0 - s)))]
        })
    }

    pub fn tanh(&self, a: Var) -> Var {
        let out = Rc::new(self.value(a).map(f64::tanh));
        let y = Rc::clone(&out);
        self.custom_op((*out).clone(), &[a], move |g| {
            vec![Some(zip_map(g, &y, |g, t| g * (1.0 - t * t)))]
        })
    }

    pub fn square(&self, a: Var) -> Var {
        let av = self.value(a);
        let out = av.map(|v| v * v);
        self.custom_op(out, &[a], move |g| {
            vec![Some(zip_map(g, &av, |g, x| 2.0 * g * x))]
        })
    }

    /// `x[..., c] + b[c]`.
    pub fn add_bias(&self, x: Var, b: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(b));
        let c = *xv.shape().last().unwrap_or(&0);
        if bv.shape() != [c] {
            return Err(shape_err(
                "add_bias",
                format!("bias {:?} does not match channels {c} of {:?}", bv.shape(), xv.shape()),
            ));
        }
        let mut out = (*xv).clone();
        for row in out.data_mut().chunks_mut(c) {
            for (o, bb) in row.iter_mut().zip(bv.data()) {
                *o += *bb;
            }
        }
        Ok(self.custom_op(out, &[x, b], move |g| {
            let mut gb = vec![0.0; c];
            for row in g.data().chunks(c) {
                for (acc, v) in gb.iter_mut().zip(row) {
                    *acc += *v;
                }
            }
            vec![Some(g.clone()), Some(Tensor::from_parts(vec![c], gb))]
        }))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&self, a: Var) -> Var {
        let av = self.value(a);
        let shape = av.shape().to_vec();
        self.custom_op(Tensor::scalar(av.sum()), &[a], move |g| {
            vec![Some(Tensor::full(shape.clone(), g.item()))]
        })
    }

    pub fn mean(&self, a: Var) -> Var {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Sum of several scalars (or equal-shaped tensors).
    pub fn add_all(&self, terms: &[Var]) -> Result<Var> {
        let mut it = terms.iter();
        let first = *it
            .next()
            .ok_or_else(|| shape_err("add_all", "no terms"))?;
        it.try_fold(first, |acc, &t| self.add(acc, t))
    }

    /// Flat elements at `indices`, as a rank-1 tensor.
    pub fn gather(&self, a: Var, indices: &[usize]) -> Result<Var> {
        let av = self.value(a);
        if let Some(&bad) = indices.iter().find(|&&i| i >= av.len()) {
            return Err(shape_err("gather", format!("index {bad} out of {}", av.len())));
        }
        let out = Tensor::from_parts(
            vec![indices.len()],
            indices.iter().map(|&i| av.data()[i]).collect(),
        );
        let idx = indices.to_vec();
        let shape = av.shape().to_vec();
        Ok(self.custom_op(out, &[a], move |g| {
            let mut ga = Tensor::zeros(shape.clone());
            for (k, &i) in idx.iter().enumerate() {
                ga.data_mut()[i] += g.data()[k];
            }
            vec![Some(ga)]
        }))
    }

    /// Concatenation along the last (channel) axis.
    pub fn concat_channels(&self, parts: &[Var]) -> Result<Var> {
        let vals: Vec<Rc<Tensor>> = parts.iter().map(|&p| self.value(p)).collect();
        let first = vals
            .first()
            .ok_or_else(|| shape_err("concat_channels", "no inputs"))?;
        let lead = &first.shape()[..first.rank() - 1];
        let rows: usize = lead.iter().product();
        let mut widths = Vec::with_capacity(vals.len());
        for v in &vals {
            if &v.shape()[..v.rank() - 1] != lead {
                return Err(shape_err(
                    "concat_channels",
                    format!("leading dims {:?} vs {:?}", v.shape(), first.shape()),
                ));
            }
            widths.push(*v.shape().last().unwrap());
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (v, &w) in vals.iter().zip(&widths) {
                data.extend_from_slice(&v.data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        let lead_shape = lead.to_vec();
        Ok(self.custom_op(Tensor::from_parts(shape, data), parts, move |g| {
            let mut outs: Vec<Vec<f64>> = widths.iter().map(|&w| Vec::with_capacity(rows * w)).collect();
            for r in 0..rows {
                let mut off = r * total;
                for (o, &w) in outs.iter_mut().zip(&widths) {
                    o.extend_from_slice(&g.data()[off..off + w]);
                    off += w;
                }
            }
            outs.into_iter()
                .zip(&widths)
                .map(|(d, &w)| {
                    let mut s = lead_shape.clone();
                    s.push(w);
                    Some(Tensor::from_parts(s, d))
                })
                .collect()
        }))
    }

    /// Channels `[start, end)` of the last axis.
    pub fn slice_channels(&self, a: Var, start: usize, end: usize) -> Result<Var> {
        let av = self.value(a);
        let c = *av.shape().last().unwrap_or(&0);
        if start >= end || end > c {
            return Err(shape_err(
                "slice_channels",
                format!("range {start}..{end} invalid for {c} channels"),
            ));
        }
        let w = end - start;
        let rows = av.len() / c;
        let mut data = Vec::with_capacity(rows * w);
        for r in 0..rows {
            data.extend_from_slice(&av.data()[r * c + start..r * c + end]);
        }
        let mut shape = av.shape().to_vec();
        *shape.last_mut().unwrap() = w;
        let full = av.shape().to_vec();
        Ok(self.custom_op(Tensor::from_parts(shape, data), &[a], move |g| {
            let mut ga = Tensor::zeros(full.clone());
            for r in 0..rows {
                ga.data_mut()[r * c + start..r * c + end]
                    .copy_from_slice(&g.data()[r * w..(r + 1) * w]);
            }
            vec![Some(ga)]
        }))
    }

    /// Nearest-neighbour 2x upsampling of an `[H, W, C]` map.
    pub fn upsample2(&self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let (h, w, c) = av.hwc()?;
        let (ho, wo) = (2 * h, 2 * w);
        let mut out = Tensor::zeros(vec![ho, wo, c]);
        for y in 0..ho {
            for x in 0..wo {
                let src = ((y / 2) * w + x / 2) * c;
                let dst = (y * wo + x) * c;
                out.data_mut()[dst..dst + c].copy_from_slice(&av.data()[src..src + c]);
            }
        }
        Ok(self.custom_op(out, &[a], move |g| {
            let mut ga = Tensor::zeros(vec![h, w, c]);
            for y in 0..ho {
                for x in 0..wo {
                    let src = (y * wo + x) * c;
                    let dst = ((y / 2) * w + x / 2) * c;
                    for k in 0..c {
                        ga.data_mut()[dst + k] += g.data()[src + k];
                    }
                }
            }
            vec![Some(ga)]
        }))
    }

    /// Mean over a set of `[H, W, C]` messages where each cell is divided by
    /// its own coverage count; cells with zero coverage are 0.
    ///
    /// The per-element sum is taken over values sorted ascending, so the
    /// result is bit-identical under any permutation of `messages`.
    pub fn coverage_mean(&self, messages: &[Var], coverage: &Tensor) -> Result<Var> {
        let vals: Vec<Rc<Tensor>> = messages.iter().map(|&m| self.value(m)).collect();
        let (h, w) = match coverage.shape() {
            &[h, w] => (h, w),
            s => return Err(shape_err("coverage_mean", format!("coverage must be [H,W], got {s:?}"))),
        };
        let Some(first) = vals.first() else {
            return Err(shape_err("coverage_mean", "needs at least one message"));
        };
        let (mh, mw, c) = first.hwc()?;
        if (mh, mw) != (h, w) {
            return Err(shape_err(
                "coverage_mean",
                format!("messages {:?} vs coverage {:?}", first.shape(), coverage.shape()),
            ));
        }
        for v in &vals {
            if v.shape() != first.shape() {
                return Err(shape_err(
                    "coverage_mean",
                    format!("messages {:?} vs {:?}", v.shape(), first.shape()),
                ));
            }
        }
        let inv: Vec<f64> = coverage
            .data()
            .iter()
            .map(|&n| if n > 0.0 { 1.0 / n } else { 0.0 })
            .collect();
        let mut out = Tensor::zeros(vec![h, w, c]);
        let mut buf = Vec::with_capacity(vals.len());
        for (i, o) in out.data_mut().iter_mut().enumerate() {
            let s = inv[i / c];
            if s == 0.0 {
                continue;
            }
            buf.clear();
            buf.extend(vals.iter().map(|v| v.data()[i]));
            buf.sort_by(|a, b| a.total_cmp(b));
            *o = buf.iter().sum::<f64>() * s;
        }
        let n = vals.len();
        Ok(self.custom_op(out, messages, move |g| {
            let mut gm = g.clone();
            for (i, v) in gm.data_mut().iter_mut().enumerate() {
                *v *= inv[i / c];
            }
            (0..n).map(|_| Some(gm.clone())).collect()
        }))
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Expands an `[H, W]` mask to `[H, W, C]`.
pub fn broadcast_mask(mask: &Tensor, c: usize) -> Tensor {
    let mut data = Vec::with_capacity(mask.len() * c);
    for &m in mask.data() {
        data.extend(std::iter::repeat(m).take(c));
    }
    let mut shape = mask.shape().to_vec();
    shape.push(c);
    Tensor::from_parts(shape, data)
}
