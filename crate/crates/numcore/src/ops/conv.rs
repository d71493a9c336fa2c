//! 2D convolution over `[H, W, C]` maps via im2col + GEMM.

use std::rc::Rc;

use crate::error::{shape_err, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// `c[m×n] = alpha·op(a)·op(b) + beta·c` with row-major operands; `ta`/`tb`
/// select transposition.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    ta: bool,
    b: &[f64],
    tb: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: slice lengths were checked against the dimensions above and
    // the strides address exactly those row-major layouts.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Clone, Copy, Debug)]
struct Geometry {
    h: usize,
    w: usize,
    cin: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn direct(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    fn cols(&self) -> usize {
        self.k * self.k * self.cin
    }
}

fn im2col(g: &Geometry, input: &[f64]) -> Vec<f64> {
    let kk = g.cols();
    let mut cols = vec![0.0; g.ho * g.wo * kk];
    for oy in 0..g.ho {
        for ox in 0..g.wo {
            let row = &mut cols[(oy * g.wo + ox) * kk..(oy * g.wo + ox + 1) * kk];
            for ky in 0..g.k {
                let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                if iy < 0 || iy >= g.h as isize {
                    continue;
                }
                for kx in 0..g.k {
                    let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                    if ix < 0 || ix >= g.w as isize {
                        continue;
                    }
                    let src = (iy as usize * g.w + ix as usize) * g.cin;
                    let dst = (ky * g.k + kx) * g.cin;
                    row[dst..dst + g.cin].copy_from_slice(&input[src..src + g.cin]);
                }
            }
        }
    }
    cols
}

fn col2im(g: &Geometry, cols: &[f64]) -> Vec<f64> {
    let kk = g.cols();
    let mut out = vec![0.0; g.h * g.w * g.cin];
    for oy in 0..g.ho {
        for ox in 0..g.wo {
            let row = &cols[(oy * g.wo + ox) * kk..(oy * g.wo + ox + 1) * kk];
            for ky in 0..g.k {
                let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                if iy < 0 || iy >= g.h as isize {
                    continue;
                }
                for kx in 0..g.k {
                    let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                    if ix < 0 || ix >= g.w as isize {
                        continue;
                    }
                    let dst = (iy as usize * g.w + ix as usize) * g.cin;
                    let src = (ky * g.k + kx) * g.cin;
                    for c in 0..g.cin {
                        out[dst + c] += row[src + c];
                    }
                }
            }
        }
    }
    out
}

/// Output spatial size of a convolution along one axis.
pub fn conv_out_size(n: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    (n + 2 * pad).checked_sub(k).map(|v| v / stride + 1)
}

impl Tape {
    /// Zero-padded convolution of `input[H, W, Cin]` with
    /// `kernel[k, k, Cin, Cout]`.
    pub fn conv2d(&self, input: Var, kernel: Var, stride: usize, pad: usize) -> Result<Var> {
        let (xv, kv) = (self.value(input), self.value(kernel));
        let (h, w, cin) = xv.hwc()?;
        let (k, cout) = match kv.shape() {
            &[k1, k2, ci, co] if k1 == k2 && ci == cin => (k1, co),
            s => {
                return Err(shape_err(
                    "conv2d",
                    format!("kernel {s:?} incompatible with input channels {cin} (want [k,k,{cin},Cout])"),
                ))
            }
        };
        if k % 2 == 0 || stride == 0 {
            return Err(shape_err("conv2d", format!("kernel size {k} must be odd and stride {stride} ≥ 1")));
        }
        let (Some(ho), Some(wo)) = (conv_out_size(h, k, stride, pad), conv_out_size(w, k, stride, pad)) else {
            return Err(shape_err("conv2d", format!("input {h}x{w} smaller than kernel {k} with pad {pad}")));
        };
        let g = Geometry { h, w, cin, k, stride, pad, ho, wo };
        let p = ho * wo;
        let kk = g.cols();
        let cols: Rc<Vec<f64>> = if g.direct() {
            Rc::new(xv.data().to_vec())
        } else {
            Rc::new(im2col(&g, xv.data()))
        };
        let mut out = vec![0.0; p * cout];
        gemm(p, kk, cout, &cols, false, kv.data(), false, 0.0, &mut out);
        let kshape = kv.shape().to_vec();
        Ok(self.custom_op(
            Tensor::from_parts(vec![ho, wo, cout], out),
            &[input, kernel],
            move |go| {
                let mut dcols = vec![0.0; p * kk];
                gemm(p, cout, kk, go.data(), false, kv.data(), true, 0.0, &mut dcols);
                let dx = if g.direct() { dcols } else { col2im(&g, &dcols) };
                let mut dk = vec![0.0; kk * cout];
                gemm(kk, p, cout, &cols, true, go.data(), false, 0.0, &mut dk);
                vec![
                    Some(Tensor::from_parts(vec![h, w, cin], dx)),
                    Some(Tensor::from_parts(kshape.clone(), dk)),
                ]
            },
        ))
    }

    /// Matrix product of rank-2 tensors `a[m, k] · b[k, n]`.
    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k, n) = match (av.shape(), bv.shape()) {
            (&[m, k1], &[k2, n]) if k1 == k2 => (m, k1, n),
            (sa, sb) => return Err(shape_err("matmul", format!("{sa:?} x {sb:?}"))),
        };
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, av.data(), false, bv.data(), false, 0.0, &mut out);
        Ok(self.custom_op(Tensor::from_parts(vec![m, n], out), &[a, b], move |g| {
            let mut da = vec![0.0; m * k];
            gemm(m, n, k, g.data(), false, bv.data(), true, 0.0, &mut da);
            let mut db = vec![0.0; k * n];
            gemm(k, m, n, av.data(), true, g.data(), false, 0.0, &mut db);
            vec![
                Some(Tensor::from_parts(vec![m, k], da)),
                Some(Tensor::from_parts(vec![k, n], db)),
            ]
        }))
    }
}
