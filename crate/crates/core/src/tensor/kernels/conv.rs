use crate::error::{Error, Result};
use crate::tensor::Scalar;

use super::{axpy, dot};

/// Stride, zero padding and group count of a 2D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl ConvSpec {
    pub fn new(stride: usize, padding: usize) -> Self {
        ConvSpec { stride, padding, groups: 1 }
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub oh: usize,
    pub ow: usize,
    pub stride: usize,
    pub pad: usize,
    pub cin_g: usize,
    pub cout_g: usize,
}

impl ConvGeom {
    pub fn new(x: &[usize], w: &[usize], bias: Option<&[usize]>, spec: ConvSpec) -> Result<Self> {
        let err = |d: String| Err(Error::shape("conv2d", d));
        let (&[n, cin, h, wd], &[cout, cin_g, kh, kw]) = (x, w) else {
            return err(format!("expected rank-4 input and kernel, got {x:?} and {w:?}"));
        };
        if spec.stride == 0 || spec.groups == 0 {
            return err(format!("stride and groups must be positive: {spec:?}"));
        }
        if cin % spec.groups != 0 || cout % spec.groups != 0 {
            return err(format!("channels {cin}->{cout} not divisible by groups {}", spec.groups));
        }
        if cin / spec.groups != cin_g {
            return err(format!("kernel expects {cin_g} input channels per group, input has {}", cin / spec.groups));
        }
        if let Some(b) = bias {
            if b != [cout] {
                return err(format!("bias shape {b:?} does not match {cout} output channels"));
            }
        }
        let (hp, wp) = (h + 2 * spec.padding, wd + 2 * spec.padding);
        if hp < kh || wp < kw {
            return err(format!("kernel {kh}x{kw} larger than padded input {hp}x{wp}"));
        }
        Ok(ConvGeom {
            n,
            cin,
            h,
            w: wd,
            cout,
            kh,
            kw,
            oh: (hp - kh) / spec.stride + 1,
            ow: (wp - kw) / spec.stride + 1,
            stride: spec.stride,
            pad: spec.padding,
            cin_g,
            cout_g: cout / spec.groups,
        })
    }

    pub fn out_shape(&self) -> [usize; 4] {
        [self.n, self.cout, self.oh, self.ow]
    }

    /// Output columns `[lo, hi)` whose input column `ox*stride + k - pad` is in range.
    #[inline]
    fn col_range(&self, k: usize) -> (usize, usize) {
        valid_range(self.ow, self.w, self.stride, self.pad, k)
    }

    #[inline]
    fn row_range(&self, k: usize) -> (usize, usize) {
        valid_range(self.oh, self.h, self.stride, self.pad, k)
    }
}

#[inline]
fn valid_range(out: usize, inp: usize, stride: usize, pad: usize, k: usize) -> (usize, usize) {
    let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    // largest o with o*stride + k - pad <= inp - 1
    let hi = if inp + pad > k { ((inp - 1 + pad - k) / stride + 1).min(out) } else { 0 };
    (lo, hi.max(lo))
}

/// Direct cross-correlation. Each output accumulates over (input channel,
/// kernel row, kernel column) in that order, then adds the bias.
pub(crate) fn forward<T: Scalar>(g: &ConvGeom, x: &[T], w: &[T], bias: Option<&[T]>) -> Vec<T> {
    let plane_in = g.h * g.w;
    let plane_out = g.oh * g.ow;
    let mut out = vec![T::zero(); g.n * g.cout * plane_out];
    for n in 0..g.n {
        for co in 0..g.cout {
            let group = co / g.cout_g;
            let o = &mut out[(n * g.cout + co) * plane_out..][..plane_out];
            for cig in 0..g.cin_g {
                let ci = group * g.cin_g + cig;
                let xp = &x[(n * g.cin + ci) * plane_in..][..plane_in];
                let wk = &w[(co * g.cin_g + cig) * g.kh * g.kw..][..g.kh * g.kw];
                for ki in 0..g.kh {
                    let (ry0, ry1) = g.row_range(ki);
                    for kj in 0..g.kw {
                        let wv = wk[ki * g.kw + kj];
                        let (cx0, cx1) = g.col_range(kj);
                        if cx0 >= cx1 {
                            continue;
                        }
                        for oy in ry0..ry1 {
                            let iy = oy * g.stride + ki - g.pad;
                            let xrow = &xp[iy * g.w..][..g.w];
                            let orow = &mut o[oy * g.ow..][..g.ow];
                            if g.stride == 1 {
                                let ix0 = cx0 + kj - g.pad;
                                axpy(&mut orow[cx0..cx1], wv, &xrow[ix0..ix0 + (cx1 - cx0)]);
                            } else {
                                for ox in cx0..cx1 {
                                    orow[ox] += wv * xrow[ox * g.stride + kj - g.pad];
                                }
                            }
                        }
                    }
                }
            }
            if let Some(b) = bias {
                for v in o.iter_mut() {
                    *v += b[co];
                }
            }
        }
    }
    out
}

/// Returns (grad_x, grad_w, grad_b).
pub(crate) fn backward<T: Scalar>(
    g: &ConvGeom,
    x: &[T],
    w: &[T],
    gout: &[T],
    want_x: bool,
    want_w: bool,
    want_b: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>, Option<Vec<T>>) {
    let plane_in = g.h * g.w;
    let plane_out = g.oh * g.ow;
    let mut gx = want_x.then(|| vec![T::zero(); x.len()]);
    let mut gw = want_w.then(|| vec![T::zero(); w.len()]);
    let gb = want_b.then(|| {
        let mut gb = vec![T::zero(); g.cout];
        for n in 0..g.n {
            for (co, b) in gb.iter_mut().enumerate() {
                *b += gout[(n * g.cout + co) * plane_out..][..plane_out].iter().copied().sum();
            }
        }
        gb
    });
    if gx.is_none() && gw.is_none() {
        return (None, None, gb);
    }
    for n in 0..g.n {
        for co in 0..g.cout {
            let group = co / g.cout_g;
            let go = &gout[(n * g.cout + co) * plane_out..][..plane_out];
            for cig in 0..g.cin_g {
                let ci = group * g.cin_g + cig;
                let xoff = (n * g.cin + ci) * plane_in;
                let woff = (co * g.cin_g + cig) * g.kh * g.kw;
                for ki in 0..g.kh {
                    let (ry0, ry1) = g.row_range(ki);
                    for kj in 0..g.kw {
                        let (cx0, cx1) = g.col_range(kj);
                        if cx0 >= cx1 {
                            continue;
                        }
                        let widx = woff + ki * g.kw + kj;
                        let wv = w[widx];
                        let mut wacc = T::zero();
                        for oy in ry0..ry1 {
                            let iy = oy * g.stride + ki - g.pad;
                            let grow = &go[oy * g.ow..][..g.ow];
                            let row_off = xoff + iy * g.w;
                            if g.stride == 1 {
                                let ix0 = cx0 + kj - g.pad;
                                let len = cx1 - cx0;
                                if gw.is_some() {
                                    wacc += dot(&grow[cx0..cx1], &x[row_off + ix0..][..len]);
                                }
                                if let Some(gx) = gx.as_mut() {
                                    axpy(&mut gx[row_off + ix0..][..len], wv, &grow[cx0..cx1]);
                                }
                            } else {
                                for ox in cx0..cx1 {
                                    let ix = row_off + ox * g.stride + kj - g.pad;
                                    if gw.is_some() {
                                        wacc += grow[ox] * x[ix];
                                    }
                                    if let Some(gx) = gx.as_mut() {
                                        gx[ix] += wv * grow[ox];
                                    }
                                }
                            }
                        }
                        if let Some(gw) = gw.as_mut() {
                            gw[widx] += wacc;
                        }
                    }
                }
            }
        }
    }
    (gx, gw, gb)
}
