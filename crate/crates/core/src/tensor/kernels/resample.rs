use crate::tensor::Scalar;

/// Interpolation used by 2x up-sampling.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResampleMode {
    Nearest,
    /// Half-pixel centres (`align_corners = false`), edges clamped.
    Bilinear,
}

/// Source taps for one output coordinate of a 2x bilinear up-sample:
/// (low index, high index, weight of the high index).
#[inline]
pub(crate) fn bilinear_taps(o: usize, extent: usize) -> (usize, usize, f64) {
    let src = ((o as f64 + 0.5) / 2.0 - 0.5).max(0.0);
    let lo = (src.floor() as usize).min(extent - 1);
    let hi = (lo + 1).min(extent - 1);
    (lo, hi, src - lo as f64)
}

pub(crate) fn forward<T: Scalar>(x: &[T], dims: [usize; 4], mode: ResampleMode) -> Vec<T> {
    let [n, c, h, w] = dims;
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![T::zero(); n * c * oh * ow];
    for p in 0..n * c {
        let xp = &x[p * h * w..][..h * w];
        let op = &mut out[p * oh * ow..][..oh * ow];
        match mode {
            ResampleMode::Nearest => {
                for oy in 0..oh {
                    for ox in 0..ow {
                        op[oy * ow + ox] = xp[(oy / 2) * w + ox / 2];
                    }
                }
            }
            ResampleMode::Bilinear => {
                for oy in 0..oh {
                    let (y0, y1, fy) = bilinear_taps(oy, h);
                    let fy = T::of(fy);
                    for ox in 0..ow {
                        let (x0, x1, fx) = bilinear_taps(ox, w);
                        let fx = T::of(fx);
                        let top = xp[y0 * w + x0] * (T::one() - fx) + xp[y0 * w + x1] * fx;
                        let bot = xp[y1 * w + x0] * (T::one() - fx) + xp[y1 * w + x1] * fx;
                        op[oy * ow + ox] = top * (T::one() - fy) + bot * fy;
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn backward<T: Scalar>(gout: &[T], dims: [usize; 4], mode: ResampleMode) -> Vec<T> {
    let [n, c, h, w] = dims;
    let (oh, ow) = (2 * h, 2 * w);
    let mut gx = vec![T::zero(); n * c * h * w];
    for p in 0..n * c {
        let gp = &mut gx[p * h * w..][..h * w];
        let go = &gout[p * oh * ow..][..oh * ow];
        match mode {
            ResampleMode::Nearest => {
                for oy in 0..oh {
                    for ox in 0..ow {
                        gp[(oy / 2) * w + ox / 2] += go[oy * ow + ox];
                    }
                }
            }
            ResampleMode::Bilinear => {
                for oy in 0..oh {
                    let (y0, y1, fy) = bilinear_taps(oy, h);
                    let fy = T::of(fy);
                    for ox in 0..ow {
                        let (x0, x1, fx) = bilinear_taps(ox, w);
                        let fx = T::of(fx);
                        let g = go[oy * ow + ox];
                        gp[y0 * w + x0] += g * (T::one() - fy) * (T::one() - fx);
                        gp[y0 * w + x1] += g * (T::one() - fy) * fx;
                        gp[y1 * w + x0] += g * fy * (T::one() - fx);
                        gp[y1 * w + x1] += g * fy * fx;
                    }
                }
            }
        }
    }
    gx
}
