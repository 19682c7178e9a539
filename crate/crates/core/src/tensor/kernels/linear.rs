use crate::tensor::Scalar;

use super::axpy;

/// `out[r, o] = sum_i x[r, i] * w[o, i] + b[o]` for `rows` rows.
pub(crate) fn forward<T: Scalar>(x: &[T], w: &[T], b: Option<&[T]>, rows: usize, din: usize, dout: usize) -> Vec<T> {
    // transposed weights make the inner loop a contiguous axpy over outputs
    let mut wt = vec![T::zero(); din * dout];
    for o in 0..dout {
        for i in 0..din {
            wt[i * dout + o] = w[o * din + i];
        }
    }
    let mut out = vec![T::zero(); rows * dout];
    for r in 0..rows {
        let xr = &x[r * din..][..din];
        let orow = &mut out[r * dout..][..dout];
        for (i, &xv) in xr.iter().enumerate() {
            axpy(orow, xv, &wt[i * dout..][..dout]);
        }
        if let Some(b) = b {
            for (v, &bv) in orow.iter_mut().zip(b) {
                *v += bv;
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn backward<T: Scalar>(
    x: &[T],
    w: &[T],
    gout: &[T],
    rows: usize,
    din: usize,
    dout: usize,
    want_x: bool,
    want_w: bool,
    want_b: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>, Option<Vec<T>>) {
    let gx = want_x.then(|| {
        let mut gx = vec![T::zero(); rows * din];
        for r in 0..rows {
            let gxr = &mut gx[r * din..][..din];
            for (o, &g) in gout[r * dout..][..dout].iter().enumerate() {
                axpy(gxr, g, &w[o * din..][..din]);
            }
        }
        gx
    });
    let gw = want_w.then(|| {
        let mut gw = vec![T::zero(); dout * din];
        for r in 0..rows {
            let xr = &x[r * din..][..din];
            for (o, &g) in gout[r * dout..][..dout].iter().enumerate() {
                axpy(&mut gw[o * din..][..din], g, xr);
            }
        }
        gw
    });
    let gb = want_b.then(|| {
        let mut gb = vec![T::zero(); dout];
        for r in 0..rows {
            for (b, &g) in gb.iter_mut().zip(&gout[r * dout..][..dout]) {
                *b += g;
            }
        }
        gb
    });
    (gx, gw, gb)
}
