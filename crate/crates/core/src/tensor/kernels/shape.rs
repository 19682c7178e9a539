//! Data-movement kernels: axis permutation, gather/scatter along an axis,
//! concatenation, and axis reduction.

use crate::tensor::Scalar;

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Splits `shape` around `axis` into (outer, extent, inner).
pub(crate) fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn permute<T: Copy>(x: &[T], shape: &[usize], perm: &[usize]) -> Vec<T> {
    let rank = shape.len();
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&a| shape[a]).collect();
    let src_stride: Vec<usize> = perm.iter().map(|&a| in_strides[a]).collect();
    let inner = out_shape[rank - 1];
    let inner_stride = src_stride[rank - 1];
    let outer = x.len() / inner;
    let mut out = Vec::with_capacity(x.len());
    let mut idx = vec![0usize; rank];
    let mut base = 0usize;
    for _ in 0..outer {
        if inner_stride == 1 {
            out.extend_from_slice(&x[base..base + inner]);
        } else {
            out.extend((0..inner).map(|k| x[base + k * inner_stride]));
        }
        let mut ax = rank - 1;
        while ax > 0 {
            ax -= 1;
            idx[ax] += 1;
            base += src_stride[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            base -= src_stride[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    out
}

pub(crate) fn inverse_perm(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

/// `out[o, i, k] = x[o, index[i], k]` on the (outer, extent, inner) view.
pub(crate) fn gather<T: Copy>(x: &[T], outer: usize, extent: usize, inner: usize, index: &[usize]) -> Vec<T> {
    let mut out = Vec::with_capacity(outer * index.len() * inner);
    for o in 0..outer {
        let xo = &x[o * extent * inner..][..extent * inner];
        for &i in index {
            out.extend_from_slice(&xo[i * inner..][..inner]);
        }
    }
    out
}

/// Transpose of [`gather`]: accumulates rows back into their sources.
pub(crate) fn scatter_add<T: Scalar>(g: &[T], outer: usize, extent: usize, inner: usize, index: &[usize]) -> Vec<T> {
    let mut gx = vec![T::zero(); outer * extent * inner];
    for o in 0..outer {
        let go = &g[o * index.len() * inner..][..index.len() * inner];
        let dst = &mut gx[o * extent * inner..][..extent * inner];
        for (t, &i) in index.iter().enumerate() {
            for (d, &s) in dst[i * inner..][..inner].iter_mut().zip(&go[t * inner..][..inner]) {
                *d += s;
            }
        }
    }
    gx
}

/// Concatenates parts viewed as (outer, extent_k, inner).
pub(crate) fn concat<T: Copy>(parts: &[(&[T], usize)], outer: usize, inner: usize) -> Vec<T> {
    let total: usize = parts.iter().map(|(_, e)| e).sum();
    let mut out = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for (data, extent) in parts {
            out.extend_from_slice(&data[o * extent * inner..][..extent * inner]);
        }
    }
    out
}

/// Slice of a concatenated gradient belonging to the part at `offset..offset+extent`.
pub(crate) fn concat_part<T: Copy>(g: &[T], outer: usize, total: usize, inner: usize, offset: usize, extent: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(outer * extent * inner);
    for o in 0..outer {
        out.extend_from_slice(&g[(o * total + offset) * inner..][..extent * inner]);
    }
    out
}

pub(crate) fn sum_axis<T: Scalar>(x: &[T], outer: usize, extent: usize, inner: usize) -> Vec<T> {
    let mut out = vec![T::zero(); outer * inner];
    for o in 0..outer {
        let dst = &mut out[o * inner..][..inner];
        for a in 0..extent {
            for (d, &s) in dst.iter_mut().zip(&x[(o * extent + a) * inner..][..inner]) {
                *d += s;
            }
        }
    }
    out
}

pub(crate) fn sum_axis_backward<T: Scalar>(g: &[T], outer: usize, extent: usize, inner: usize) -> Vec<T> {
    let mut gx = Vec::with_capacity(outer * extent * inner);
    for o in 0..outer {
        for _ in 0..extent {
            gx.extend_from_slice(&g[o * inner..][..inner]);
        }
    }
    gx
}
