//! Slice-level forward and backward kernels. The tape calls into these; they
//! never allocate graph state of their own.

pub mod activation;
pub mod conv;
pub mod linear;
pub mod norm;
pub mod pool;
pub mod resample;
pub mod shape;

use super::Scalar;

/// `dst += alpha * src`
#[inline]
pub(crate) fn axpy<T: Scalar>(dst: &mut [T], alpha: T, src: &[T]) {
    debug_assert_eq!(dst.len(), src.len());
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += alpha * s;
    }
}

/// Dot product with eight independent partial sums. Deterministic for a given
/// length, but not equal to the sequential sum.
#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}
