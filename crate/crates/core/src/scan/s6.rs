//! Selective state-space (S6) recurrence with input-dependent step size.
//!
//! Per channel `d` and state `s`:
//! `h_t = exp(dt_t * A) * h_{t-1} + dt_t * B_t * x_t`, `y_t = C_t . h_t + D * x_t`,
//! with `A = -exp(a_log)` and `h_0 = 0`. The recurrence runs sequentially.

use crate::error::{Error, Result};
use crate::tensor::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ScanDims {
    pub n: usize,
    pub l: usize,
    pub d: usize,
    pub s: usize,
}

impl ScanDims {
    pub fn infer(u: &[usize], delta: &[usize], a_log: &[usize], b: &[usize], c: &[usize], d_skip: &[usize]) -> Result<Self> {
        let &[n, l, d] = u else {
            return Err(Error::shape("selective_scan", format!("input must be [N, L, D], got {u:?}")));
        };
        let &[ad, s] = a_log else {
            return Err(Error::shape("selective_scan", format!("a_log must be [D, S], got {a_log:?}")));
        };
        let ok = delta == u && ad == d && b == [n, l, s] && c == [n, l, s] && d_skip == [d];
        if !ok {
            return Err(Error::shape(
                "selective_scan",
                format!("inconsistent shapes u={u:?} delta={delta:?} a_log={a_log:?} b={b:?} c={c:?} d_skip={d_skip:?}"),
            ));
        }
        Ok(ScanDims { n, l, d, s })
    }
}

pub(crate) fn forward<T: Scalar>(dims: ScanDims, u: &[T], delta: &[T], a_log: &[T], b: &[T], c: &[T], d_skip: &[T]) -> Vec<T> {
    let ScanDims { n, l, d, s } = dims;
    let a: Vec<T> = a_log.iter().map(|&v| -v.exp()).collect();
    let mut y = vec![T::zero(); n * l * d];
    let mut h = vec![T::zero(); d * s];
    for bi in 0..n {
        h.iter_mut().for_each(|v| *v = T::zero());
        for t in 0..l {
            let row = (bi * l + t) * d;
            let bt = &b[(bi * l + t) * s..][..s];
            let ct = &c[(bi * l + t) * s..][..s];
            for ch in 0..d {
                let dt = delta[row + ch];
                let x = u[row + ch];
                let hs = &mut h[ch * s..][..s];
                let ac = &a[ch * s..][..s];
                let mut acc = T::zero();
                for k in 0..s {
                    hs[k] = (dt * ac[k]).exp() * hs[k] + dt * bt[k] * x;
                    acc += ct[k] * hs[k];
                }
                y[row + ch] = acc + d_skip[ch] * x;
            }
        }
    }
    y
}

pub(crate) struct ScanGrads<T> {
    pub u: Vec<T>,
    pub delta: Vec<T>,
    pub a_log: Vec<T>,
    pub b: Vec<T>,
    pub c: Vec<T>,
    pub d_skip: Vec<T>,
}

/// Hidden states are recomputed per batch element rather than saved.
#[allow(clippy::too_many_arguments)]
pub(crate) fn backward<T: Scalar>(
    dims: ScanDims,
    u: &[T],
    delta: &[T],
    a_log: &[T],
    b: &[T],
    c: &[T],
    d_skip: &[T],
    gy: &[T],
) -> ScanGrads<T> {
    let ScanDims { n, l, d, s } = dims;
    let a: Vec<T> = a_log.iter().map(|&v| -v.exp()).collect();
    let mut g = ScanGrads {
        u: vec![T::zero(); u.len()],
        delta: vec![T::zero(); delta.len()],
        a_log: vec![T::zero(); a_log.len()],
        b: vec![T::zero(); b.len()],
        c: vec![T::zero(); c.len()],
        d_skip: vec![T::zero(); d],
    };
    let mut ga = vec![T::zero(); d * s];
    // states[t] holds h_t for t in 0..l, each d*s
    let mut states = vec![T::zero(); l * d * s];
    let mut gh = vec![T::zero(); d * s];
    for bi in 0..n {
        let mut prev_off: Option<usize> = None;
        for t in 0..l {
            let row = (bi * l + t) * d;
            let bt = &b[(bi * l + t) * s..][..s];
            let off = t * d * s;
            for ch in 0..d {
                let dt = delta[row + ch];
                let x = u[row + ch];
                for k in 0..s {
                    let hp = prev_off.map_or(T::zero(), |p| states[p + ch * s + k]);
                    states[off + ch * s + k] = (dt * a[ch * s + k]).exp() * hp + dt * bt[k] * x;
                }
            }
            prev_off = Some(off);
        }

        gh.iter_mut().for_each(|v| *v = T::zero());
        for t in (0..l).rev() {
            let row = (bi * l + t) * d;
            let srow = (bi * l + t) * s;
            for ch in 0..d {
                let gyv = gy[row + ch];
                let x = u[row + ch];
                let dt = delta[row + ch];
                g.u[row + ch] += d_skip[ch] * gyv;
                g.d_skip[ch] += gyv * x;
                let mut gdt = T::zero();
                let mut gx = T::zero();
                for k in 0..s {
                    let ak = a[ch * s + k];
                    let h_t = states[t * d * s + ch * s + k];
                    let hp = if t > 0 { states[(t - 1) * d * s + ch * s + k] } else { T::zero() };
                    let bk = b[srow + k];
                    let ght = gh[ch * s + k] + gyv * c[srow + k];
                    g.c[srow + k] += gyv * h_t;
                    let abar = (dt * ak).exp();
                    gdt += ght * (ak * abar * hp + bk * x);
                    ga[ch * s + k] += ght * dt * abar * hp;
                    g.b[srow + k] += ght * dt * x;
                    gx += ght * dt * bk;
                    gh[ch * s + k] = ght * abar;
                }
                g.delta[row + ch] = gdt;
                g.u[row + ch] += gx;
            }
        }
    }
    for ((ga_log, &gav), &av) in g.a_log.iter_mut().zip(&ga).zip(&a) {
        *ga_log = gav * av;
    }
    g
}
