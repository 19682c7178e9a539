use crate::tensor::Scalar;

/// Reduction used by the attention blocks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolKind {
    /// Max over H and W, output `[N, C, 1, 1]`.
    GlobalMax,
    /// Mean over H and W, output `[N, C, 1, 1]`.
    GlobalAvg,
    /// Max over C, output `[N, 1, H, W]`.
    ChannelMax,
    /// Mean over C, output `[N, 1, H, W]`.
    ChannelMean,
}

impl PoolKind {
    pub fn out_shape(self, n: usize, c: usize, h: usize, w: usize) -> [usize; 4] {
        match self {
            PoolKind::GlobalMax | PoolKind::GlobalAvg => [n, c, 1, 1],
            PoolKind::ChannelMax | PoolKind::ChannelMean => [n, 1, h, w],
        }
    }
}

/// Forward reduction. For max kinds the second value holds the flat source
/// index of the first maximal element of each output.
pub(crate) fn forward<T: Scalar>(x: &[T], dims: [usize; 4], kind: PoolKind) -> (Vec<T>, Vec<usize>) {
    let [n, c, h, w] = dims;
    let plane = h * w;
    match kind {
        PoolKind::GlobalMax => {
            let mut out = Vec::with_capacity(n * c);
            let mut arg = Vec::with_capacity(n * c);
            for p in 0..n * c {
                let base = p * plane;
                let mut best = base;
                for i in base + 1..base + plane {
                    if x[i] > x[best] {
                        best = i;
                    }
                }
                out.push(x[best]);
                arg.push(best);
            }
            (out, arg)
        }
        PoolKind::GlobalAvg => {
            let inv = T::one() / T::of(plane as f64);
            let out = (0..n * c).map(|p| x[p * plane..][..plane].iter().copied().sum::<T>() * inv).collect();
            (out, Vec::new())
        }
        PoolKind::ChannelMax => {
            let mut out = Vec::with_capacity(n * plane);
            let mut arg = Vec::with_capacity(n * plane);
            for b in 0..n {
                for s in 0..plane {
                    let mut best = b * c * plane + s;
                    for ch in 1..c {
                        let i = (b * c + ch) * plane + s;
                        if x[i] > x[best] {
                            best = i;
                        }
                    }
                    out.push(x[best]);
                    arg.push(best);
                }
            }
            (out, arg)
        }
        PoolKind::ChannelMean => {
            let inv = T::one() / T::of(c as f64);
            let mut out = vec![T::zero(); n * plane];
            for b in 0..n {
                let o = &mut out[b * plane..][..plane];
                for ch in 0..c {
                    for (v, &xv) in o.iter_mut().zip(&x[(b * c + ch) * plane..][..plane]) {
                        *v += xv;
                    }
                }
                for v in o.iter_mut() {
                    *v *= inv;
                }
            }
            (out, Vec::new())
        }
    }
}

pub(crate) fn backward<T: Scalar>(gout: &[T], dims: [usize; 4], kind: PoolKind, argmax: &[usize]) -> Vec<T> {
    let [n, c, h, w] = dims;
    let plane = h * w;
    let mut gx = vec![T::zero(); n * c * plane];
    match kind {
        PoolKind::GlobalMax | PoolKind::ChannelMax => {
            for (&i, &g) in argmax.iter().zip(gout) {
                gx[i] += g;
            }
        }
        PoolKind::GlobalAvg => {
            let inv = T::one() / T::of(plane as f64);
            for p in 0..n * c {
                let g = gout[p] * inv;
                gx[p * plane..][..plane].iter_mut().for_each(|v| *v = g);
            }
        }
        PoolKind::ChannelMean => {
            let inv = T::one() / T::of(c as f64);
            for b in 0..n {
                for ch in 0..c {
                    let dst = &mut gx[(b * c + ch) * plane..][..plane];
                    for (v, &g) in dst.iter_mut().zip(&gout[b * plane..][..plane]) {
                        *v = g * inv;
                    }
                }
            }
        }
    }
    gx
}
