use crate::tensor::Scalar;

pub(crate) struct NormStats<T> {
    pub mean: Vec<T>,
    pub rstd: Vec<T>,
}

/// Layer norm over contiguous rows of length `c`.
pub(crate) fn forward<T: Scalar>(x: &[T], gamma: &[T], beta: &[T], c: usize, eps: T) -> (Vec<T>, NormStats<T>) {
    let rows = x.len() / c;
    let inv_c = T::one() / T::of(c as f64);
    let mut out = vec![T::zero(); x.len()];
    let mut mean = Vec::with_capacity(rows);
    let mut rstd = Vec::with_capacity(rows);
    for (xr, or) in x.chunks_exact(c).zip(out.chunks_exact_mut(c)) {
        let mu = xr.iter().copied().sum::<T>() * inv_c;
        let var = xr.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() * inv_c;
        let rs = T::one() / (var + eps).sqrt();
        for k in 0..c {
            or[k] = (xr[k] - mu) * rs * gamma[k] + beta[k];
        }
        mean.push(mu);
        rstd.push(rs);
    }
    (out, NormStats { mean, rstd })
}

/// Returns (grad_x, grad_gamma, grad_beta).
pub(crate) fn backward<T: Scalar>(
    x: &[T],
    gamma: &[T],
    gout: &[T],
    stats: &NormStats<T>,
    c: usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let inv_c = T::one() / T::of(c as f64);
    let mut gx = vec![T::zero(); x.len()];
    let mut gg = vec![T::zero(); c];
    let mut gb = vec![T::zero(); c];
    let mut xhat = vec![T::zero(); c];
    for (r, ((xr, gr), gxr)) in x.chunks_exact(c).zip(gout.chunks_exact(c)).zip(gx.chunks_exact_mut(c)).enumerate() {
        let (mu, rs) = (stats.mean[r], stats.rstd[r]);
        let mut mean_g = T::zero();
        let mut mean_gx = T::zero();
        for k in 0..c {
            xhat[k] = (xr[k] - mu) * rs;
            let gy = gr[k] * gamma[k];
            mean_g += gy;
            mean_gx += gy * xhat[k];
            gg[k] += gr[k] * xhat[k];
            gb[k] += gr[k];
        }
        mean_g *= inv_c;
        mean_gx *= inv_c;
        for k in 0..c {
            gxr[k] = rs * (gr[k] * gamma[k] - mean_g - xhat[k] * mean_gx);
        }
    }
    (gx, gg, gb)
}
