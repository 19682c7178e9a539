use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Optional `(lo, hi)` clamp, min-max scaling to `[0, 1]` (a constant slice
/// becomes zeros), then bilinear resize to `target` when the size differs.
/// Returns `[1, th, tw]`.
pub fn preprocess_slice(img: &[f32], h: usize, w: usize, target: (usize, usize), window: Option<(f64, f64)>) -> Result<Tensor<f32>> {
    if img.is_empty() || h == 0 || w == 0 {
        return Err(Error::InvalidArgument("empty image".into()));
    }
    if img.len() != h * w {
        return Err(Error::shape("preprocess_slice", format!("{} pixels for {h}x{w}", img.len())));
    }
    if target.0 == 0 || target.1 == 0 {
        return Err(Error::InvalidArgument(format!("target size {target:?}")));
    }
    if img.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite pixel".into()));
    }
    if let Some((lo, hi)) = window {
        if !(lo < hi) {
            return Err(Error::InvalidArgument(format!("window ({lo}, {hi}) is empty")));
        }
    }
    let clamped: Vec<f64> = img
        .iter()
        .map(|&v| match window {
            Some((lo, hi)) => (v as f64).clamp(lo, hi),
            None => v as f64,
        })
        .collect();
    let (min, max) = clamped.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let range = max - min;
    let norm: Vec<f64> = clamped.iter().map(|&v| if range > 0.0 { (v - min) / range } else { 0.0 }).collect();
    let (th, tw) = target;
    let out = if (th, tw) == (h, w) { norm } else { resize_bilinear(&norm, h, w, th, tw) };
    Tensor::new(&[1, th, tw], out.into_iter().map(|v| v as f32).collect())
}

fn taps(o: usize, src: usize, dst: usize) -> (usize, usize, f64) {
    let c = ((o as f64 + 0.5) * src as f64 / dst as f64 - 0.5).clamp(0.0, (src - 1) as f64);
    let i0 = c.floor() as usize;
    let i1 = (i0 + 1).min(src - 1);
    (i0, i1, c - i0 as f64)
}

/// Half-pixel-centre bilinear interpolation to an arbitrary size.
pub fn resize_bilinear(src: &[f64], h: usize, w: usize, th: usize, tw: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(th * tw);
    for oy in 0..th {
        let (y0, y1, fy) = taps(oy, h, th);
        for ox in 0..tw {
            let (x0, x1, fx) = taps(ox, w, tw);
            let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
            let bot = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
            out.push(top * (1.0 - fy) + bot * fy);
        }
    }
    out
}

/// Nearest-neighbour resize of a label map (pixel-centre sampling).
pub fn resize_nearest<T: Copy>(src: &[T], h: usize, w: usize, th: usize, tw: usize) -> Vec<T> {
    let pick = |o: usize, s: usize, d: usize| (((o as f64 + 0.5) * s as f64 / d as f64) as usize).min(s - 1);
    (0..th * tw).map(|i| src[pick(i / tw, h, th) * w + pick(i % tw, w, tw)]).collect()
}
