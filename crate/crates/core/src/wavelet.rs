//! Single-level orthonormal 2D Haar transform.
//!
//! For each 2x2 block `[[a, b], [c, d]]`:
//! `ll = (a+b+c+d)/2`, `lh = (a+b-c-d)/2`, `hl = (a-b+c-d)/2`, `hh = (a-b-c+d)/2`.
//! The 4x4 coefficient matrix is symmetric and orthonormal, so it is its own
//! inverse and energy is preserved exactly up to rounding.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// Orientation tag stored alongside decomposed bands.
pub const CONVENTION: &str = "haar-orthonormal/lh=row-pair-difference/hl=column-pair-difference";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Band {
    Ll,
    Lh,
    Hl,
    Hh,
}

impl Band {
    pub const ALL: [Band; 4] = [Band::Ll, Band::Lh, Band::Hl, Band::Hh];

    /// Signs applied to (a, b, c, d).
    fn signs(self) -> [f64; 4] {
        match self {
            Band::Ll => [1.0, 1.0, 1.0, 1.0],
            Band::Lh => [1.0, 1.0, -1.0, -1.0],
            Band::Hl => [1.0, -1.0, 1.0, -1.0],
            Band::Hh => [1.0, -1.0, -1.0, 1.0],
        }
    }
}

/// The four sub-bands of one decomposition level, each `[N, C, H/2, W/2]`.
#[derive(Clone, Debug, PartialEq)]
pub struct WaveletBands<T: Scalar = f32> {
    pub ll: Tensor<T>,
    pub lh: Tensor<T>,
    pub hl: Tensor<T>,
    pub hh: Tensor<T>,
    pub convention: &'static str,
}

impl<T: Scalar> WaveletBands<T> {
    pub fn energy(&self) -> f64 {
        [&self.ll, &self.lh, &self.hl, &self.hh].iter().map(|b| b.sum_of_squares()).sum()
    }
}

pub fn dwt2<T: Scalar>(x: &Tensor<T>) -> Result<WaveletBands<T>> {
    let (n, c, h, w) = x.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape("dwt2", format!("extents {h}x{w} must be even; reflect-pad first")));
    }
    let dims = [n, c, h, w];
    let half = [n, c, h / 2, w / 2];
    let band = |b| Tensor::from_parts(half.to_vec(), band_forward(x.data(), dims, b));
    Ok(WaveletBands {
        ll: band(Band::Ll),
        lh: band(Band::Lh),
        hl: band(Band::Hl),
        hh: band(Band::Hh),
        convention: CONVENTION,
    })
}

pub fn iwt2<T: Scalar>(bands: &WaveletBands<T>) -> Result<Tensor<T>> {
    let s = bands.ll.shape();
    if [&bands.lh, &bands.hl, &bands.hh].iter().any(|b| b.shape() != s) {
        return Err(Error::shape("iwt2", "band shapes differ"));
    }
    let (n, c, h2, w2) = bands.ll.dims4()?;
    let dims = [n, c, 2 * h2, 2 * w2];
    let out = inverse_kernel([bands.ll.data(), bands.lh.data(), bands.hl.data(), bands.hh.data()], dims);
    Ok(Tensor::from_parts(dims.to_vec(), out))
}

/// Records the four bands of `x` on the tape, ordered (ll, lh, hl, hh).
pub fn dwt2_tape<T: Scalar>(tape: &mut Tape<'_, T>, x: Var) -> Result<[Var; 4]> {
    Ok([
        tape.dwt_band(x, Band::Ll)?,
        tape.dwt_band(x, Band::Lh)?,
        tape.dwt_band(x, Band::Hl)?,
        tape.dwt_band(x, Band::Hh)?,
    ])
}

/// `dims` is the full-resolution `[N, C, H, W]`.
pub(crate) fn band_forward<T: Scalar>(x: &[T], dims: [usize; 4], band: Band) -> Vec<T> {
    let [n, c, h, w] = dims;
    let (h2, w2) = (h / 2, w / 2);
    let [sa, sb, sc, sd] = band.signs().map(|s| T::of(s * 0.5));
    let mut out = Vec::with_capacity(n * c * h2 * w2);
    for p in 0..n * c {
        let xp = &x[p * h * w..][..h * w];
        for i in 0..h2 {
            let top = &xp[2 * i * w..][..w];
            let bot = &xp[(2 * i + 1) * w..][..w];
            for j in 0..w2 {
                let (a, b, cc, d) = (top[2 * j], top[2 * j + 1], bot[2 * j], bot[2 * j + 1]);
                out.push(sa * a + sb * b + sc * cc + sd * d);
            }
        }
    }
    out
}

pub(crate) fn band_backward<T: Scalar>(g: &[T], dims: [usize; 4], band: Band) -> Vec<T> {
    let [n, c, h, w] = dims;
    let (h2, w2) = (h / 2, w / 2);
    let [sa, sb, sc, sd] = band.signs().map(|s| T::of(s * 0.5));
    let mut gx = vec![T::zero(); n * c * h * w];
    for p in 0..n * c {
        let gp = &g[p * h2 * w2..][..h2 * w2];
        let xp = &mut gx[p * h * w..][..h * w];
        for i in 0..h2 {
            for j in 0..w2 {
                let v = gp[i * w2 + j];
                xp[2 * i * w + 2 * j] = sa * v;
                xp[2 * i * w + 2 * j + 1] = sb * v;
                xp[(2 * i + 1) * w + 2 * j] = sc * v;
                xp[(2 * i + 1) * w + 2 * j + 1] = sd * v;
            }
        }
    }
    gx
}

pub(crate) fn inverse_kernel<T: Scalar>(bands: [&[T]; 4], dims: [usize; 4]) -> Vec<T> {
    let [n, c, h, w] = dims;
    let (h2, w2) = (h / 2, w / 2);
    let half = T::of(0.5);
    let mut out = vec![T::zero(); n * c * h * w];
    for p in 0..n * c {
        let op = &mut out[p * h * w..][..h * w];
        for i in 0..h2 {
            for j in 0..w2 {
                let k = p * h2 * w2 + i * w2 + j;
                let (ll, lh, hl, hh) = (bands[0][k], bands[1][k], bands[2][k], bands[3][k]);
                op[2 * i * w + 2 * j] = (ll + lh + hl + hh) * half;
                op[2 * i * w + 2 * j + 1] = (ll + lh - hl - hh) * half;
                op[(2 * i + 1) * w + 2 * j] = (ll - lh + hl - hh) * half;
                op[(2 * i + 1) * w + 2 * j + 1] = (ll - lh - hl + hh) * half;
            }
        }
    }
    out
}

/// Index map that reflect-pads an axis of length `len` by one trailing
/// element when `len` is odd (`[0, 1, .., len-1, len-2]`).
pub fn reflect_pad_index(len: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..len).collect();
    if len % 2 == 1 {
        idx.push(if len >= 2 { len - 2 } else { 0 });
    }
    idx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(data: &[f64], shape: &[usize]) -> Tensor<f64> {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn constant_image_has_only_low_band() {
        let x = Tensor::<f64>::full(&[1, 2, 4, 6], 3.0);
        let b = dwt2(&x).unwrap();
        assert!(b.ll.data().iter().all(|&v| v == 6.0));
        for band in [&b.lh, &b.hl, &b.hh] {
            assert!(band.data().iter().all(|&v| v == 0.0));
        }
        assert_eq!(iwt2(&b).unwrap(), x);
    }

    #[test]
    fn single_block_coefficients() {
        let x = t(&[1.0, 2.0, 3.0, 4.0], &[1, 1, 2, 2]);
        let b = dwt2(&x).unwrap();
        assert_eq!(b.ll.data(), &[5.0]);
        assert_eq!(b.lh.data(), &[-2.0]);
        assert_eq!(b.hl.data(), &[-1.0]);
        assert_eq!(b.hh.data(), &[0.0]);
        assert_eq!(iwt2(&b).unwrap(), x);
        assert_eq!(b.convention, CONVENTION);
    }

    #[test]
    fn odd_extent_rejected() {
        let x = Tensor::<f32>::zeros(&[1, 1, 3, 4]);
        assert!(matches!(dwt2(&x), Err(Error::Shape { .. })));
    }

    #[test]
    fn mismatched_bands_rejected() {
        let x = Tensor::<f32>::zeros(&[1, 1, 4, 4]);
        let mut b = dwt2(&x).unwrap();
        b.hh = Tensor::zeros(&[1, 1, 2, 1]);
        assert!(iwt2(&b).is_err());
    }

    #[test]
    fn reflect_index() {
        assert_eq!(reflect_pad_index(4), vec![0, 1, 2, 3]);
        assert_eq!(reflect_pad_index(5), vec![0, 1, 2, 3, 4, 3]);
        assert_eq!(reflect_pad_index(1), vec![0, 0]);
    }
}
