use crate::tensor::Scalar;

/// Pointwise nonlinearities with closed-form derivatives.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Relu,
    /// tanh approximation
    Gelu,
    Silu,
    Sigmoid,
    Softplus,
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C: f64 = 0.044_715;

#[inline]
pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
pub(crate) fn softplus<T: Scalar>(x: T) -> T {
    if x > T::of(20.0) {
        x
    } else {
        x.exp().ln_1p()
    }
}

impl Unary {
    pub fn name(self) -> &'static str {
        match self {
            Unary::Relu => "relu",
            Unary::Gelu => "gelu",
            Unary::Silu => "silu",
            Unary::Sigmoid => "sigmoid",
            Unary::Softplus => "softplus",
        }
    }

    #[inline]
    pub fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Unary::Relu => x.max(T::zero()),
            Unary::Gelu => {
                let inner = T::of(GELU_K) * (x + T::of(GELU_C) * x * x * x);
                T::of(0.5) * x * (T::one() + inner.tanh())
            }
            Unary::Silu => x * sigmoid(x),
            Unary::Sigmoid => sigmoid(x),
            Unary::Softplus => softplus(x),
        }
    }

    /// d apply / dx, given input `x` and output `y`.
    #[inline]
    pub fn derivative<T: Scalar>(self, x: T, y: T) -> T {
        match self {
            Unary::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Unary::Gelu => {
                let k = T::of(GELU_K);
                let c = T::of(GELU_C);
                let t = (k * (x + c * x * x * x)).tanh();
                let half = T::of(0.5);
                half * (T::one() + t) + half * x * (T::one() - t * t) * k * (T::one() + T::of(3.0) * c * x * x)
            }
            Unary::Silu => {
                let s = sigmoid(x);
                s * (T::one() + x * (T::one() - s))
            }
            Unary::Sigmoid => y * (T::one() - y),
            Unary::Softplus => sigmoid(x),
        }
    }
}

/// Softmax over contiguous rows of length `c`.
pub(crate) fn softmax<T: Scalar>(x: &[T], c: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for (xr, or) in x.chunks_exact(c).zip(out.chunks_exact_mut(c)) {
        let m = xr.iter().copied().fold(T::neg_infinity(), T::max);
        let mut s = T::zero();
        for (o, &v) in or.iter_mut().zip(xr) {
            *o = (v - m).exp();
            s += *o;
        }
        for o in or.iter_mut() {
            *o /= s;
        }
    }
    out
}

pub(crate) fn softmax_backward<T: Scalar>(y: &[T], gout: &[T], c: usize) -> Vec<T> {
    let mut gx = vec![T::zero(); y.len()];
    for ((yr, gr), gxr) in y.chunks_exact(c).zip(gout.chunks_exact(c)).zip(gx.chunks_exact_mut(c)) {
        let dotp: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
        for k in 0..c {
            gxr[k] = yr[k] * (gr[k] - dotp);
        }
    }
    gx
}

pub(crate) fn log_softmax<T: Scalar>(x: &[T], c: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for (xr, or) in x.chunks_exact(c).zip(out.chunks_exact_mut(c)) {
        let m = xr.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = m + xr.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
        for (o, &v) in or.iter_mut().zip(xr) {
            *o = v - lse;
        }
    }
    out
}

pub(crate) fn log_softmax_backward<T: Scalar>(y: &[T], gout: &[T], c: usize) -> Vec<T> {
    let mut gx = vec![T::zero(); y.len()];
    for ((yr, gr), gxr) in y.chunks_exact(c).zip(gout.chunks_exact(c)).zip(gx.chunks_exact_mut(c)) {
        let s: T = gr.iter().copied().sum();
        for k in 0..c {
            gxr[k] = gr[k] - yr[k].exp() * s;
        }
    }
    gx
}
