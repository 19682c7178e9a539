use std::borrow::Cow;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::scan::s6::{self, ScanDims};
use crate::wavelet::{self, Band};

use super::kernels::activation::{self, Unary};
use super::kernels::conv::{self, ConvGeom, ConvSpec};
use super::kernels::norm::{self, NormStats};
use super::kernels::pool::{self, PoolKind};
use super::kernels::resample::{self, ResampleMode};
use super::kernels::{linear, shape};
use super::{Scalar, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Conv2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    Linear { x: Var, w: Var, b: Option<Var>, rows: usize, din: usize, dout: usize },
    LayerNorm { x: Var, gamma: Var, beta: Var, stats: NormStats<T> },
    Pool { x: Var, kind: PoolKind, dims: [usize; 4], argmax: Vec<usize> },
    Resample { x: Var, dims: [usize; 4], mode: ResampleMode },
    Unary { x: Var, f: Unary },
    Softmax { x: Var, c: usize },
    LogSoftmax { x: Var, c: usize },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale { x: Var, c: T },
    AddScalar { x: Var },
    Concat { parts: Vec<(Var, usize)>, outer: usize, inner: usize },
    Reshape { x: Var },
    Permute { x: Var, perm: Vec<usize> },
    Gather { x: Var, outer: usize, extent: usize, inner: usize, index: Arc<[usize]> },
    SumAll { x: Var },
    SumAxis { x: Var, outer: usize, extent: usize, inner: usize },
    SelectiveScan { u: Var, delta: Var, a_log: Var, b: Var, c: Var, d_skip: Var, dims: ScanDims },
    DwtBand { x: Var, band: Band, dims: [usize; 4] },
    Iwt { bands: [Var; 4], dims: [usize; 4] },
}

struct Node<'a, T: Scalar> {
    value: Cow<'a, Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records a forward computation in topological order for one reverse pass.
///
/// Leaves may borrow their values (model parameters) for the lifetime `'a`.
pub struct Tape<'a, T: Scalar> {
    nodes: Vec<Node<'a, T>>,
    scope: Vec<String>,
    consumed: bool,
}

impl<T: Scalar> Default for Tape<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a, T: Scalar> Tape<'a, T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), scope: Vec::new(), consumed: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Appends a name to the layer path reported by non-finite errors.
    pub fn push_scope(&mut self, name: impl Into<String>) {
        self.scope.push(name.into());
    }

    pub fn pop_scope(&mut self) {
        self.scope.pop();
    }

    fn scope_path(&self) -> String {
        self.scope.join(".")
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn check_open(&self) -> Result<()> {
        if self.consumed {
            Err(Error::TapeReused)
        } else {
            Ok(())
        }
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value: Cow::Owned(value), op: Op::Leaf, requires_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// Registers a borrowed tensor as a gradient-requiring leaf.
    pub fn param(&mut self, value: &'a Tensor<T>) -> Var {
        self.nodes.push(Node { value: Cow::Borrowed(value), op: Op::Leaf, requires_grad: true });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, op_name: &'static str, shape: Vec<usize>, data: Vec<T>, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        self.check_open()?;
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { op: op_name, scope: self.scope_path() });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        // nothing downstream can reach a leaf through a node that needs no gradient
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node { value: Cow::Owned(Tensor::from_parts(shape, data)), op, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, format!("{:?} vs {:?} (no broadcasting)", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: ConvSpec) -> Result<Var> {
        let geom = ConvGeom::new(self.shape(x), self.shape(w), b.map(|b| self.shape(b)), spec)?;
        let out = conv::forward(&geom, self.value(x).data(), self.value(w).data(), b.map(|b| self.value(b).data()));
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push("conv2d", geom.out_shape().to_vec(), out, Op::Conv2d { x, w, b, geom }, &inputs)
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w);
        let din = *xs.last().unwrap();
        if ws.len() != 2 || ws[1] != din {
            return Err(Error::shape("linear", format!("input {xs:?} vs weight {ws:?}")));
        }
        let dout = ws[0];
        if let Some(b) = b {
            if self.shape(b) != [dout] {
                return Err(Error::shape("linear", format!("bias {:?} vs {dout} outputs", self.shape(b))));
            }
        }
        let rows = self.value(x).numel() / din;
        let out = linear::forward(self.value(x).data(), self.value(w).data(), b.map(|b| self.value(b).data()), rows, din, dout);
        let mut shape = xs;
        *shape.last_mut().unwrap() = dout;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push("linear", shape, out, Op::Linear { x, w, b, rows, din, dout }, &inputs)
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let c = *shape.last().unwrap();
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(Error::shape("layer_norm", format!("affine shapes {:?}/{:?} vs channels {c}", self.shape(gamma), self.shape(beta))));
        }
        let (out, stats) = norm::forward(self.value(x).data(), self.value(gamma).data(), self.value(beta).data(), c, T::of(eps));
        self.push("layer_norm", shape, out, Op::LayerNorm { x, gamma, beta, stats }, &[x, gamma, beta])
    }

    pub fn pool_reduce(&mut self, x: Var, kind: PoolKind) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let dims = [n, c, h, w];
        let (out, argmax) = pool::forward(self.value(x).data(), dims, kind);
        self.push("pool_reduce", kind.out_shape(n, c, h, w).to_vec(), out, Op::Pool { x, kind, dims, argmax }, &[x])
    }

    /// 2x spatial up-sampling.
    pub fn resample2d(&mut self, x: Var, mode: ResampleMode) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let dims = [n, c, h, w];
        let out = resample::forward(self.value(x).data(), dims, mode);
        self.push("resample2d", vec![n, c, 2 * h, 2 * w], out, Op::Resample { x, dims, mode }, &[x])
    }

    pub fn unary(&mut self, x: Var, f: Unary) -> Result<Var> {
        let out = self.value(x).data().iter().map(|&v| f.apply(v)).collect();
        let shape = self.shape(x).to_vec();
        self.push(f.name(), shape, out, Op::Unary { x, f }, &[x])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Relu)
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Gelu)
    }

    pub fn silu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Silu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Sigmoid)
    }

    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Softplus)
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let c = *shape.last().unwrap();
        let out = activation::softmax(self.value(x).data(), c);
        self.push("softmax", shape, out, Op::Softmax { x, c }, &[x])
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let c = *shape.last().unwrap();
        let out = activation::log_softmax(self.value(x).data(), c);
        self.push("log_softmax", shape, out, Op::LogSoftmax { x, c }, &[x])
    }

    fn binary(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        self.same_shape(name, a, b)?;
        let out = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| f(x, y)).collect();
        let shape = self.shape(a).to_vec();
        self.push(name, shape, out, op, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    /// Sums same-shape values left to right.
    pub fn add_n(&mut self, vars: &[Var]) -> Result<Var> {
        let (&first, rest) = vars.split_first().ok_or_else(|| Error::shape("add_n", "no inputs"))?;
        rest.iter().try_fold(first, |acc, &v| self.add(acc, v))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let c = T::of(c);
        let out = self.value(x).data().iter().map(|&v| v * c).collect();
        let shape = self.shape(x).to_vec();
        self.push("scale", shape, out, Op::Scale { x, c }, &[x])
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        let c = T::of(c);
        let out = self.value(x).data().iter().map(|&v| v + c).collect();
        let shape = self.shape(x).to_vec();
        self.push("add_scalar", shape, out, Op::AddScalar { x }, &[x])
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = self.shape(*parts.first().ok_or_else(|| Error::shape("concat", "no inputs"))?).to_vec();
        if axis >= first.len() {
            return Err(Error::shape("concat", format!("axis {axis} out of range for {first:?}")));
        }
        let mut extents = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            let same_elsewhere = s.len() == first.len() && s.iter().zip(&first).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !same_elsewhere {
                return Err(Error::shape("concat", format!("{s:?} incompatible with {first:?} on axis {axis}")));
            }
            extents.push(s[axis]);
        }
        let (outer, _, inner) = shape::split_at_axis(&first, axis);
        let views: Vec<(&[T], usize)> = parts.iter().zip(&extents).map(|(&p, &e)| (self.value(p).data(), e)).collect();
        let out = shape::concat(&views, outer, inner);
        let mut shape = first;
        shape[axis] = extents.iter().sum();
        let op = Op::Concat { parts: parts.iter().copied().zip(extents).collect(), outer, inner };
        self.push("concat", shape, out, op, parts)
    }

    pub fn reshape(&mut self, x: Var, new_shape: &[usize]) -> Result<Var> {
        let numel: usize = new_shape.iter().product();
        if numel != self.value(x).numel() || new_shape.contains(&0) {
            return Err(Error::shape("reshape", format!("{:?} -> {new_shape:?}", self.shape(x))));
        }
        let out = self.value(x).data().to_vec();
        self.push("reshape", new_shape.to_vec(), out, Op::Reshape { x }, &[x])
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let mut seen = vec![false; s.len()];
        if perm.len() != s.len() || perm.iter().any(|&p| p >= s.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::shape("permute", format!("{perm:?} is not a permutation of the axes of {s:?}")));
        }
        let out = shape::permute(self.value(x).data(), &s, perm);
        let shape = perm.iter().map(|&a| s[a]).collect();
        self.push("permute", shape, out, Op::Permute { x, perm: perm.to_vec() }, &[x])
    }

    /// Selects entries along `axis` by `index`. Indices may repeat or be omitted;
    /// the backward pass scatter-adds.
    pub fn gather(&mut self, x: Var, axis: usize, index: Arc<[usize]>) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || index.is_empty() || index.iter().any(|&i| i >= s[axis]) {
            return Err(Error::shape("gather", format!("bad index for axis {axis} of {s:?}")));
        }
        let (outer, extent, inner) = shape::split_at_axis(&s, axis);
        let out = shape::gather(self.value(x).data(), outer, extent, inner, &index);
        let mut shape = s;
        shape[axis] = index.len();
        self.push("gather", shape, out, Op::Gather { x, outer, extent, inner, index }, &[x])
    }

    /// Repeats a size-1 axis `times` times (explicit broadcast via gather).
    pub fn repeat_axis(&mut self, x: Var, axis: usize, times: usize) -> Result<Var> {
        if self.shape(x).get(axis) != Some(&1) {
            return Err(Error::shape("repeat_axis", format!("axis {axis} of {:?} is not singleton", self.shape(x))));
        }
        self.gather(x, axis, vec![0; times].into())
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).sum();
        self.push("sum", vec![1], vec![s], Op::SumAll { x }, &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).numel() as f64;
        let s = self.sum(x)?;
        self.scale(s, 1.0 / n)
    }

    /// Sums out `axis`; a rank-1 input reduces to shape `[1]`.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() {
            return Err(Error::shape("sum_axis", format!("axis {axis} out of range for {s:?}")));
        }
        let (outer, extent, inner) = shape::split_at_axis(&s, axis);
        let out = shape::sum_axis(self.value(x).data(), outer, extent, inner);
        let mut shape = s;
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        self.push("sum_axis", shape, out, Op::SumAxis { x, outer, extent, inner }, &[x])
    }

    /// Selective state-space recurrence. Shapes: `u`, `delta`: `[N, L, D]`;
    /// `a_log`: `[D, S]`; `b`, `c`: `[N, L, S]`; `d_skip`: `[D]`.
    pub fn selective_scan(&mut self, u: Var, delta: Var, a_log: Var, b: Var, c: Var, d_skip: Var) -> Result<Var> {
        let dims = ScanDims::infer(self.shape(u), self.shape(delta), self.shape(a_log), self.shape(b), self.shape(c), self.shape(d_skip))?;
        let out = s6::forward(
            dims,
            self.value(u).data(),
            self.value(delta).data(),
            self.value(a_log).data(),
            self.value(b).data(),
            self.value(c).data(),
            self.value(d_skip).data(),
        );
        let shape = self.shape(u).to_vec();
        self.push("selective_scan", shape, out, Op::SelectiveScan { u, delta, a_log, b, c, d_skip, dims }, &[u, delta, a_log, b, c, d_skip])
    }

    /// One Haar sub-band of a single-level orthonormal 2D DWT.
    pub fn dwt_band(&mut self, x: Var, band: Band) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::shape("dwt2", format!("extents {h}x{w} must be even")));
        }
        let dims = [n, c, h, w];
        let out = wavelet::band_forward(self.value(x).data(), dims, band);
        self.push("dwt2", vec![n, c, h / 2, w / 2], out, Op::DwtBand { x, band, dims }, &[x])
    }

    /// Inverse of the four Haar bands, ordered (ll, lh, hl, hh).
    pub fn iwt(&mut self, bands: [Var; 4]) -> Result<Var> {
        let s = self.shape(bands[0]).to_vec();
        if bands.iter().any(|&b| self.shape(b) != s.as_slice()) {
            return Err(Error::shape("iwt2", "band shapes differ"));
        }
        let [n, c, h2, w2] = *s.as_slice() else {
            return Err(Error::shape("iwt2", format!("expected rank-4 bands, got {s:?}")));
        };
        let dims = [n, c, 2 * h2, 2 * w2];
        let out = wavelet::inverse_kernel([
            self.value(bands[0]).data(),
            self.value(bands[1]).data(),
            self.value(bands[2]).data(),
            self.value(bands[3]).data(),
        ], dims);
        self.push("iwt2", dims.to_vec(), out, Op::Iwt { bands, dims }, &bands)
    }

    /// Reverse-mode pass from a scalar `loss`. Consumes the recording.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        self.check_open()?;
        if self.value(loss).numel() != 1 {
            return Err(Error::NonScalarLoss(self.shape(loss).to_vec()));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        let mut leaves: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let g = match node.op {
                Op::Leaf => {
                    let g = grads[i].take().unwrap_or_else(|| vec![T::zero(); node.value.numel()]);
                    leaves[i] = Some(Tensor::from_parts(node.value.shape().to_vec(), g));
                    continue;
                }
                _ => match grads[i].take() {
                    Some(g) => g,
                    None => continue,
                },
            };
            self.backward_node(i, &g, &mut grads);
        }
        // leaves recorded after the loss, or never reached, get zero gradients
        for (i, node) in self.nodes.iter().enumerate() {
            if node.requires_grad && matches!(node.op, Op::Leaf) && leaves[i].is_none() {
                leaves[i] = Some(Tensor::zeros(node.value.shape()));
            }
        }
        Ok(Gradients { leaves })
    }

    fn backward_node(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let val = |v: Var| self.nodes[v.0].value.data();
        let rg = |v: Var| self.nodes[v.0].requires_grad;
        let mut acc = |v: Var, gv: Vec<T>| accumulate(grads, v, gv);
        match &node.op {
            Op::Leaf => unreachable!(),
            Op::Conv2d { x, w, b, geom } => {
                let (gx, gw, gb) = conv::backward(geom, val(*x), val(*w), g, rg(*x), rg(*w), b.is_some_and(rg));
                gx.map(|gx| acc(*x, gx));
                gw.map(|gw| acc(*w, gw));
                if let (Some(b), Some(gb)) = (b, gb) {
                    acc(*b, gb);
                }
            }
            Op::Linear { x, w, b, rows, din, dout } => {
                let (gx, gw, gb) = linear::backward(val(*x), val(*w), g, *rows, *din, *dout, rg(*x), rg(*w), b.is_some_and(rg));
                gx.map(|gx| acc(*x, gx));
                gw.map(|gw| acc(*w, gw));
                if let (Some(b), Some(gb)) = (b, gb) {
                    acc(*b, gb);
                }
            }
            Op::LayerNorm { x, gamma, beta, stats } => {
                let c = val(*gamma).len();
                let (gx, gg, gb) = norm::backward(val(*x), val(*gamma), g, stats, c);
                if rg(*x) {
                    acc(*x, gx);
                }
                if rg(*gamma) {
                    acc(*gamma, gg);
                }
                if rg(*beta) {
                    acc(*beta, gb);
                }
            }
            Op::Pool { x, kind, dims, argmax } => acc(*x, pool::backward(g, *dims, *kind, argmax)),
            Op::Resample { x, dims, mode } => acc(*x, resample::backward(g, *dims, *mode)),
            Op::Unary { x, f } => {
                let y = node.value.data();
                let gx = val(*x).iter().zip(y).zip(g).map(|((&xv, &yv), &gv)| gv * f.derivative(xv, yv)).collect();
                acc(*x, gx);
            }
            Op::Softmax { x, c } => acc(*x, activation::softmax_backward(node.value.data(), g, *c)),
            Op::LogSoftmax { x, c } => acc(*x, activation::log_softmax_backward(node.value.data(), g, *c)),
            Op::Add(a, b) => {
                if rg(*a) {
                    acc(*a, g.to_vec());
                }
                if rg(*b) {
                    acc(*b, g.to_vec());
                }
            }
            Op::Sub(a, b) => {
                if rg(*a) {
                    acc(*a, g.to_vec());
                }
                if rg(*b) {
                    acc(*b, g.iter().map(|&v| -v).collect());
                }
            }
            Op::Mul(a, b) => {
                if rg(*a) {
                    acc(*a, g.iter().zip(val(*b)).map(|(&gv, &bv)| gv * bv).collect());
                }
                if rg(*b) {
                    acc(*b, g.iter().zip(val(*a)).map(|(&gv, &av)| gv * av).collect());
                }
            }
            Op::Div(a, b) => {
                let bv = val(*b);
                if rg(*a) {
                    acc(*a, g.iter().zip(bv).map(|(&gv, &d)| gv / d).collect());
                }
                if rg(*b) {
                    let y = node.value.data();
                    acc(*b, g.iter().zip(bv).zip(y).map(|((&gv, &d), &yv)| -gv * yv / d).collect());
                }
            }
            Op::Scale { x, c } => acc(*x, g.iter().map(|&v| v * *c).collect()),
            Op::AddScalar { x } | Op::Reshape { x } => acc(*x, g.to_vec()),
            Op::Concat { parts, outer, inner } => {
                let total = parts.iter().map(|p| p.1).sum();
                let mut offset = 0;
                for &(p, extent) in parts {
                    if rg(p) {
                        acc(p, shape::concat_part(g, *outer, total, *inner, offset, extent));
                    }
                    offset += extent;
                }
            }
            Op::Permute { x, perm } => {
                acc(*x, shape::permute(g, node.value.shape(), &shape::inverse_perm(perm)));
            }
            Op::Gather { x, outer, extent, inner, index } => {
                acc(*x, shape::scatter_add(g, *outer, *extent, *inner, index));
            }
            Op::SumAll { x } => acc(*x, vec![g[0]; val(*x).len()]),
            Op::SumAxis { x, outer, extent, inner } => acc(*x, shape::sum_axis_backward(g, *outer, *extent, *inner)),
            Op::SelectiveScan { u, delta, a_log, b, c, d_skip, dims } => {
                let sg = s6::backward(*dims, val(*u), val(*delta), val(*a_log), val(*b), val(*c), val(*d_skip), g);
                for (v, gv) in [(*u, sg.u), (*delta, sg.delta), (*a_log, sg.a_log), (*b, sg.b), (*c, sg.c), (*d_skip, sg.d_skip)] {
                    if rg(v) {
                        acc(v, gv);
                    }
                }
            }
            Op::DwtBand { x, band, dims } => acc(*x, wavelet::band_backward(g, *dims, *band)),
            Op::Iwt { bands, dims } => {
                for (k, &bv) in bands.iter().enumerate() {
                    if rg(bv) {
                        acc(bv, wavelet::band_forward(g, *dims, Band::ALL[k]));
                    }
                }
            }
        }
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Vec<T>>], v: Var, g: Vec<T>) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, x) in existing.iter_mut().zip(g) {
                *e += x;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

/// Gradients of every gradient-requiring leaf after a backward pass.
pub struct Gradients<T: Scalar> {
    leaves: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of a leaf; `None` for non-leaf or constant handles.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.leaves.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.leaves.get_mut(v.0).and_then(Option::take)
    }
}
