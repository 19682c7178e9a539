//! Central finite-difference verification of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::{Tape, Tensor, Var};

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub eps: f64,
    pub tol: f64,
    /// Check at most this many coordinates, sampled without replacement.
    pub max_coords: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions { eps: 1e-4, tol: 1e-4, max_coords: None, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub checked: usize,
    /// (leaf, flat index) of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    pub pass: bool,
}

/// `|a - b| / max(|a|, |b|, 1e-8)`
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

fn evaluate<F>(f: &F, leaves: &[Tensor<f64>], want_grads: bool) -> Result<(f64, Vec<Tensor<f64>>)>
where
    F: for<'t> Fn(&mut Tape<'t, f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = leaves.iter().map(|l| tape.leaf(l.clone(), want_grads)).collect();
    let out = f(&mut tape, &vars)?;
    let value = tape.value(out);
    if value.numel() != 1 {
        return Err(Error::NonScalarLoss(value.shape().to_vec()));
    }
    let y = value.data()[0];
    if !y.is_finite() {
        return Err(Error::NonFinite { op: "grad_check", scope: String::new() });
    }
    if !want_grads {
        return Ok((y, Vec::new()));
    }
    let mut grads = tape.backward(out)?;
    let g = vars
        .iter()
        .zip(leaves)
        .map(|(&v, l)| grads.take(v).unwrap_or_else(|| Tensor::zeros(l.shape())))
        .collect();
    Ok((y, g))
}

/// Finite-difference formula.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stencil {
    /// `(f(x+h) - f(x-h)) / 2h`, error O(h^2).
    Central,
    /// `(-f(x+2h) + 8f(x+h) - 8f(x-h) + f(x-2h)) / 12h`, error O(h^4).
    FivePoint,
}

/// Compares the tape gradient of the scalar program `f` with respect to every
/// leaf against `(f(x+eps e) - f(x-eps e)) / 2eps`.
pub fn grad_check<F>(f: F, leaves: &[Tensor<f64>], opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&mut Tape<'t, f64>, &[Var]) -> Result<Var>,
{
    grad_check_with(f, leaves, opts, Stencil::Central)
}

pub fn grad_check_with<F>(f: F, leaves: &[Tensor<f64>], opts: &GradCheckOptions, stencil: Stencil) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&mut Tape<'t, f64>, &[Var]) -> Result<Var>,
{
    let (_, analytic) = evaluate(&f, leaves, true)?;
    let sizes: Vec<usize> = leaves.iter().map(Tensor::numel).collect();
    let total: usize = sizes.iter().sum();
    let coords: Vec<usize> = match opts.max_coords {
        Some(k) if k < total => {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            let mut v = sample(&mut rng, total, k).into_vec();
            v.sort_unstable();
            v
        }
        _ => (0..total).collect(),
    };

    let mut work: Vec<Tensor<f64>> = leaves.to_vec();
    let mut report = GradCheckReport { max_rel_err: 0.0, max_abs_err: 0.0, checked: 0, worst: None, pass: true };
    for flat in coords {
        let (mut leaf, mut idx) = (0, flat);
        while idx >= sizes[leaf] {
            idx -= sizes[leaf];
            leaf += 1;
        }
        let orig = work[leaf].data()[idx];
        let mut at = |k: f64| -> Result<f64> {
            work[leaf].data_mut()[idx] = orig + k * opts.eps;
            let (y, _) = evaluate(&f, &work, false)?;
            Ok(y)
        };
        let numeric = match stencil {
            Stencil::Central => (at(1.0)? - at(-1.0)?) / (2.0 * opts.eps),
            Stencil::FivePoint => (8.0 * (at(1.0)? - at(-1.0)?) - (at(2.0)? - at(-2.0)?)) / (12.0 * opts.eps),
        };
        work[leaf].data_mut()[idx] = orig;
        let a = analytic[leaf].data()[idx];
        let err = rel_err(a, numeric);
        report.max_abs_err = report.max_abs_err.max((a - numeric).abs());
        if err > report.max_rel_err || report.worst.is_none() {
            report.max_rel_err = err.max(report.max_rel_err);
            report.worst = Some((leaf, idx));
        }
        report.checked += 1;
    }
    report.pass = report.max_rel_err < opts.tol;
    Ok(report)
}
