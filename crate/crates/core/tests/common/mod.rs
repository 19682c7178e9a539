#![allow(dead_code)]

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use topowmamba::eval::LabelMask;
use topowmamba::params::{Bound, ParamStore};
use topowmamba::tensor::{grad_check, GradCheckOptions, GradCheckReport};
use topowmamba::{Result, Scalar, Tape, Tensor, Var};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn<T: Scalar>(rng: &mut ChaCha8Rng, shape: &[usize], std: f64) -> Tensor<T> {
    Tensor::from_fn(shape, |_| {
        let z: f64 = rng.sample(StandardNormal);
        T::of(z * std)
    })
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

/// Direct definition: every output sums over in-range taps only.
pub fn naive_conv2d(
    x: &Tensor<f64>,
    w: &Tensor<f64>,
    b: Option<&Tensor<f64>>,
    stride: usize,
    pad: usize,
    groups: usize,
) -> Tensor<f64> {
    let (n, cin, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (cout, cpg, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
    assert_eq!(cpg * groups, cin);
    let ho = (h + 2 * pad - kh) / stride + 1;
    let wo = (wd + 2 * pad - kw) / stride + 1;
    let opg = cout / groups;
    let mut out = vec![0.0; n * cout * ho * wo];
    for bi in 0..n {
        for co in 0..cout {
            let g = co / opg;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = 0.0;
                    for ci in 0..cpg {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                let xi = ((bi * cin + g * cpg + ci) * h + iy as usize) * wd + ix as usize;
                                let wi = ((co * cpg + ci) * kh + ky) * kw + kx;
                                acc += x.data()[xi] * w.data()[wi];
                            }
                        }
                    }
                    if let Some(b) = b {
                        acc += b.data()[co];
                    }
                    out[((bi * cout + co) * ho + oy) * wo + ox] = acc;
                }
            }
        }
    }
    Tensor::new(&[n, cout, ho, wo], out).unwrap()
}

/// Step-by-step recurrence, one (batch, channel, state) chain at a time.
pub fn s6_oracle(
    u: &Tensor<f64>,
    delta: &Tensor<f64>,
    a_log: &Tensor<f64>,
    b: &Tensor<f64>,
    c: &Tensor<f64>,
    d_skip: &Tensor<f64>,
) -> Tensor<f64> {
    let (n, l, d) = (u.shape()[0], u.shape()[1], u.shape()[2]);
    let s = a_log.shape()[1];
    let at = |t: &Tensor<f64>, i: &[usize]| t.at(i);
    let mut y = vec![0.0; n * l * d];
    for bi in 0..n {
        for ch in 0..d {
            for t in 0..l {
                y[(bi * l + t) * d + ch] = at(d_skip, &[ch]) * at(u, &[bi, t, ch]);
            }
            for k in 0..s {
                let a = -at(a_log, &[ch, k]).exp();
                let mut h = 0.0;
                for t in 0..l {
                    let dt = at(delta, &[bi, t, ch]);
                    h = (dt * a).exp() * h + dt * at(b, &[bi, t, k]) * at(u, &[bi, t, ch]);
                    y[(bi * l + t) * d + ch] += at(c, &[bi, t, k]) * h;
                }
            }
        }
    }
    Tensor::new(&[n, l, d], y).unwrap()
}

/// Fresh values for every parameter in a well-conditioned regime: matrices
/// scaled by `1/sqrt(fan_in)`, norm gains near one, vectors of order 0.5.
/// Gradient checks run here rather than at the small default initialisation,
/// where many gradients sit below finite-difference round-off.
pub fn redrawn(store: &ParamStore<f64>, seed: u64) -> Vec<Tensor<f64>> {
    let mut r = rng(seed);
    store
        .iter()
        .map(|(_, name, t)| {
            let shape = t.shape();
            let z: Tensor<f64> = randn(&mut r, shape, 1.0);
            let norm_gain = name.ends_with("weight") && shape.len() == 1;
            let scale = if shape.len() >= 2 && !name.ends_with("a_log") {
                1.0 / ((t.numel() / shape[0]) as f64).sqrt()
            } else if norm_gain {
                0.2
            } else {
                0.5
            };
            let shift = if norm_gain { 1.0 } else { 0.0 };
            z.map(|v| shift + scale * v)
        })
        .collect()
}

/// Gradient check of `sum(f(x) * proj)` with respect to the input and every
/// parameter of a module.
pub fn check_module<F>(x: Tensor<f64>, params: Vec<Tensor<f64>>, opts: &GradCheckOptions, f: F) -> GradCheckReport
where
    F: for<'t> Fn(&mut Tape<'t, f64>, &Bound, Var) -> Result<Var>,
{
    let mut leaves = vec![x];
    leaves.extend(params);
    let proj_seed = 0x5eed;
    grad_check(
        |t, v| {
            let bound = Bound::from_vars(v[1..].to_vec());
            let y = f(t, &bound, v[0])?;
            let shape = t.shape(y).to_vec();
            let proj: Tensor<f64> = randn(&mut rng(proj_seed), &shape, 1.0);
            let p = t.constant(proj);
            let y = t.mul(y, p)?;
            t.sum(y)
        },
        &leaves,
        opts,
    )
    .unwrap()
}

pub fn cells(m: &LabelMask, c: u8) -> HashSet<usize> {
    m.classes.iter().enumerate().filter(|(_, &v)| v == c).map(|(i, _)| i).collect()
}

/// Set counting with the empty-structure convention.
pub fn overlap_oracle(pred: &LabelMask, gt: &LabelMask, c: u8) -> (f64, f64) {
    let (a, b) = (cells(pred, c), cells(gt, c));
    if a.is_empty() && b.is_empty() {
        return (100.0, 100.0);
    }
    let i = a.intersection(&b).count();
    let u = a.union(&b).count();
    (200.0 * i as f64 / (a.len() + b.len()) as f64, 100.0 * i as f64 / u as f64)
}

pub fn boundary_oracle(m: &[bool], h: usize, w: usize) -> Vec<(usize, usize)> {
    let get = |y: isize, x: isize| y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w && m[y as usize * w + x as usize];
    let mut out = Vec::new();
    for y in 0..h as isize {
        for x in 0..w as isize {
            if get(y, x) && [(-1, 0), (1, 0), (0, -1), (0, 1)].iter().any(|&(dy, dx)| !get(y + dy, x + dx)) {
                out.push((y as usize, x as usize));
            }
        }
    }
    out
}

pub fn hd95_oracle(a: &[bool], b: &[bool], h: usize, w: usize, s: (f64, f64)) -> f64 {
    let (ba, bb) = (boundary_oracle(a, h, w), boundary_oracle(b, h, w));
    match (ba.is_empty(), bb.is_empty()) {
        (true, true) => return 0.0,
        (true, false) | (false, true) => return ((h as f64 * s.0).powi(2) + (w as f64 * s.1).powi(2)).sqrt(),
        _ => {}
    }
    let directed = |from: &[(usize, usize)], to: &[(usize, usize)]| {
        let mut d: Vec<f64> = from
            .iter()
            .map(|&(y, x)| {
                to.iter()
                    .map(|&(v, u)| {
                        let dy = (y as f64 - v as f64) * s.0;
                        let dx = (x as f64 - u as f64) * s.1;
                        (dy * dy + dx * dx).sqrt()
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        d.sort_by(|p, q| p.partial_cmp(q).unwrap());
        let rank = (95 * d.len() + 99) / 100;
        d[rank - 1]
    };
    directed(&ba, &bb).max(directed(&bb, &ba))
}

/// Blobs (filled rectangles and disks) over a background, with some pairs
/// forced empty.
pub fn blob_mask(r: &mut ChaCha8Rng, h: usize, w: usize, k: u8, empty: &[u8]) -> LabelMask {
    let mut classes = vec![0u8; h * w];
    for c in 1..k {
        if empty.contains(&c) {
            continue;
        }
        for _ in 0..r.gen_range(1..=2) {
            let (cy, cx) = (r.gen_range(0..h) as f64, r.gen_range(0..w) as f64);
            let rad = r.gen_range(1.0..8.0);
            let disk = r.gen_bool(0.5);
            for y in 0..h {
                for x in 0..w {
                    let (dy, dx) = (y as f64 - cy, x as f64 - cx);
                    let inside = if disk { dy * dy + dx * dx <= rad * rad } else { dy.abs() <= rad && dx.abs() <= rad * 0.6 };
                    if inside {
                        classes[y * w + x] = c;
                    }
                }
            }
        }
    }
    for v in classes.iter_mut() {
        if r.gen_bool(0.01) {
            *v = r.gen_range(0..k);
        }
    }
    for v in classes.iter_mut() {
        if empty.contains(v) {
            *v = 0;
        }
    }
    LabelMask::new(h, w, classes).unwrap()
}
