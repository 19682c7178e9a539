mod common;

use std::sync::Arc;

use common::{naive_conv2d, randn, rng, uniform};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use topowmamba::tensor::{grad_check, ConvSpec, GradCheckOptions, PoolKind, ResampleMode};
use topowmamba::wavelet::Band;
use topowmamba::{Result, Scalar, Tape, Tensor, Var};

#[test]
fn conv_matches_naive_loops_bitwise() {
    let mut r = rng(100);
    for draw in 0..100 {
        let groups = *[1, 1, 2, 3].choose(&mut r).unwrap();
        let cpg = r.gen_range(1..=3);
        let opg = r.gen_range(1..=3);
        let k: usize = r.gen_range(1..=4);
        let pad: usize = r.gen_range(0..=2);
        let stride = r.gen_range(1..=3);
        let h = r.gen_range(k.saturating_sub(2 * pad).max(1)..=9);
        let w = r.gen_range(k.saturating_sub(2 * pad).max(1)..=9);
        let n = r.gen_range(1..=2);
        let x = randn(&mut r, &[n, cpg * groups, h, w], 1.0);
        let wt = randn(&mut r, &[opg * groups, cpg, k, k], 1.0);
        let b: Option<Tensor<f64>> = r.gen_bool(0.5).then(|| randn(&mut r, &[opg * groups], 1.0));
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let wv = tape.constant(wt.clone());
        let bv = b.clone().map(|b| tape.constant(b));
        let y = tape.conv2d(xv, wv, bv, ConvSpec::new(stride, pad).with_groups(groups)).unwrap();
        let oracle = naive_conv2d(&x, &wt, b.as_ref(), stride, pad, groups);
        assert_eq!(tape.value(y), &oracle, "draw {draw}");
    }
}

#[test]
fn small_conv_example_matches_oracle() {
    let mut r = rng(101);
    let x = randn(&mut r, &[1, 2, 5, 5], 1.0);
    let w = randn(&mut r, &[3, 2, 3, 3], 1.0);
    let mut tape = Tape::new();
    let (xv, wv) = (tape.constant(x.clone()), tape.constant(w.clone()));
    let y = tape.conv2d(xv, wv, None, ConvSpec::new(2, 1)).unwrap();
    assert_eq!(tape.shape(y), &[1, 3, 3, 3]);
    assert_eq!(tape.value(y), &naive_conv2d(&x, &w, None, 2, 1, 1));
}

macro_rules! precision_case {
    ($inputs:expr, |$t:ident, $v:ident| $body:expr) => {{
        fn prog<T: Scalar>($t: &mut Tape<'_, T>, $v: &[Var]) -> Result<Var> {
            $body
        }
        let inputs = $inputs;
        let mut t64 = Tape::<f64>::new();
        let v: Vec<_> = inputs.iter().map(|t| t64.constant(t.clone())).collect();
        let y64 = prog(&mut t64, &v).unwrap();
        let mut t32 = Tape::<f32>::new();
        let v: Vec<_> = inputs.iter().map(|t| t32.constant(t.cast())).collect();
        let y32 = prog(&mut t32, &v).unwrap();
        let (a, b) = (t64.value(y64), t32.value(y32).cast::<f64>());
        for (p, q) in a.data().iter().zip(b.data()) {
            assert!((p - q).abs() <= 1e-4 * p.abs().max(1.0), "{} : {p} vs {q}", stringify!($body));
        }
    }};
}

#[test]
fn f32_and_f64_agree() {
    let mut r = rng(102);
    let x = uniform(&mut r, &[2, 3, 4, 6], -10.0, 10.0);
    let w = uniform(&mut r, &[4, 3, 3, 3], -1.0, 1.0);
    let lw = uniform(&mut r, &[5, 6], -1.0, 1.0);
    let g = uniform(&mut r, &[6], -2.0, 2.0);
    let seq = uniform(&mut r, &[2, 5, 3], -10.0, 10.0);
    let dt = uniform(&mut r, &[2, 5, 3], 0.01, 1.0);
    let al = uniform(&mut r, &[3, 4], -1.0, 1.0);
    let bc = uniform(&mut r, &[2, 5, 4], -1.0, 1.0);
    let d = uniform(&mut r, &[3], -1.0, 1.0);
    precision_case!(vec![x.clone(), w.clone()], |t, v| t.conv2d(v[0], v[1], None, ConvSpec::new(1, 1)));
    precision_case!(vec![x.clone(), lw.clone()], |t, v| t.linear(v[0], v[1], None));
    precision_case!(vec![x.clone(), g.clone()], |t, v| t.layer_norm(v[0], v[1], v[1], 1e-5));
    precision_case!(vec![x.clone()], |t, v| t.gelu(v[0]));
    precision_case!(vec![x.clone()], |t, v| t.silu(v[0]));
    precision_case!(vec![x.clone()], |t, v| t.sigmoid(v[0]));
    precision_case!(vec![x.clone()], |t, v| t.softplus(v[0]));
    precision_case!(vec![x.clone()], |t, v| t.softmax(v[0]));
    precision_case!(vec![x.clone()], |t, v| t.log_softmax(v[0]));
    precision_case!(vec![x.clone()], |t, v| t.pool_reduce(v[0], PoolKind::GlobalAvg));
    precision_case!(vec![x.clone()], |t, v| t.pool_reduce(v[0], PoolKind::ChannelMean));
    precision_case!(vec![x.clone()], |t, v| t.resample2d(v[0], ResampleMode::Bilinear));
    precision_case!(vec![x.clone()], |t, v| t.dwt_band(v[0], Band::Hl));
    precision_case!(vec![x.clone(), x.clone()], |t, v| t.mul(v[0], v[1]));
    precision_case!(vec![seq, dt, al, bc.clone(), bc, d], |t, v| t.selective_scan(v[0], v[1], v[2], v[3], v[4], v[5]));
}

#[derive(Clone, Debug)]
enum Step {
    Unary(usize),
    Softmax,
    LayerNorm { gamma: usize, beta: usize },
    Conv { w: usize, b: usize, stride: usize },
    Linear { w: usize },
    GlobalPool { max: bool, h: usize, w: usize },
    ChannelPool { max: bool, c: usize },
    Resample(bool),
    Permute([usize; 4]),
    Gather { axis: usize, index: Arc<[usize]> },
    SelfConcat,
    AddLeaf(usize),
    MulLeaf(usize),
    Square,
    Band(usize),
}

struct Program {
    steps: Vec<Step>,
    leaves: Vec<Tensor<f64>>,
    proj: Tensor<f64>,
}

fn random_program(r: &mut ChaCha8Rng) -> Program {
    let mut shape = [r.gen_range(1..=2), r.gen_range(1..=4), 2 * r.gen_range(1..=4), 2 * r.gen_range(1..=4)];
    let mut leaves = vec![randn(r, &shape, 1.0)];
    let mut steps = Vec::new();
    let depth = r.gen_range(1..=6);
    let push = |leaves: &mut Vec<Tensor<f64>>, t: Tensor<f64>| {
        leaves.push(t);
        leaves.len() - 1
    };
    while steps.len() < depth {
        let [n, c, h, w] = shape;
        let step = match r.gen_range(0..15) {
            0 => Step::Unary(r.gen_range(0..5)),
            1 => Step::Softmax,
            // over fewer features the output barely depends on the input and the
            // true gradient sits below finite-difference round-off
            2 if w >= 4 => {
                let gamma = push(&mut leaves, randn(r, &[w], 1.0));
                let beta = push(&mut leaves, randn(r, &[w], 1.0));
                Step::LayerNorm { gamma, beta }
            }
            3 => {
                let cout = r.gen_range(1..=4);
                let stride = if h >= 4 && w >= 4 && r.gen_bool(0.5) { 2 } else { 1 };
                let wt = push(&mut leaves, randn(r, &[cout, c, 3, 3], 0.4));
                let b = push(&mut leaves, randn(r, &[cout], 0.5));
                shape = [n, cout, (h - 1) / stride + 1, (w - 1) / stride + 1];
                Step::Conv { w: wt, b, stride }
            }
            4 => {
                let dout = r.gen_range(1..=8);
                let wt = push(&mut leaves, randn(r, &[dout, w], 0.5));
                shape[3] = dout;
                Step::Linear { w: wt }
            }
            5 => Step::GlobalPool { max: r.gen_bool(0.5), h, w },
            6 => Step::ChannelPool { max: r.gen_bool(0.5), c },
            7 if h <= 4 && w <= 4 => {
                shape = [n, c, 2 * h, 2 * w];
                Step::Resample(r.gen_bool(0.5))
            }
            8 => {
                let mut p = [0, 1, 2, 3];
                p.shuffle(r);
                if shape[p[0]] > 4 || shape[p[1]] > 4 {
                    continue;
                }
                shape = [shape[p[0]], shape[p[1]], shape[p[2]], shape[p[3]]];
                Step::Permute(p)
            }
            9 => {
                let axis = r.gen_range(0..4);
                let len = r.gen_range(1..=shape[axis].max(2).min(if axis < 2 { 4 } else { 8 }));
                let index: Arc<[usize]> = (0..len).map(|_| r.gen_range(0..shape[axis])).collect();
                shape[axis] = len;
                Step::Gather { axis, index }
            }
            10 if c <= 2 => {
                shape[1] = 2 * c;
                Step::SelfConcat
            }
            11 => Step::AddLeaf(push(&mut leaves, randn(r, &shape, 1.0))),
            12 => Step::MulLeaf(push(&mut leaves, randn(r, &shape, 1.0))),
            13 => Step::Square,
            14 if h % 2 == 0 && w % 2 == 0 => {
                shape = [n, c, h / 2, w / 2];
                Step::Band(r.gen_range(0..4))
            }
            _ => continue,
        };
        steps.push(step);
    }
    let proj = randn(r, &shape, 1.0);
    Program { steps, leaves, proj }
}

fn run(t: &mut Tape<'_, f64>, v: &[Var], prog: &Program) -> Result<Var> {
    use topowmamba::tensor::PoolKind::*;
    let mut x = v[0];
    for step in &prog.steps {
        x = match step {
            Step::Unary(k) => match k {
                0 => t.relu(x)?,
                1 => t.gelu(x)?,
                2 => t.silu(x)?,
                3 => t.sigmoid(x)?,
                _ => t.softplus(x)?,
            },
            Step::Softmax => t.softmax(x)?,
            Step::LayerNorm { gamma, beta } => t.layer_norm(x, v[*gamma], v[*beta], 1e-5)?,
            Step::Conv { w, b, stride } => t.conv2d(x, v[*w], Some(v[*b]), ConvSpec::new(*stride, 1))?,
            Step::Linear { w } => t.linear(x, v[*w], None)?,
            Step::GlobalPool { max, h, w } => {
                let p = t.pool_reduce(x, if *max { GlobalMax } else { GlobalAvg })?;
                let p = t.repeat_axis(p, 2, *h)?;
                t.repeat_axis(p, 3, *w)?
            }
            Step::ChannelPool { max, c } => {
                let p = t.pool_reduce(x, if *max { ChannelMax } else { ChannelMean })?;
                t.repeat_axis(p, 1, *c)?
            }
            Step::Resample(bilinear) => t.resample2d(x, if *bilinear { ResampleMode::Bilinear } else { ResampleMode::Nearest })?,
            Step::Permute(p) => t.permute(x, p)?,
            Step::Gather { axis, index } => t.gather(x, *axis, Arc::clone(index))?,
            Step::SelfConcat => {
                let s = t.sigmoid(x)?;
                t.concat(&[x, s], 1)?
            }
            Step::AddLeaf(i) => t.add(x, v[*i])?,
            Step::MulLeaf(i) => t.mul(x, v[*i])?,
            Step::Square => t.mul(x, x)?,
            Step::Band(b) => t.dwt_band(x, Band::ALL[*b])?,
        };
    }
    let p = t.constant(prog.proj.clone());
    let y = t.mul(x, p)?;
    t.sum(y)
}

#[test]
fn random_programs_match_finite_differences() {
    let mut r = rng(103);
    for k in 0..50 {
        let prog = random_program(&mut r);
        let report = grad_check(
            |t, v| run(t, v, &prog),
            &prog.leaves,
            &GradCheckOptions { eps: 1e-5, tol: 1e-4, max_coords: Some(400), seed: k },
        )
        .unwrap();
        assert!(report.pass, "program {k}: {:?}\n{report:?}", prog.steps);
    }
}

#[test]
fn recording_is_deterministic() {
    let mut r = rng(104);
    let prog = random_program(&mut r);
    let eval = || {
        let mut t = Tape::new();
        let v: Vec<_> = prog.leaves.iter().map(|l| t.leaf(l.clone(), true)).collect();
        let y = run(&mut t, &v, &prog).unwrap();
        let loss = t.value(y).data()[0];
        let mut g = t.backward(y).unwrap();
        (loss.to_bits(), v.iter().map(|&v| g.take(v).unwrap()).collect::<Vec<_>>())
    };
    assert_eq!(eval(), eval());
}
