//! Finite-difference gradient checks of each block and a tiny full model,
//! run on fresh well-conditioned parameters.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::blocks::{BlockConfig, Pass, PatchEmbed, PatchMerge, Sca, Scvss, VssBranch, Wmb};
use crate::error::{Error, Result};
use crate::eval::{seg_loss, LabelMask};
use crate::network::{Model, ModelConfig};
use crate::params::{Bound, ParamBuilder, ParamStore};
use crate::scan::DirectionSet;
use crate::tensor::{grad_check, grad_check_with, GradCheckOptions, GradCheckReport, Stencil};
use crate::{Tape, Tensor, Var};

pub const MODULES: [&str; 8] = ["sca", "vss", "snake-vss", "scvss", "wmb", "patch-embed", "patch-merge", "model"];

const BLOCK_EPS: f64 = 1e-5;
const MODEL_EPS: f64 = 3e-3;

fn randn(seed: u64, shape: &[usize], std: f64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| {
        let z: f64 = rng.sample(StandardNormal);
        z * std
    })
}

/// Matrices scaled by `1/sqrt(fan_in)`, norm gains near one, vectors of order 0.5.
pub fn conditioned_params(store: &ParamStore<f64>, seed: u64) -> Vec<Tensor<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    store
        .iter()
        .map(|(_, name, t)| {
            let shape = t.shape();
            let norm_gain = name.ends_with("weight") && shape.len() == 1;
            let (shift, scale) = if shape.len() >= 2 && !name.ends_with("a_log") {
                (0.0, 1.0 / ((t.numel() / shape[0]) as f64).sqrt())
            } else if norm_gain {
                (1.0, 0.2)
            } else {
                (0.0, 0.5)
            };
            Tensor::from_fn(shape, |_| {
                let z: f64 = rng.sample(StandardNormal);
                shift + scale * z
            })
        })
        .collect()
}

fn build<M>(seed: u64, f: impl FnOnce(&mut ParamBuilder) -> M) -> Result<(M, ParamStore<f64>)> {
    let mut pb = ParamBuilder::seeded(seed);
    let m = f(&mut pb);
    Ok((m, pb.finish()?))
}

/// Checks `sum(f(x) * R)` for a fixed random projection `R`.
fn check_projected<F>(x: Tensor<f64>, params: Vec<Tensor<f64>>, opts: &GradCheckOptions, f: F) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&mut Tape<'t, f64>, &Bound, Var) -> Result<Var>,
{
    let mut leaves = vec![x];
    leaves.extend(params);
    grad_check(
        |t, v| {
            let bound = Bound::from_vars(v[1..].to_vec());
            let y = f(t, &bound, v[0])?;
            let proj = randn(0x5eed, t.shape(y), 1.0);
            let p = t.constant(proj);
            let y = t.mul(y, p)?;
            t.sum(y)
        },
        &leaves,
        opts,
    )
}

fn block_config(c: usize) -> BlockConfig {
    BlockConfig { n_state: 4, ..BlockConfig::new(c) }
}

/// Configuration of the full-model check: five stages of widths 4 to 64 on 32×32 input.
pub fn tiny_model_config() -> ModelConfig {
    ModelConfig {
        stage_dims: vec![4, 8, 16, 32, 64],
        scvss_counts: vec![1, 1, 1, 1],
        input_size: [32, 32],
        ..ModelConfig::toy(3)
    }
}

/// Gradient check of one named module. `coords` bounds the number of sampled coordinates.
pub fn module_gradcheck(name: &str, tol: f64, coords: usize) -> Result<GradCheckReport> {
    let opts = |seed| GradCheckOptions { eps: BLOCK_EPS, tol, max_coords: Some(coords), seed };
    match name {
        "sca" => {
            let c = block_config(8);
            let (m, s) = build(20, |pb| Sca::new(pb, "sca", &c))?;
            check_projected(randn(21, &[1, 8, 5, 5], 1.0), conditioned_params(&s, 22), &opts(3), |t, p, x| m.forward(t, p, x))
        }
        "vss" | "snake-vss" => {
            let c = block_config(8);
            let set = if name == "vss" { DirectionSet::Conventional } else { DirectionSet::Serpentine };
            let (m, s) = build(23, |pb| VssBranch::new(pb, "vss", &c, set, true))?;
            check_projected(randn(24, &[1, 8, 4, 4], 1.0), conditioned_params(&s, 25), &opts(3), |t, p, x| m.forward(t, p, x))
        }
        "scvss" => {
            let c = block_config(8);
            let (m, s) = build(26, |pb| Scvss::new(pb, "blk", &c, true))?;
            check_projected(randn(27, &[1, 8, 4, 4], 1.0), conditioned_params(&s, 28), &opts(3), |t, p, x| {
                m.forward(t, p, x, &mut Pass::eval())
            })
        }
        "wmb" => {
            let c = block_config(8);
            let (m, s) = build(29, |pb| Wmb::new(pb, "wmb", &c))?;
            check_projected(randn(30, &[1, 8, 6, 6], 1.0), conditioned_params(&s, 31), &opts(3), |t, p, x| m.forward(t, p, x))
        }
        "patch-embed" => {
            let (m, s) = build(32, |pb| PatchEmbed::new(pb, "pe", 3, 8, 1e-5))?;
            check_projected(randn(33, &[1, 3, 8, 8], 1.0), conditioned_params(&s, 34), &opts(3), |t, p, x| m.forward(t, p, x))
        }
        "patch-merge" => {
            let (m, s) = build(35, |pb| PatchMerge::new(pb, "pm", 4, 8, 1e-5))?;
            check_projected(randn(36, &[1, 4, 4, 4], 1.0), conditioned_params(&s, 37), &opts(3), |t, p, x| m.forward(t, p, x))
        }
        "model" => {
            let cfg = tiny_model_config();
            let model: Model<f64> = Model::build(&cfg, 1)?;
            let [h, w] = cfg.input_size;
            let gt = LabelMask::new(h, w, (0..h * w).map(|i| ((i / w) / 11) as u8).collect())?;
            let mut leaves = vec![randn(2, &[1, 1, h, w], 1.0)];
            leaves.extend(conditioned_params(&model.params, 7));
            let opts = GradCheckOptions { eps: MODEL_EPS, tol, max_coords: Some(coords), seed: 5 };
            grad_check_with(
                |t, v| {
                    let bound = Bound::from_vars(v[1..].to_vec());
                    let out = model.arch.forward(t, &bound, v[0], &mut Pass::eval(), true)?;
                    seg_loss(t, &out, std::slice::from_ref(&gt))
                },
                &leaves,
                &opts,
                Stencil::FivePoint,
            )
        }
        other => Err(Error::InvalidArgument(format!("unknown module {other:?}; expected one of {}", MODULES.join(", ")))),
    }
}
