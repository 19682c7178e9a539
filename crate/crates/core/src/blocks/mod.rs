//! Composite blocks: attention refinement, (snake) visual state-space
//! branches, the three-branch SCVSS module, the wavelet Mamba block, and the
//! down-sampling layers between encoder stages.

mod layers;
mod patch;
mod sca;
mod scvss;
mod vss;
mod wmb;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tape, Tensor, Var};

pub use layers::{to_nchw, to_nhwc, ChannelNorm, Conv, Linear};
pub use patch::{PatchEmbed, PatchMerge};
pub use sca::Sca;
pub use scvss::Scvss;
pub use vss::VssBranch;
pub use wmb::{ChannelMamba, Wmb};

/// Hyper-parameters shared by the blocks of one stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockConfig {
    pub channels: usize,
    pub mlp_ratio: f64,
    pub drop_path_rate: f64,
    pub n_state: usize,
    pub ffn_ratio: f64,
    pub norm_eps: f64,
    /// Hidden width of the attention FC pair is `ceil(channels / sca_reduction)`.
    pub sca_reduction: usize,
    /// One S6 parameter set for all four directions of a branch.
    pub share_scan_params: bool,
    /// Feature width of each channel-sequence token in the wavelet block.
    pub channel_mamba_expand: usize,
}

impl BlockConfig {
    pub fn new(channels: usize) -> Self {
        BlockConfig {
            channels,
            mlp_ratio: 4.0,
            drop_path_rate: 0.0,
            n_state: 16,
            ffn_ratio: 4.0,
            norm_eps: 1e-5,
            sca_reduction: 8,
            share_scan_params: false,
            channel_mamba_expand: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.channels == 0 || self.n_state == 0 || self.sca_reduction == 0 || self.channel_mamba_expand == 0 {
            return bad(format!("block sizes must be positive: {self:?}"));
        }
        if !(0.0..1.0).contains(&self.drop_path_rate) {
            return bad(format!("drop_path_rate {} outside [0, 1)", self.drop_path_rate));
        }
        if !(self.mlp_ratio > 0.0 && self.ffn_ratio > 0.0 && self.norm_eps > 0.0) {
            return bad("ratios and norm_eps must be positive".into());
        }
        Ok(())
    }

    pub(crate) fn hidden(&self, ratio: f64) -> usize {
        ((self.channels as f64 * ratio).round() as usize).max(1)
    }
}

/// Forward-pass mode. Training mode draws DropPath masks from a seeded stream.
#[derive(Clone, Debug)]
pub struct Pass {
    training: bool,
    rng: ChaCha8Rng,
}

impl Pass {
    pub fn eval() -> Self {
        Pass { training: false, rng: ChaCha8Rng::seed_from_u64(0) }
    }

    pub fn train(seed: u64) -> Self {
        Pass { training: true, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn is_training(&self) -> bool {
        self.training
    }
}

/// Per-sample DropPath multipliers: `0` with probability `p`, otherwise `1/(1-p)`.
pub fn drop_path_mask(n: usize, p: f64, rng: &mut impl Rng) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let keep = rng.gen::<f64>() >= p;
            if keep && p < 1.0 {
                1.0 / (1.0 - p)
            } else {
                0.0
            }
        })
        .collect()
}

/// Stochastic depth on a `[N, ...]` residual branch. Identity outside training.
pub fn drop_path<T: Scalar>(tape: &mut Tape<'_, T>, x: Var, p: f64, pass: &mut Pass) -> Result<Var> {
    if !pass.training || p <= 0.0 {
        return Ok(x);
    }
    let shape = tape.shape(x).to_vec();
    let n = shape[0];
    let mask = drop_path_mask(n, p, &mut pass.rng);
    let mut mshape = vec![1; shape.len()];
    mshape[0] = n;
    let mut m = tape.constant(Tensor::from_f64(&mshape, &mask)?);
    for (axis, &extent) in shape.iter().enumerate().skip(1) {
        if extent > 1 {
            m = tape.repeat_axis(m, axis, extent)?;
        }
    }
    tape.mul(x, m)
}
