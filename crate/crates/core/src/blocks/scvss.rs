use crate::error::Result;
use crate::params::{Bound, ParamBuilder};
use crate::scan::DirectionSet;
use crate::tensor::{Scalar, Tape, Var};

use super::{drop_path, to_nchw, to_nhwc, BlockConfig, ChannelNorm, Conv, Linear, Pass, Sca, VssBranch};

/// Three parallel branches (3x3 conv on the normalised input, snake-scan VSS,
/// raster VSS), each refined by its own [`Sca`], summed under DropPath into a
/// residual, then an MLP with its own residual:
///
/// `y = x + DropPath(SCA(conv(LN x)) + SCA(SnakeVSS x) + SCA(VSS x))`,
/// `out = y + fc2(gelu(fc1(LN y)))`.
#[derive(Clone, Debug)]
pub struct Scvss {
    pub norm: ChannelNorm,
    pub conv: Conv,
    pub snake: VssBranch,
    pub vss: VssBranch,
    pub sca_conv: Sca,
    pub sca_snake: Sca,
    pub sca_vss: Sca,
    pub mlp_norm: ChannelNorm,
    pub fc1: Linear,
    pub fc2: Linear,
    pub drop_path: f64,
}

impl Scvss {
    /// With `snake_enabled = false` the serpentine branch is replaced by a
    /// second raster-scan branch with its own weights.
    pub fn new(pb: &mut ParamBuilder, name: &str, cfg: &BlockConfig, snake_enabled: bool) -> Self {
        let c = cfg.channels;
        let hidden = cfg.hidden(cfg.mlp_ratio);
        let snake_dirs = if snake_enabled { DirectionSet::Serpentine } else { DirectionSet::Conventional };
        pb.nested(name, |pb| Scvss {
            norm: ChannelNorm::new(pb, "norm", c, cfg.norm_eps),
            conv: Conv::same(pb, "conv", c, c, 3),
            snake: VssBranch::new(pb, "snake", cfg, snake_dirs, false),
            vss: VssBranch::new(pb, "vss", cfg, DirectionSet::Conventional, false),
            sca_conv: Sca::new(pb, "sca_conv", cfg),
            sca_snake: Sca::new(pb, "sca_snake", cfg),
            sca_vss: Sca::new(pb, "sca_vss", cfg),
            mlp_norm: ChannelNorm::new(pb, "mlp_norm", c, cfg.norm_eps),
            fc1: Linear::new(pb, "fc1", c, hidden, true),
            fc2: Linear::new(pb, "fc2", hidden, c, true),
            drop_path: cfg.drop_path_rate,
        })
    }

    pub fn param_count(cfg: &BlockConfig) -> usize {
        let c = cfg.channels;
        let hidden = cfg.hidden(cfg.mlp_ratio);
        2 * c + (c * c * 9 + c) + 2 * VssBranch::param_count(cfg) + 3 * Sca::param_count(cfg) + 2 * c + (c * hidden + hidden) + (hidden * c + c)
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, p: &Bound, x: Var, pass: &mut Pass) -> Result<Var> {
        tape.push_scope("conv_branch");
        let xn = self.norm.forward_nchw(tape, p, x)?;
        let x_conv = self.conv.forward(tape, p, xn)?;
        let a = self.sca_conv.forward(tape, p, x_conv)?;
        tape.pop_scope();

        tape.push_scope("snake_branch");
        let x_snake = self.snake.forward(tape, p, x)?;
        let b = self.sca_snake.forward(tape, p, x_snake)?;
        tape.pop_scope();

        tape.push_scope("vss_branch");
        let x_vss = self.vss.forward(tape, p, x)?;
        let c = self.sca_vss.forward(tape, p, x_vss)?;
        tape.pop_scope();

        let branches = tape.add_n(&[a, b, c])?;
        let branches = drop_path(tape, branches, self.drop_path, pass)?;
        let y = tape.add(x, branches)?;

        tape.push_scope("mlp");
        let h = to_nhwc(tape, y)?;
        let h = self.mlp_norm.forward(tape, p, h)?;
        let h = self.fc1.forward(tape, p, h)?;
        let h = tape.gelu(h)?;
        let h = self.fc2.forward(tape, p, h)?;
        let h = to_nchw(tape, h)?;
        tape.pop_scope();
        tape.add(y, h)
    }
}
