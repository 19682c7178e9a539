use crate::error::{Error, Result};
use crate::params::{Bound, ParamBuilder};
use crate::tensor::{ConvSpec, Scalar, Tape, Var};

use super::{to_nchw, ChannelNorm, Conv, Linear};

fn require_even<T: Scalar>(tape: &Tape<'_, T>, x: Var, op: &'static str) -> Result<(usize, usize, usize, usize)> {
    let (n, c, h, w) = tape.value(x).dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(op, format!("extents {h}x{w} must be even")));
    }
    Ok((n, c, h, w))
}

/// 2x2 stride-2 convolution followed by channel layer norm.
#[derive(Clone, Debug)]
pub struct PatchEmbed {
    pub proj: Conv,
    pub norm: ChannelNorm,
}

impl PatchEmbed {
    pub fn new(pb: &mut ParamBuilder, name: &str, cin: usize, cout: usize, eps: f64) -> Self {
        pb.nested(name, |pb| PatchEmbed {
            proj: Conv::new(pb, "proj", cin, cout, 2, ConvSpec::new(2, 0)),
            norm: ChannelNorm::new(pb, "norm", cout, eps),
        })
    }

    pub fn param_count(cin: usize, cout: usize) -> usize {
        cout * cin * 4 + cout + 2 * cout
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, p: &Bound, x: Var) -> Result<Var> {
        require_even(tape, x, "patch_embed")?;
        let y = self.proj.forward(tape, p, x)?;
        self.norm.forward_nchw(tape, p, y)
    }
}

/// Gathers each 2x2 neighbourhood into `4C` channels ordered (row offset,
/// column offset, channel), layer-normalises, and projects to `cout`
/// (normally `2C`) without bias.
#[derive(Clone, Debug)]
pub struct PatchMerge {
    pub norm: ChannelNorm,
    pub reduction: Linear,
}

impl PatchMerge {
    pub fn new(pb: &mut ParamBuilder, name: &str, cin: usize, cout: usize, eps: f64) -> Self {
        pb.nested(name, |pb| PatchMerge {
            norm: ChannelNorm::new(pb, "norm", 4 * cin, eps),
            reduction: Linear::new(pb, "reduction", 4 * cin, cout, false),
        })
    }

    pub fn param_count(cin: usize, cout: usize) -> usize {
        8 * cin + 4 * cin * cout
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, p: &Bound, x: Var) -> Result<Var> {
        let (n, c, h, w) = require_even(tape, x, "patch_merge")?;
        let (h2, w2) = (h / 2, w / 2);
        let y = tape.reshape(x, &[n, c, h2, 2, w2, 2])?;
        let y = tape.permute(y, &[0, 2, 4, 3, 5, 1])?;
        let y = tape.reshape(y, &[n, h2, w2, 4 * c])?;
        let y = self.norm.forward(tape, p, y)?;
        let y = self.reduction.forward(tape, p, y)?;
        to_nchw(tape, y)
    }
}
