use crate::error::Result;
use crate::params::{Bound, ParamBuilder};
use crate::scan::{multi_directional_scan, DirectionSet, S6Params};
use crate::tensor::{Scalar, Tape, Var};

use super::{to_nchw, to_nhwc, BlockConfig, ChannelNorm, Conv, Linear};

/// Expansion of the scanned inner width relative to the block width.
pub const VSS_EXPAND: usize = 2;

/// Visual state-space branch: LN, expand into main and gate paths, depthwise
/// 3x3 conv + SiLU + four-direction selective scan + LN on the main path,
/// SiLU on the gate, product, project back.
///
/// `residual` adds the input to the projection. The standalone branch uses it;
/// inside [`super::Scvss`] the module-level skip plays that role instead.
#[derive(Clone, Debug)]
pub struct VssBranch {
    pub norm_in: ChannelNorm,
    pub in_main: Linear,
    pub in_gate: Linear,
    pub dwconv: Conv,
    pub scans: Vec<S6Params>,
    pub norm_out: ChannelNorm,
    pub out_proj: Linear,
    pub directions: DirectionSet,
    pub residual: bool,
}

impl VssBranch {
    pub fn new(pb: &mut ParamBuilder, name: &str, cfg: &BlockConfig, directions: DirectionSet, residual: bool) -> Self {
        let c = cfg.channels;
        let di = VSS_EXPAND * c;
        let n_sets = if cfg.share_scan_params { 1 } else { 4 };
        pb.nested(name, |pb| VssBranch {
            norm_in: ChannelNorm::new(pb, "norm_in", c, cfg.norm_eps),
            in_main: Linear::new(pb, "in_main", c, di, false),
            in_gate: Linear::new(pb, "in_gate", c, di, false),
            dwconv: Conv::depthwise(pb, "dwconv", di, 3),
            scans: (0..n_sets).map(|k| pb.nested(format!("scan{k}"), |pb| S6Params::new(pb, di, cfg.n_state))).collect(),
            norm_out: ChannelNorm::new(pb, "norm_out", di, cfg.norm_eps),
            out_proj: Linear::new(pb, "out_proj", di, c, false),
            directions,
            residual,
        })
    }

    pub fn param_count(cfg: &BlockConfig) -> usize {
        let c = cfg.channels;
        let di = VSS_EXPAND * c;
        let sets = if cfg.share_scan_params { 1 } else { 4 };
        2 * c + 2 * c * di + (di * 9 + di) + sets * S6Params::param_count(di, cfg.n_state) + 2 * di + di * c
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, p: &Bound, x: Var) -> Result<Var> {
        let xh = to_nhwc(tape, x)?;
        let xn = self.norm_in.forward(tape, p, xh)?;

        let main = self.in_main.forward(tape, p, xn)?;
        let main = to_nchw(tape, main)?;
        let main = self.dwconv.forward(tape, p, main)?;
        let main = tape.silu(main)?;
        let main = multi_directional_scan(tape, main, &self.scans, p, self.directions)?;
        let main = to_nhwc(tape, main)?;
        let main = self.norm_out.forward(tape, p, main)?;

        let gate = self.in_gate.forward(tape, p, xn)?;
        let gate = tape.silu(gate)?;
        let y = tape.mul(main, gate)?;
        let y = self.out_proj.forward(tape, p, y)?;
        let y = to_nchw(tape, y)?;
        if self.residual {
            tape.add(y, x)
        } else {
            Ok(y)
        }
    }
}
