use crate::error::Result;
use crate::params::{Bound, ParamBuilder};
use crate::tensor::{PoolKind, Scalar, Tape, Var};

use super::{BlockConfig, Conv, Linear};

/// Two-stage attention refinement.
///
/// Stage one gates channels with `sigmoid(fc2(relu(fc1(max))) + fc2(relu(fc1(avg))))`
/// over spatially pooled statistics (the FC pair is shared by both pools).
/// Stage two gates positions with `sigmoid(conv7x7([max_c, mean_c]))` over the
/// channel statistics of the stage-one output.
#[derive(Clone, Debug)]
pub struct Sca {
    pub fc1: Linear,
    pub fc2: Linear,
    pub conv: Conv,
}

impl Sca {
    pub fn hidden_width(cfg: &BlockConfig) -> usize {
        cfg.channels.div_ceil(cfg.sca_reduction).max(1)
    }

    pub fn new(pb: &mut ParamBuilder, name: &str, cfg: &BlockConfig) -> Self {
        let c = cfg.channels;
        let hidden = Self::hidden_width(cfg);
        pb.nested(name, |pb| Sca {
            fc1: Linear::new(pb, "fc1", c, hidden, true),
            fc2: Linear::new(pb, "fc2", hidden, c, true),
            conv: Conv::same(pb, "conv", 2, 1, 7),
        })
    }

    pub fn param_count(cfg: &BlockConfig) -> usize {
        let (c, h) = (cfg.channels, Self::hidden_width(cfg));
        (c * h + h) + (h * c + c) + (2 * 49 + 1)
    }

    fn pooled_logits<T: Scalar>(&self, tape: &mut Tape<'_, T>, p: &Bound, x: Var, kind: PoolKind) -> Result<Var> {
        let (n, c, _, _) = tape.value(x).dims4()?;
        let pooled = tape.pool_reduce(x, kind)?;
        let flat = tape.reshape(pooled, &[n, c])?;
        let h = self.fc1.forward(tape, p, flat)?;
        let h = tape.relu(h)?;
        self.fc2.forward(tape, p, h)
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, p: &Bound, x: Var) -> Result<Var> {
        let (n, c, h, w) = tape.value(x).dims4()?;
        let from_max = self.pooled_logits(tape, p, x, PoolKind::GlobalMax)?;
        let from_avg = self.pooled_logits(tape, p, x, PoolKind::GlobalAvg)?;
        let logits = tape.add(from_max, from_avg)?;
        let gate = tape.sigmoid(logits)?;
        let gate = tape.reshape(gate, &[n, c, 1, 1])?;
        let gate = tape.repeat_axis(gate, 2, h)?;
        let gate = tape.repeat_axis(gate, 3, w)?;
        let xs = tape.mul(x, gate)?;

        let cmax = tape.pool_reduce(xs, PoolKind::ChannelMax)?;
        let cmean = tape.pool_reduce(xs, PoolKind::ChannelMean)?;
        let stats = tape.concat(&[cmax, cmean], 1)?;
        let logits = self.conv.forward(tape, p, stats)?;
        let gate = tape.sigmoid(logits)?;
        let gate = tape.repeat_axis(gate, 1, c)?;
        tape.mul(xs, gate)
    }
}
