use crate::error::Result;
use crate::params::{Bound, ParamBuilder, ParamId};
use crate::tensor::{ConvSpec, Scalar, Tape, Var};

pub fn to_nhwc<T: Scalar>(tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
    tape.permute(x, &[0, 2, 3, 1])
}

pub fn to_nchw<T: Scalar>(tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
    tape.permute(x, &[0, 3, 1, 2])
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn new(pb: &mut ParamBuilder, name: &str, din: usize, dout: usize, bias: bool) -> Self {
        pb.nested(name, |pb| Linear {
            w: pb.trunc_normal("weight", &[dout, din]),
            b: bias.then(|| pb.zeros("bias", &[dout])),
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, p: &Bound, x: Var) -> Result<Var> {
        tape.linear(x, p[self.w], self.b.map(|b| p[b]))
    }
}

#[derive(Clone, Debug)]
pub struct Conv {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub spec: ConvSpec,
}

impl Conv {
    pub fn new(pb: &mut ParamBuilder, name: &str, cin: usize, cout: usize, k: usize, spec: ConvSpec) -> Self {
        pb.nested(name, |pb| Conv {
            w: pb.trunc_normal("weight", &[cout, cin / spec.groups, k, k]),
            b: Some(pb.zeros("bias", &[cout])),
            spec,
        })
    }

    /// `k x k`, stride 1, size-preserving padding.
    pub fn same(pb: &mut ParamBuilder, name: &str, cin: usize, cout: usize, k: usize) -> Self {
        Self::new(pb, name, cin, cout, k, ConvSpec::new(1, k / 2))
    }

    pub fn depthwise(pb: &mut ParamBuilder, name: &str, channels: usize, k: usize) -> Self {
        Self::new(pb, name, channels, channels, k, ConvSpec::new(1, k / 2).with_groups(channels))
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, p: &Bound, x: Var) -> Result<Var> {
        tape.conv2d(x, p[self.w], self.b.map(|b| p[b]), self.spec)
    }
}

/// Layer norm over the last axis.
#[derive(Clone, Debug)]
pub struct ChannelNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f64,
}

impl ChannelNorm {
    pub fn new(pb: &mut ParamBuilder, name: &str, channels: usize, eps: f64) -> Self {
        pb.nested(name, |pb| ChannelNorm {
            gamma: pb.ones("weight", &[channels]),
            beta: pb.zeros("bias", &[channels]),
            eps,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, p: &Bound, x: Var) -> Result<Var> {
        tape.layer_norm(x, p[self.gamma], p[self.beta], self.eps)
    }

    /// Normalises the channel axis of an `[N, C, H, W]` map.
    pub fn forward_nchw<T: Scalar>(&self, tape: &mut Tape<'_, T>, p: &Bound, x: Var) -> Result<Var> {
        let h = to_nhwc(tape, x)?;
        let h = self.forward(tape, p, h)?;
        to_nchw(tape, h)
    }
}
