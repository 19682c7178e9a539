use std::sync::Arc;

use crate::error::Result;
use crate::params::{Bound, ParamBuilder};
use crate::scan::{s6_scan, S6Params};
use crate::tensor::{Scalar, Tape, Var};
use crate::wavelet::{dwt2_tape, reflect_pad_index};

use super::{to_nchw, to_nhwc, BlockConfig, ChannelNorm, Conv, Linear};

/// Selective scan along the channel axis of an `[N, C, H, W]` map: each
/// spatial position is an independent length-`C` sequence of scalars, lifted
/// to `expand` features, scanned forward and in reversed channel order, summed
/// and projected back to one feature.
#[derive(Clone, Debug)]
pub struct ChannelMamba {
    pub lift: Linear,
    pub forward_scan: S6Params,
    pub backward_scan: S6Params,
    pub proj: Linear,
}

impl ChannelMamba {
    pub fn new(pb: &mut ParamBuilder, name: &str, cfg: &BlockConfig) -> Self {
        let e = cfg.channel_mamba_expand;
        pb.nested(name, |pb| ChannelMamba {
            lift: Linear::new(pb, "lift", 1, e, true),
            forward_scan: pb.nested("fwd", |pb| S6Params::new(pb, e, cfg.n_state)),
            backward_scan: pb.nested("bwd", |pb| S6Params::new(pb, e, cfg.n_state)),
            proj: Linear::new(pb, "proj", e, 1, true),
        })
    }

    pub fn param_count(cfg: &BlockConfig) -> usize {
        let e = cfg.channel_mamba_expand;
        2 * e + 2 * S6Params::param_count(e, cfg.n_state) + e + 1
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, p: &Bound, x: Var) -> Result<Var> {
        let (n, c, h, w) = tape.value(x).dims4()?;
        let seq = to_nhwc(tape, x)?;
        let seq = tape.reshape(seq, &[n * h * w, c, 1])?;
        let seq = self.lift.forward(tape, p, seq)?;
        let fwd = s6_scan(tape, seq, &self.forward_scan, p)?;
        let rev: Arc<[usize]> = (0..c).rev().collect();
        let seq_rev = tape.gather(seq, 1, Arc::clone(&rev))?;
        let bwd = s6_scan(tape, seq_rev, &self.backward_scan, p)?;
        let bwd = tape.gather(bwd, 1, rev)?;
        let y = tape.add(fwd, bwd)?;
        let y = self.proj.forward(tape, p, y)?;
        let y = tape.reshape(y, &[n, h, w, c])?;
        to_nchw(tape, y)
    }
}

/// Depthwise 3x3 then pointwise 1x1, applied to one high-frequency band.
#[derive(Clone, Debug)]
pub struct ShallowConv {
    pub depthwise: Conv,
    pub pointwise: Conv,
}

impl ShallowConv {
    fn new(pb: &mut ParamBuilder, name: &str, c: usize) -> Self {
        pb.nested(name, |pb| ShallowConv {
            depthwise: Conv::depthwise(pb, "dw", c, 3),
            pointwise: Conv::same(pb, "pw", c, c, 1),
        })
    }

    fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, p: &Bound, x: Var) -> Result<Var> {
        let y = self.depthwise.forward(tape, p, x)?;
        self.pointwise.forward(tape, p, y)
    }
}

/// Wavelet Mamba block:
/// `I' = WM(LN x) + x`, `I'' = FFN(LN I') + I'`, where WM decomposes with one
/// Haar level, refines LL with conv3x3 -> channel Mamba -> conv3x3 and each
/// high band with a shallow conv pair, then inverts the transform.
/// Odd extents are reflect-padded by one row/column and cropped afterwards.
#[derive(Clone, Debug)]
pub struct Wmb {
    pub norm1: ChannelNorm,
    pub ll_in: Conv,
    pub ll_mamba: ChannelMamba,
    pub ll_out: Conv,
    pub high: [ShallowConv; 3],
    pub norm2: ChannelNorm,
    pub ffn1: Linear,
    pub ffn2: Linear,
}

impl Wmb {
    pub fn new(pb: &mut ParamBuilder, name: &str, cfg: &BlockConfig) -> Self {
        let c = cfg.channels;
        let hidden = cfg.hidden(cfg.ffn_ratio);
        pb.nested(name, |pb| Wmb {
            norm1: ChannelNorm::new(pb, "norm1", c, cfg.norm_eps),
            ll_in: Conv::same(pb, "ll_in", c, c, 3),
            ll_mamba: ChannelMamba::new(pb, "ll_mamba", cfg),
            ll_out: Conv::same(pb, "ll_out", c, c, 3),
            high: [ShallowConv::new(pb, "lh", c), ShallowConv::new(pb, "hl", c), ShallowConv::new(pb, "hh", c)],
            norm2: ChannelNorm::new(pb, "norm2", c, cfg.norm_eps),
            ffn1: Linear::new(pb, "ffn1", c, hidden, true),
            ffn2: Linear::new(pb, "ffn2", hidden, c, true),
        })
    }

    pub fn param_count(cfg: &BlockConfig) -> usize {
        let c = cfg.channels;
        let hidden = cfg.hidden(cfg.ffn_ratio);
        let conv3 = c * c * 9 + c;
        let shallow = (c * 9 + c) + (c * c + c);
        2 * c + 2 * conv3 + ChannelMamba::param_count(cfg) + 3 * shallow + 2 * c + (c * hidden + hidden) + (hidden * c + c)
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, p: &Bound, x: Var) -> Result<Var> {
        let (_, _, h, w) = tape.value(x).dims4()?;
        let mut padded = x;
        if h % 2 == 1 {
            padded = tape.gather(padded, 2, reflect_pad_index(h).into())?;
        }
        if w % 2 == 1 {
            padded = tape.gather(padded, 3, reflect_pad_index(w).into())?;
        }

        let xn = self.norm1.forward_nchw(tape, p, padded)?;
        let [ll, lh, hl, hh] = dwt2_tape(tape, xn)?;
        let ll = self.ll_in.forward(tape, p, ll)?;
        let ll = self.ll_mamba.forward(tape, p, ll)?;
        let ll = self.ll_out.forward(tape, p, ll)?;
        let lh = self.high[0].forward(tape, p, lh)?;
        let hl = self.high[1].forward(tape, p, hl)?;
        let hh = self.high[2].forward(tape, p, hh)?;
        let mut wm = tape.iwt([ll, lh, hl, hh])?;
        if h % 2 == 1 {
            wm = tape.gather(wm, 2, (0..h).collect::<Vec<_>>().into())?;
        }
        if w % 2 == 1 {
            wm = tape.gather(wm, 3, (0..w).collect::<Vec<_>>().into())?;
        }
        let i1 = tape.add(wm, x)?;

        let f = to_nhwc(tape, i1)?;
        let f = self.norm2.forward(tape, p, f)?;
        let f = self.ffn1.forward(tape, p, f)?;
        let f = tape.gelu(f)?;
        let f = self.ffn2.forward(tape, p, f)?;
        let f = to_nchw(tape, f)?;
        tape.add(i1, f)
    }
}
