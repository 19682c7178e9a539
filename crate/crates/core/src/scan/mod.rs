//! Multi-directional selective scanning over 2D feature maps.

mod order;
pub mod s6;

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::params::{Bound, ParamBuilder, ParamId};
use crate::tensor::{Scalar, Tape, Var};

pub use order::{build_scan_order, Direction, DirectionSet, ScanOrder};

/// Flattens `x: [N, C, H, W]` into one `[N, H*W, C]` sequence per order.
pub fn expand<T: Scalar>(tape: &mut Tape<'_, T>, x: Var, orders: &[ScanOrder]) -> Result<Vec<Var>> {
    let (n, c, h, w) = tape.value(x).dims4()?;
    if let Some(o) = orders.iter().find(|o| (o.h, o.w) != (h, w)) {
        return Err(Error::shape("expand", format!("order built for {}x{}, map is {h}x{w}", o.h, o.w)));
    }
    let nhwc = tape.permute(x, &[0, 2, 3, 1])?;
    let flat = tape.reshape(nhwc, &[n, h * w, c])?;
    orders.iter().map(|o| tape.gather(flat, 1, Arc::clone(&o.forward_index))).collect()
}

/// Scatters each `[N, L, C]` sequence back through its order and sums the
/// results in order into `[N, C, H, W]`.
pub fn merge<T: Scalar>(tape: &mut Tape<'_, T>, seqs: &[Var], orders: &[ScanOrder]) -> Result<Var> {
    if seqs.len() != orders.len() || seqs.is_empty() {
        return Err(Error::shape("merge", format!("{} sequences for {} orders", seqs.len(), orders.len())));
    }
    let (h, w) = (orders[0].h, orders[0].w);
    let s0 = tape.shape(seqs[0]).to_vec();
    let &[n, l, c] = s0.as_slice() else {
        return Err(Error::shape("merge", format!("sequence must be [N, L, C], got {s0:?}")));
    };
    let mut grids = Vec::with_capacity(seqs.len());
    for (&s, o) in seqs.iter().zip(orders) {
        if tape.shape(s) != s0.as_slice() || l != o.h * o.w || (o.h, o.w) != (h, w) {
            return Err(Error::shape("merge", format!("sequence {:?} does not fit a {}x{} order", tape.shape(s), o.h, o.w)));
        }
        grids.push(tape.gather(s, 1, Arc::clone(&o.inverse_index))?);
    }
    let sum = tape.add_n(&grids)?;
    let nhwc = tape.reshape(sum, &[n, h, w, c])?;
    tape.permute(nhwc, &[0, 3, 1, 2])
}

/// Parameters of one selective-scan direction.
#[derive(Clone, Debug)]
pub struct S6Params {
    /// `[rank, D]` low-rank step-size projection.
    pub dt_down: ParamId,
    /// `[D, rank]`
    pub dt_up: ParamId,
    /// `[D]`
    pub dt_bias: ParamId,
    /// `[S, D]`
    pub b_proj: ParamId,
    /// `[S, D]`
    pub c_proj: ParamId,
    /// `[D, S]`, `A = -exp(a_log)`
    pub a_log: ParamId,
    /// `[D]`
    pub d_skip: ParamId,
    pub n_state: usize,
}

impl S6Params {
    pub fn dt_rank(d_inner: usize) -> usize {
        d_inner.div_ceil(16).max(1)
    }

    /// Step-size bias is initialised so `softplus(bias)` is log-uniform in
    /// `[1e-3, 1e-1]`; `a_log[d, s] = ln(s + 1)`; skip weights are one.
    pub fn new(pb: &mut ParamBuilder, d_inner: usize, n_state: usize) -> Self {
        let rank = Self::dt_rank(d_inner);
        let dt_down = pb.trunc_normal("dt_down", &[rank, d_inner]);
        let dt_up = pb.trunc_normal("dt_up", &[d_inner, rank]);
        let dt_bias = pb.custom("dt_bias", &[d_inner], |rng| {
            use rand::Rng;
            let (lo, hi) = (1e-3f64.ln(), 1e-1f64.ln());
            let dt = (lo + rng.gen::<f64>() * (hi - lo)).exp();
            dt + (-(-dt).exp_m1()).ln()
        });
        let b_proj = pb.trunc_normal("b_proj", &[n_state, d_inner]);
        let c_proj = pb.trunc_normal("c_proj", &[n_state, d_inner]);
        let mut k = 0usize;
        let a_log = pb.custom("a_log", &[d_inner, n_state], |_| {
            let v = ((k % n_state) as f64 + 1.0).ln();
            k += 1;
            v
        });
        let d_skip = pb.ones("d_skip", &[d_inner]);
        S6Params { dt_down, dt_up, dt_bias, b_proj, c_proj, a_log, d_skip, n_state }
    }

    pub fn param_count(d_inner: usize, n_state: usize) -> usize {
        let rank = Self::dt_rank(d_inner);
        2 * rank * d_inner + d_inner + 2 * n_state * d_inner + d_inner * n_state + d_inner
    }
}

/// Projects `seq: [N, L, D]` to step sizes and input/output matrices, then
/// runs the selective scan.
pub fn s6_scan<T: Scalar>(tape: &mut Tape<'_, T>, seq: Var, p: &S6Params, bound: &Bound) -> Result<Var> {
    let low = tape.linear(seq, bound[p.dt_down], None)?;
    let dt_raw = tape.linear(low, bound[p.dt_up], Some(bound[p.dt_bias]))?;
    let delta = tape.softplus(dt_raw)?;
    let b = tape.linear(seq, bound[p.b_proj], None)?;
    let c = tape.linear(seq, bound[p.c_proj], None)?;
    tape.selective_scan(seq, delta, bound[p.a_log], b, c, bound[p.d_skip])
}

/// expand, one S6 per direction, merge. `params` holds four sets, or one set
/// shared by all four directions.
pub fn multi_directional_scan<T: Scalar>(
    tape: &mut Tape<'_, T>,
    x: Var,
    params: &[S6Params],
    bound: &Bound,
    set: DirectionSet,
) -> Result<Var> {
    if params.len() != 4 && params.len() != 1 {
        return Err(Error::InvalidArgument(format!("need 4 or 1 S6 parameter sets, got {}", params.len())));
    }
    let (_, _, h, w) = tape.value(x).dims4()?;
    let orders = set.directions().map(|d| build_scan_order(h, w, d)).into_iter().collect::<Result<Vec<_>>>()?;
    let seqs = expand(tape, x, &orders)?;
    let mut outs = Vec::with_capacity(4);
    for (k, &s) in seqs.iter().enumerate() {
        let p = &params[k % params.len()];
        outs.push(s6_scan(tape, s, p, bound)?);
    }
    merge(tape, &outs, &orders)
}
