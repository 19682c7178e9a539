use crate::error::{Error, Result};
use crate::network::SegVars;
use crate::tensor::{Scalar, Tape, Tensor, Var};

use super::LabelMask;

/// Smoothing added to numerator and denominator of the soft Dice.
pub const DICE_EPS: f64 = 1e-5;

/// `1 - mean_{n,k} (2 sum P Y + eps) / (sum P + sum Y + eps)` plus mean
/// per-pixel cross-entropy, for logits `[N, K, H, W]` and one label map per sample.
pub fn dice_ce_loss<T: Scalar>(tape: &mut Tape<'_, T>, logits: Var, gt: &[LabelMask]) -> Result<Var> {
    let (n, k, h, w) = tape.value(logits).dims4()?;
    if gt.len() != n {
        return Err(Error::shape("seg_loss", format!("{} label maps for batch of {n}", gt.len())));
    }
    let mut onehot = vec![T::zero(); n * h * w * k];
    let mut counts = vec![T::zero(); n * k];
    for (b, m) in gt.iter().enumerate() {
        if (m.h, m.w) != (h, w) {
            return Err(Error::shape("seg_loss", format!("label map {}x{} vs logits {h}x{w}", m.h, m.w)));
        }
        for (i, &c) in m.classes.iter().enumerate() {
            let c = c as usize;
            if c >= k {
                return Err(Error::InvalidArgument(format!("class id {c} out of range for {k} classes")));
            }
            onehot[(b * h * w + i) * k + c] = T::one();
            counts[b * k + c] += T::one();
        }
    }
    let y = tape.constant(Tensor::new(&[n, h * w, k], onehot)?);
    let ysum = tape.constant(Tensor::new(&[n, k], counts)?);

    let z = tape.permute(logits, &[0, 2, 3, 1])?;
    let z = tape.reshape(z, &[n, h * w, k])?;
    let logp = tape.log_softmax(z)?;
    let p = tape.softmax(z)?;

    let ylogp = tape.mul(y, logp)?;
    let ce = tape.sum(ylogp)?;
    let ce = tape.scale(ce, -1.0 / (n * h * w) as f64)?;

    let py = tape.mul(p, y)?;
    let inter = tape.sum_axis(py, 1)?;
    let psum = tape.sum_axis(p, 1)?;
    let num = tape.scale(inter, 2.0)?;
    let num = tape.add_scalar(num, DICE_EPS)?;
    let den = tape.add(psum, ysum)?;
    let den = tape.add_scalar(den, DICE_EPS)?;
    let ratio = tape.div(num, den)?;
    let mean_ratio = tape.mean(ratio)?;
    let dice = tape.scale(mean_ratio, -1.0)?;
    let dice = tape.add_scalar(dice, 1.0)?;
    tape.add(dice, ce)
}

/// Main loss plus `0.5^k` times the loss of each auxiliary output at `H/2^k`,
/// against labels down-sampled by taking the top-left pixel of each block.
pub fn seg_loss<T: Scalar>(tape: &mut Tape<'_, T>, out: &SegVars, gt: &[LabelMask]) -> Result<Var> {
    let mut total = dice_ce_loss(tape, out.main, gt)?;
    for (i, &aux) in out.aux.iter().enumerate() {
        let factor = 1usize << (i + 1);
        let small: Vec<LabelMask> = gt.iter().map(|m| m.downsample(factor)).collect::<Result<_>>()?;
        let l = dice_ce_loss(tape, aux, &small)?;
        let l = tape.scale(l, 0.5f64.powi(i as i32 + 1))?;
        total = tape.add(total, l)?;
    }
    Ok(total)
}
