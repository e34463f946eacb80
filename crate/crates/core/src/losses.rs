//! Training losses: supervised pixel cross-entropy, per-pixel entropy maps,
//! and the two adversarial losses.
//!
//! The adversarial pair is role-parameterized: the same functions serve the
//! inter-domain stage (source vs target) and the intra-domain stage (easy vs
//! hard split). The source-role input carries label 1, the target-role input
//! label 0, and the generator loss is the non-saturating form, which shares
//! its fixed points with the min-max objective but keeps gradients alive.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::maps::{EntropyMap, LabelMap, ProbMap};
use crate::tensor::Tensor;

pub use crate::autodiff::PROB_EPS;

/// Pixel reduction applied to a loss term. `Mean` divides by the pixel count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    Sum,
    Mean,
}

fn reduce(tape: &mut Tape, x: Var, reduction: Reduction) -> Result<Var> {
    match reduction {
        Reduction::Sum => tape.sum(x),
        Reduction::Mean => tape.mean(x),
    }
}

/// Supervised cross-entropy of a soft segmentation map against a label map:
/// `-sum_{h,w} sum_c y log p` with probabilities clamped to `PROB_EPS`.
/// `Mean` divides the pixel sum by `H*W`.
pub fn seg_cross_entropy(
    tape: &mut Tape,
    p: Var,
    y: &LabelMap,
    reduction: Reduction,
) -> Result<Var> {
    let shape = tape.value(p).shape().to_vec();
    let [c, h, w] = shape[..] else {
        return Err(Error::Dimension(format!(
            "seg_cross_entropy expects [C,H,W], got {shape:?}"
        )));
    };
    if c != y.class_count() || h != y.height() || w != y.width() {
        return Err(Error::Dimension(format!(
            "prediction [{c},{h},{w}] vs labels [{},{},{}]",
            y.class_count(),
            y.height(),
            y.width()
        )));
    }
    let onehot = tape.constant(y.to_onehot())?;
    let lp = tape.clamp_log(p)?;
    let picked = tape.mul(onehot, lp)?;
    let total = tape.sum(picked)?;
    let loss = tape.neg(total)?;
    match reduction {
        Reduction::Sum => Ok(loss),
        Reduction::Mean => tape.scale(loss, 1.0 / (h * w) as f32),
    }
}

/// Per-pixel Shannon entropy of a soft segmentation map, `[C,H,W] -> [1,H,W]`,
/// natural log, with `0 log 0 := 0` via the probability clamp.
pub fn entropy_map(tape: &mut Tape, p: Var) -> Result<Var> {
    let lp = tape.clamp_log(p)?;
    let plp = tape.mul(p, lp)?;
    let summed = tape.channel_sum(plp)?;
    tape.neg(summed)
}

/// Binary cross-entropy of the discriminator against its role labels:
/// source-role (domain source / easy split) is labeled 1, target-role
/// (domain target / hard split) 0, i.e. `-red[log d_src] - red[log(1-d_tgt)]`.
pub fn discriminator_loss(
    tape: &mut Tape,
    d_out_src: Var,
    d_out_tgt: Var,
    reduction: Reduction,
) -> Result<Var> {
    let (ss, st) = (
        tape.value(d_out_src).shape().to_vec(),
        tape.value(d_out_tgt).shape().to_vec(),
    );
    if ss != st {
        return Err(Error::Dimension(format!(
            "discriminator outputs {ss:?} vs {st:?}"
        )));
    }
    let log_src = tape.clamp_log(d_out_src)?;
    let flipped = tape.one_minus(d_out_tgt)?;
    let log_tgt = tape.clamp_log(flipped)?;
    let r_src = reduce(tape, log_src, reduction)?;
    let r_tgt = reduce(tape, log_tgt, reduction)?;
    let total = tape.add(r_src, r_tgt)?;
    tape.neg(total)
}

/// Non-saturating generator loss `-red[log d_tgt]`: pushes target-role
/// entropy maps to be classified as source-role.
pub fn generator_adv_loss(tape: &mut Tape, d_out_tgt: Var, reduction: Reduction) -> Result<Var> {
    let log_tgt = tape.clamp_log(d_out_tgt)?;
    let r = reduce(tape, log_tgt, reduction)?;
    tape.neg(r)
}

/// Stage objective `seg + adv_weight * adv`.
pub fn total_generator_objective(
    tape: &mut Tape,
    seg_loss: Var,
    adv_loss: Var,
    adv_weight: f32,
) -> Result<Var> {
    if adv_weight < 0.0 || !adv_weight.is_finite() {
        return Err(Error::Config(format!(
            "adv_weight must be non-negative, got {adv_weight}"
        )));
    }
    let weighted = tape.scale(adv_loss, adv_weight)?;
    tape.add(seg_loss, weighted)
}

// --- value-level wrappers (same formulas, throwaway tape) ---

pub fn entropy_map_of(p: &ProbMap) -> EntropyMap {
    let mut tape = Tape::new();
    let pv = tape
        .constant(p.tensor().clone())
        .expect("ProbMap tensors are finite");
    let e = entropy_map(&mut tape, pv).expect("entropy of a valid ProbMap");
    EntropyMap::from_tensor(tape.value(e)).expect("entropy values are valid")
}

pub fn seg_cross_entropy_value(p: &ProbMap, y: &LabelMap, reduction: Reduction) -> Result<f32> {
    let mut tape = Tape::new();
    let pv = tape.constant(p.tensor().clone())?;
    let loss = seg_cross_entropy(&mut tape, pv, y, reduction)?;
    tape.value(loss).item()
}

pub fn discriminator_loss_value(
    d_out_src: &Tensor,
    d_out_tgt: &Tensor,
    reduction: Reduction,
) -> Result<f32> {
    let mut tape = Tape::new();
    let s = tape.constant(d_out_src.clone())?;
    let t = tape.constant(d_out_tgt.clone())?;
    let loss = discriminator_loss(&mut tape, s, t, reduction)?;
    tape.value(loss).item()
}

pub fn generator_adv_loss_value(d_out_tgt: &Tensor, reduction: Reduction) -> Result<f32> {
    let mut tape = Tape::new();
    let t = tape.constant(d_out_tgt.clone())?;
    let loss = generator_adv_loss(&mut tape, t, reduction)?;
    tape.value(loss).item()
}
