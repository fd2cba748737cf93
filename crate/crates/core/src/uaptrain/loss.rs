//! Attack objective: neighbor-pair exponential penalty, scaled l2 penalty,
//! cosine fooling term, and their weighted combination.

use super::{AttackConfig, AttackError, LossVariant};
use crate::audio::AudioClip;
use crate::gradcore::{GradError, Tensor};
use crate::spkmodel::{ModelError, SpeakerModel};

/// Pair penalty: exponential in the magnitude increase, exponential in the
/// new magnitude on a nonzero sign flip, zero otherwise. A zero on either
/// side never counts as a sign flip.
pub fn phi(x: f64, y: f64) -> f64 {
    if y.abs() > x.abs() {
        (y.abs() - x.abs()).exp() - 1.0
    } else if x != 0.0 && y != 0.0 && x.signum() != y.signum() {
        y.abs().exp() - 1.0
    } else {
        0.0
    }
}

/// Scalar twin of `exp_tv_loss` over raw values, circular pairing.
pub fn exp_tv_value(values: &[f64]) -> f64 {
    let l = values.len();
    assert!(l >= 2, "need at least two samples for neighbor pairs");
    let mut sum = 0.0;
    for i in 0..l {
        sum += phi(values[i], values[(i + 1) % l]);
    }
    sum / l as f64
}

/// Scalar twin of `l2_loss` over raw values.
pub fn l2_value(values: &[f64]) -> f64 {
    crate::gradcore::deterministic_dot(values, values).sqrt() / values.len() as f64
}

/// Mean of `phi` over neighbor pairs of the patch, with the last sample
/// paired back to the first. `circular = false` drops that wrap pair but
/// keeps the same normalizer.
///
/// Branch selection is frozen from the current patch values into constant
/// masks, so the gradient is the active piece's derivative.
pub fn exp_tv_loss(patch: &Tensor, circular: bool) -> Result<Tensor, GradError> {
    let l = patch.numel();
    if patch.shape() != [l] || l < 2 {
        return Err(GradError::ShapeMismatch {
            op: "exp_tv_loss",
            left: patch.shape().to_vec(),
            right: vec![2],
        });
    }
    let tape = patch.tape_handle();
    let next = patch.roll(1)?;
    let xv = patch.data();
    let yv = next.data();
    let mut grow_mask = vec![0.0; l];
    let mut flip_mask = vec![0.0; l];
    for i in 0..l {
        let (x, y) = (xv[i], yv[i]);
        if y.abs() > x.abs() {
            grow_mask[i] = 1.0;
        } else if x != 0.0 && y != 0.0 && x.signum() != y.signum() {
            flip_mask[i] = 1.0;
        }
    }
    if !circular {
        grow_mask[l - 1] = 0.0;
        flip_mask[l - 1] = 0.0;
    }
    let grow_mask = tape.input(&[l], grow_mask)?;
    let flip_mask = tape.input(&[l], flip_mask)?;
    let ax = patch.abs();
    let ay = next.abs();
    let grow = ay.sub(&ax)?.exp().add_scalar(-1.0);
    let flip = ay.exp().add_scalar(-1.0);
    let terms = grow_mask.mul(&grow)?.add(&flip_mask.mul(&flip)?)?;
    Ok(terms.sum_all().scale(1.0 / l as f64))
}

/// l2 norm of the patch divided by its length.
pub fn l2_loss(patch: &Tensor) -> Result<Tensor, GradError> {
    let l = patch.numel();
    Ok(patch.mul(patch)?.sum_all().sqrt()?.scale(1.0 / l as f64))
}

/// Cosine similarity between the clean clip's embedding and the embedding of
/// the clip with the patch tiled over it. The clean embedding enters as a
/// constant, so gradients flow only into the patch.
///
/// `clean_embedding` skips recomputing the clean forward pass when the caller
/// already has it; it must be `model.embed(clip)` for the same clip.
pub fn fooling_loss(
    model: &SpeakerModel,
    clip: &AudioClip,
    clean_embedding: Option<&[f64]>,
    patch: &Tensor,
) -> Result<Tensor, ModelError> {
    let n = clip.len();
    let min = model.min_input_len();
    if n < min {
        return Err(ModelError::TooShort { len: n, min });
    }
    let clean = match clean_embedding {
        Some(e) => e.to_vec(),
        None => model.embed(clip)?,
    };
    let tape = patch.tape_handle();
    let mt = model.stage(&tape, false)?;
    let x = tape.input(&[n], clip.samples.clone())?;
    let adv = x.add(&patch.tile_to(n)?)?.reshape(&[1, n])?;
    let emb = model.embedding_graph(&mt, &adv)?;
    let clean = tape.input(&[clean.len()], clean)?;
    Ok(emb.cosine_similarity(&clean)?)
}

/// Weighted batch objective: `w_fooling * mean(fooling) + w_reg * variant`.
pub fn total_loss(
    model: &SpeakerModel,
    clips: &[&AudioClip],
    patch: &Tensor,
    cfg: &AttackConfig,
) -> Result<Tensor, AttackError> {
    if clips.is_empty() {
        return Err(AttackError::EmptyBatch);
    }
    let mut fool_sum: Option<Tensor> = None;
    for clip in clips {
        let f = fooling_loss(model, clip, None, patch)?;
        fool_sum = Some(match fool_sum {
            Some(acc) => acc.add(&f)?,
            None => f,
        });
    }
    let fooling = fool_sum.unwrap().scale(1.0 / clips.len() as f64);
    let reg = match cfg.loss_variant {
        LossVariant::ExpTv => exp_tv_loss(patch, cfg.circular_pairs)?,
        LossVariant::L2 => l2_loss(patch)?,
    };
    Ok(fooling
        .scale(cfg.w_fooling)
        .add(&reg.scale(cfg.w_reg))?)
}
