//! Projected Adam loop for the patch: per-sample tapes in parallel, ordered
//! gradient reduction, per-epoch reseeding, and a resumable state file.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::{rand_core::SeedableRng, ChaCha8Rng};
use serde::{Deserialize, Serialize};

use super::loss::{exp_tv_loss, exp_tv_value, fooling_loss, l2_loss, l2_value};
use super::{AttackConfig, AttackError, LossVariant, Patch};
use crate::audio::tile_patch;
use crate::corpus::{load_entry_clip, CorpusManifest, ManifestEntry, ProcState, Split};
use crate::gradcore::{deterministic_dot, Tape};
use crate::optim::{AdamConfig, AdamState};
use crate::spkmodel::SpeakerModel;
use crate::util::{configured_threads, mix_seed, parallel_map_ordered};

const ATTACK_STREAM: u64 = 0x0a77_ac40;
const STATE_FORMAT: &str = "uapforge-attack-state";
const STATE_VERSION: u32 = 1;

/// One row of the training log. Epoch 0 is the pre-training baseline; its
/// fooling value comes from the validation probe set instead of train batches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackEpochLog {
    pub epoch: usize,
    pub mean_fooling: f64,
    pub mean_reg: f64,
    pub mean_total: f64,
    /// Percent of probe clips whose identification flips, when probed.
    pub val_fooling_rate: Option<f64>,
    pub max_abs: f64,
}

/// Bias-corrected Adam update on the patch followed by projection back into
/// the clip bound. The optimizer state is untouched when the gradient is
/// rejected.
pub fn adam_step(
    patch: &mut Patch,
    grad: &[f64],
    state: &mut AdamState,
) -> Result<(), AttackError> {
    if grad.len() != patch.len() {
        return Err(AttackError::GradLengthMismatch {
            got: grad.len(),
            want: patch.len(),
        });
    }
    let mut groups = vec![std::mem::take(patch.values_mut())];
    let result = state.step(&mut groups, std::slice::from_ref(&grad.to_vec()));
    *patch.values_mut() = groups.pop().unwrap();
    result?;
    patch.clamp_in_place();
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct AttackState {
    format: String,
    version: u32,
    fingerprint: String,
    epochs_done: usize,
    epsilon: f64,
    patch: Vec<f64>,
    adam: AdamState,
    log: Vec<AttackEpochLog>,
}

fn save_state(path: &Path, state: &AttackState) -> Result<(), AttackError> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, serde_json::to_vec(state).expect("state serializes"))?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn load_state(path: &Path, cfg: &AttackConfig) -> Result<AttackState, AttackError> {
    let bytes = std::fs::read(path)?;
    let state: AttackState = serde_json::from_slice(&bytes)
        .map_err(|e| AttackError::StateMismatch(format!("unreadable state file: {e}")))?;
    if state.format != STATE_FORMAT || state.version != STATE_VERSION {
        return Err(AttackError::StateMismatch(format!(
            "format {}/{}",
            state.format, state.version
        )));
    }
    if state.fingerprint != cfg.fingerprint() {
        return Err(AttackError::StateMismatch(format!(
            "config changed: state has [{}], run wants [{}]",
            state.fingerprint,
            cfg.fingerprint()
        )));
    }
    if state.patch.len() != cfg.patch_len {
        return Err(AttackError::StateMismatch("patch length".to_string()));
    }
    Ok(state)
}

/// Identification gallery over training speakers, built from clean validation
/// embeddings. Embeddings and gallery vectors are unit norm, so the dot
/// product is the cosine.
struct ProbeSet {
    entries: Vec<ManifestEntry>,
    gallery: Vec<(String, Vec<f64>)>,
    clean_pred: Vec<usize>,
    clean_emb: Vec<Vec<f64>>,
}

fn best_gallery_index(gallery: &[(String, Vec<f64>)], emb: &[f64]) -> usize {
    let mut best = 0;
    let mut best_sim = f64::NEG_INFINITY;
    for (k, (_, v)) in gallery.iter().enumerate() {
        let sim = deterministic_dot(v, emb);
        if sim > best_sim {
            best_sim = sim;
            best = k;
        }
    }
    best
}

fn build_probe_set(
    model: &SpeakerModel,
    manifest: &CorpusManifest,
    base_dir: &Path,
    probe_clips: usize,
    threads: usize,
) -> Result<Option<ProbeSet>, AttackError> {
    let val_entries: Vec<&ManifestEntry> = manifest.split_entries(Split::Val).collect();
    if val_entries.is_empty() || probe_clips == 0 {
        return Ok(None);
    }
    let embs = parallel_map_ordered(val_entries.clone(), threads, |_, e| {
        let clip = load_entry_clip(e, base_dir)?;
        model.embed(&clip).map_err(AttackError::from)
    });
    let mut by_speaker: Vec<(String, Vec<f64>, usize)> = Vec::new();
    let mut all = Vec::with_capacity(val_entries.len());
    for (e, emb) in val_entries.iter().zip(embs) {
        let emb = emb?;
        match by_speaker.iter_mut().find(|(s, _, _)| *s == e.speaker_id) {
            Some((_, acc, n)) => {
                for (a, x) in acc.iter_mut().zip(&emb) {
                    *a += x;
                }
                *n += 1;
            }
            None => by_speaker.push((e.speaker_id.clone(), emb.clone(), 1)),
        }
        all.push(emb);
    }
    by_speaker.sort_by(|a, b| a.0.cmp(&b.0));
    let mut gallery = Vec::with_capacity(by_speaker.len());
    for (spk, mut acc, _) in by_speaker {
        let norm = deterministic_dot(&acc, &acc).sqrt();
        if norm == 0.0 {
            return Err(AttackError::BadConfig(format!(
                "zero enrollment vector for {spk}"
            )));
        }
        for a in &mut acc {
            *a /= norm;
        }
        gallery.push((spk, acc));
    }
    let n = probe_clips.min(val_entries.len());
    let entries: Vec<ManifestEntry> = val_entries[..n].iter().map(|e| (*e).clone()).collect();
    let clean_emb: Vec<Vec<f64>> = all[..n].to_vec();
    let clean_pred = clean_emb
        .iter()
        .map(|e| best_gallery_index(&gallery, e))
        .collect();
    Ok(Some(ProbeSet {
        entries,
        gallery,
        clean_pred,
        clean_emb,
    }))
}

impl ProbeSet {
    /// Mean cosine to the clean embedding and identification flip rate (in
    /// percent) of the probe clips under the current patch.
    fn measure(
        &self,
        model: &SpeakerModel,
        base_dir: &Path,
        patch: &Patch,
        threads: usize,
    ) -> Result<(f64, f64), AttackError> {
        let jobs: Vec<usize> = (0..self.entries.len()).collect();
        let out = parallel_map_ordered(jobs, threads, |_, i| {
            let mut clip = load_entry_clip(&self.entries[i], base_dir)?;
            let tiled = tile_patch(patch.values(), clip.len());
            for (s, d) in clip.samples.iter_mut().zip(&tiled) {
                *s += d;
            }
            let emb = model.embed(&clip)?;
            let cos = deterministic_dot(&emb, &self.clean_emb[i]);
            let flipped = best_gallery_index(&self.gallery, &emb) != self.clean_pred[i];
            Ok::<(f64, bool), AttackError>((cos, flipped))
        });
        let mut cos_sum = 0.0;
        let mut flips = 0usize;
        for r in &out {
            match r {
                Ok((c, f)) => {
                    cos_sum += c;
                    flips += *f as usize;
                }
                Err(_) => {}
            }
        }
        let n = out.len();
        if out.iter().all(|r| r.is_err()) {
            for r in out {
                r?;
            }
        }
        Ok((cos_sum / n as f64, 100.0 * flips as f64 / n as f64))
    }
}

fn reg_value(values: &[f64], variant: LossVariant) -> f64 {
    match variant {
        LossVariant::ExpTv => exp_tv_value(values),
        LossVariant::L2 => l2_value(values),
    }
}

/// Trains the patch against a frozen model over the padded training split.
///
/// Per epoch: reshuffle (seeded by epoch), optionally subsample, then for
/// each batch run per-clip forward/backward on separate tapes, average the
/// patch gradients in input order, and apply one projected Adam step. With
/// `state_path` set, progress is saved after every epoch and a matching
/// existing file resumes bit-exactly.
pub fn train_uap(
    model: &SpeakerModel,
    manifest: &CorpusManifest,
    base_dir: &Path,
    cfg: &AttackConfig,
    state_path: Option<&Path>,
) -> Result<(Patch, Vec<AttackEpochLog>), AttackError> {
    cfg.validate()?;
    let train_entries: Vec<&ManifestEntry> = manifest.split_entries(Split::Train).collect();
    if train_entries.is_empty() {
        return Err(AttackError::NoTrainingClips);
    }
    for e in &train_entries {
        if e.proc != ProcState::NormPad {
            return Err(AttackError::UnpaddedTrainingClip {
                locator: e.locator.clone(),
            });
        }
    }
    let threads = configured_threads();
    let l = cfg.patch_len;

    let resumed = match state_path {
        Some(p) if p.exists() => Some(load_state(p, cfg)?),
        _ => None,
    };
    let (mut patch, mut adam, mut log, start_epoch) = match resumed {
        Some(s) => {
            let patch = Patch::from_values(s.patch, cfg.epsilon)?;
            (patch, s.adam, s.log, s.epochs_done)
        }
        None => {
            let patch = if cfg.random_init {
                Patch::uniform(l, cfg.epsilon, cfg.seed)?
            } else {
                Patch::zeros(l, cfg.epsilon)?
            };
            let adam = AdamState::new(AdamConfig::with_lr(cfg.lr), &[l]);
            (patch, adam, Vec::new(), 0)
        }
    };
    if start_epoch >= cfg.epochs && !log.is_empty() {
        return Ok((patch, log));
    }

    let probe = build_probe_set(model, manifest, base_dir, cfg.val_probe_clips, threads)?;

    // Clean embeddings of training clips, filled on first use.
    let mut clean_cache: HashMap<usize, Vec<f64>> = HashMap::new();

    if log.is_empty() {
        // Pre-training baseline; with the default zero init the probe flips
        // nothing and the fooling term sits at exactly 1.
        let (mean_fooling, fr) = match &probe {
            Some(p) => {
                let (cos, fr) = p.measure(model, base_dir, &patch, threads)?;
                (cos, Some(fr))
            }
            None => {
                let take = train_entries.len().min(4);
                let mut cos_sum = 0.0;
                for e in &train_entries[..take] {
                    let mut clip = load_entry_clip(e, base_dir)?;
                    let clean = model.embed(&clip)?;
                    let tiled = tile_patch(patch.values(), clip.len());
                    for (s, d) in clip.samples.iter_mut().zip(&tiled) {
                        *s += d;
                    }
                    cos_sum += deterministic_dot(&model.embed(&clip)?, &clean);
                }
                (cos_sum / take as f64, None)
            }
        };
        let mean_reg = reg_value(patch.values(), cfg.loss_variant);
        log.push(AttackEpochLog {
            epoch: 0,
            mean_fooling,
            mean_reg,
            mean_total: cfg.w_fooling * mean_fooling + cfg.w_reg * mean_reg,
            val_fooling_rate: fr,
            max_abs: patch.max_abs(),
        });
    }

    for epoch in start_epoch..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(mix_seed(cfg.seed, ATTACK_STREAM), epoch as u64));
        let mut order: Vec<usize> = (0..train_entries.len()).collect();
        order.shuffle(&mut rng);
        if let Some(k) = cfg.clips_per_epoch {
            order.truncate(k.min(order.len()));
        }

        let missing: Vec<usize> = {
            let mut m: Vec<usize> = order
                .iter()
                .copied()
                .filter(|i| !clean_cache.contains_key(i))
                .collect();
            m.sort_unstable();
            m
        };
        if !missing.is_empty() {
            let computed = parallel_map_ordered(missing.clone(), threads, |_, idx| {
                let clip = load_entry_clip(train_entries[idx], base_dir)?;
                model.embed(&clip).map_err(AttackError::from)
            });
            for (idx, emb) in missing.into_iter().zip(computed) {
                clean_cache.insert(idx, emb?);
            }
        }

        let mut fool_sum = 0.0;
        let mut reg_sum = 0.0;
        for batch in order.chunks(cfg.batch) {
            let jobs: Vec<(usize, i64)> = batch
                .iter()
                .map(|&idx| {
                    let offset = if cfg.phase_jitter {
                        rng.gen_range(0..l as i64)
                    } else {
                        0
                    };
                    (idx, offset)
                })
                .collect();
            let patch_values = patch.values().to_vec();
            let results = parallel_map_ordered(jobs, threads, |_, (idx, offset)| {
                let clip = load_entry_clip(train_entries[idx], base_dir)?;
                let clean = &clean_cache[&idx];
                let tape = Tape::new();
                let p = tape.param(&[l], patch_values.clone())?;
                let p_used = if offset != 0 { p.roll(offset)? } else { p.clone() };
                let fool = fooling_loss(model, &clip, Some(clean), &p_used)?;
                let reg = match cfg.loss_variant {
                    LossVariant::ExpTv => exp_tv_loss(&p, cfg.circular_pairs)?,
                    LossVariant::L2 => l2_loss(&p)?,
                };
                let total = fool.scale(cfg.w_fooling).add(&reg.scale(cfg.w_reg))?;
                total.backward()?;
                let grad = p.grad().unwrap_or_else(|| vec![0.0; l]);
                Ok::<(Vec<f64>, f64, f64), AttackError>((grad, fool.value(), reg.value()))
            });

            let mut grad = vec![0.0; l];
            let mut batch_fool = 0.0;
            let mut batch_reg = 0.0;
            for r in results {
                let (g, f, rg) = r?;
                for (a, b) in grad.iter_mut().zip(&g) {
                    *a += b;
                }
                batch_fool += f;
                batch_reg += rg;
            }
            let bn = batch.len() as f64;
            for a in &mut grad {
                *a /= bn;
            }
            let batch_total = cfg.w_fooling * batch_fool / bn + cfg.w_reg * batch_reg / bn;
            if !batch_total.is_finite() {
                return Err(AttackError::NonFiniteLoss { epoch });
            }
            adam_step(&mut patch, &grad, &mut adam)?;
            assert!(
                patch.max_abs() <= cfg.epsilon,
                "clip bound violated after projection"
            );
            fool_sum += batch_fool;
            reg_sum += batch_reg;
        }

        let n = order.len() as f64;
        let mean_fooling = fool_sum / n;
        let mean_reg = reg_sum / n;
        let probe_now =
            (epoch + 1) % cfg.val_probe_every == 0 || epoch + 1 == cfg.epochs;
        let val_fooling_rate = match (&probe, probe_now) {
            (Some(p), true) => Some(p.measure(model, base_dir, &patch, threads)?.1),
            _ => None,
        };
        log.push(AttackEpochLog {
            epoch: epoch + 1,
            mean_fooling,
            mean_reg,
            mean_total: cfg.w_fooling * mean_fooling + cfg.w_reg * mean_reg,
            val_fooling_rate,
            max_abs: patch.max_abs(),
        });

        if let Some(p) = state_path {
            save_state(
                p,
                &AttackState {
                    format: STATE_FORMAT.to_string(),
                    version: STATE_VERSION,
                    fingerprint: cfg.fingerprint(),
                    epochs_done: epoch + 1,
                    epsilon: cfg.epsilon,
                    patch: patch.values().to_vec(),
                    adam: adam.clone(),
                    log: log.clone(),
                },
            )?;
        }
    }

    Ok((patch, log))
}
