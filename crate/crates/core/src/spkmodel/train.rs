//! Supervised training of the speaker model: softmax cross-entropy over
//! speaker labels on random 2-second crops, Adam, deterministic batching.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::audio::SAMPLE_RATE;
use crate::corpus::{load_entry_clip, CorpusManifest, ManifestEntry, Split};
use crate::gradcore::{GradError, Tape, Tensor};
use crate::optim::{AdamConfig, AdamState};
use crate::util::{configured_threads, mix_seed, parallel_map_ordered};

use super::{ModelConfig, ModelError, SpeakerModel};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainModelConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    /// Random crop length fed to the network each step.
    pub crop_s: f64,
    pub seed: u64,
    /// Stop once the validation probe reaches this accuracy.
    pub early_stop_accuracy: Option<f64>,
    /// Clips (and truncation length) for the cheap per-epoch val probe.
    pub val_probe_clips: usize,
    pub val_probe_s: f64,
}

impl Default for TrainModelConfig {
    fn default() -> Self {
        TrainModelConfig {
            epochs: 12,
            lr: 1e-3,
            batch: 16,
            crop_s: 2.0,
            seed: 42,
            early_stop_accuracy: Some(0.98),
            val_probe_clips: 40,
            val_probe_s: 4.0,
        }
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Top-1 accuracy over the epoch's training crops.
    pub train_accuracy: f64,
    pub val_accuracy: Option<f64>,
}

/// Softmax cross-entropy against one label. The max shift is a detached
/// constant, which changes neither the value nor the gradient.
pub(crate) fn cross_entropy(
    tape: &Tape,
    logits: &Tensor,
    label: usize,
) -> Result<Tensor, GradError> {
    let k = logits.numel();
    let max_v = logits
        .data()
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let shifted = logits.add_scalar(-max_v);
    let lse = shifted.exp().sum_all().log();
    let mut onehot = vec![0.0; k];
    onehot[label] = 1.0;
    let mask = tape.input(&[k], onehot)?;
    let picked = shifted.mul(&mask)?.sum_all();
    lse.sub(&picked)
}

/// Classifier argmax for a detached embedding.
fn classify(model: &SpeakerModel, emb: &[f64]) -> usize {
    let k = model.cfg.n_classes;
    let d = model.cfg.emb_dim;
    let w = &model.params[model.params.len() - 2];
    let b = &model.params[model.params.len() - 1];
    let mut best = (0usize, f64::NEG_INFINITY);
    for c in 0..k {
        let logit = crate::gradcore::deterministic_dot(&w[c * d..(c + 1) * d], emb) + b[c];
        if logit > best.1 {
            best = (c, logit);
        }
    }
    best.0
}

/// Top-1 classifier accuracy over one split. `truncate_s` caps each clip
/// before embedding (probe mode); `max_clips` caps the clip count.
pub fn classifier_accuracy(
    model: &SpeakerModel,
    manifest: &CorpusManifest,
    base_dir: &Path,
    split: Split,
    max_clips: Option<usize>,
    truncate_s: Option<f64>,
) -> Result<f64, ModelError> {
    let entries: Vec<&ManifestEntry> = manifest.split_entries(split).collect();
    let entries = match max_clips {
        Some(n) => &entries[..entries.len().min(n)],
        None => &entries[..],
    };
    if entries.is_empty() {
        return Err(ModelError::EmptyTrainSplit);
    }
    let threads = configured_threads();
    let outcomes = parallel_map_ordered(entries.to_vec(), threads, |_, entry| {
        let label = model
            .class_names
            .iter()
            .position(|c| *c == entry.speaker_id);
        let Some(label) = label else {
            return Ok(false);
        };
        let mut clip = load_entry_clip(entry, base_dir)?;
        if let Some(secs) = truncate_s {
            let n = (secs * SAMPLE_RATE as f64).round() as usize;
            if clip.len() > n {
                clip.samples.truncate(n);
            }
        }
        let emb = model.embed(&clip)?;
        Ok::<bool, ModelError>(classify(model, &emb) == label)
    });
    let mut correct = 0usize;
    for o in &outcomes {
        match o {
            Ok(true) => correct += 1,
            Ok(false) => {}
            Err(_) => {}
        }
    }
    // Propagate the first hard error if every clip failed; scattered
    // failures just count as misses.
    let n = outcomes.len();
    if outcomes.iter().all(|o| o.is_err()) {
        for o in outcomes {
            o?;
        }
    }
    Ok(correct as f64 / n as f64)
}

pub fn train_model(
    manifest: &CorpusManifest,
    base_dir: &Path,
    cfg: &TrainModelConfig,
) -> Result<(SpeakerModel, Vec<EpochStats>), ModelError> {
    let mut class_names = manifest.speakers_in(Split::Train);
    class_names.sort();
    if class_names.is_empty() {
        return Err(ModelError::EmptyTrainSplit);
    }
    let mut model = SpeakerModel::new(
        ModelConfig::with_classes(class_names.len()),
        class_names,
        cfg.seed,
    );
    let sizes = model.cfg.group_sizes();
    let mut adam = AdamState::new(AdamConfig::with_lr(cfg.lr), &sizes);

    let train_entries: Vec<ManifestEntry> =
        manifest.split_entries(Split::Train).cloned().collect();
    let labels: Vec<usize> = train_entries
        .iter()
        .map(|e| {
            model
                .class_names
                .iter()
                .position(|c| *c == e.speaker_id)
                .expect("train speaker is a class")
        })
        .collect();
    let crop = (cfg.crop_s * SAMPLE_RATE as f64).round() as usize;
    let min_len = model.min_input_len();
    let threads = configured_threads();

    // Decoded 20 s clips are ~2.5 MB each; holding the train split in memory
    // beats re-reading it every epoch.
    let train_clips: Vec<crate::audio::AudioClip> = {
        let jobs: Vec<&ManifestEntry> = train_entries.iter().collect();
        let loaded =
            parallel_map_ordered(jobs, threads, |_, entry| load_entry_clip(entry, base_dir));
        loaded.into_iter().collect::<Result<_, _>>()?
    };

    let mut stats = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, epoch as u64));
        let mut order: Vec<usize> = (0..train_entries.len()).collect();
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        let mut correct = 0usize;
        for batch in order.chunks(cfg.batch) {
            // Crop offsets come from the epoch RNG on the coordinator so the
            // worker count cannot change the draw sequence.
            let jobs: Vec<(usize, u64)> = batch
                .iter()
                .map(|&i| (i, rng.gen::<u64>()))
                .collect();
            let results = parallel_map_ordered(jobs, threads, |_, (i, crop_seed)| {
                let clip = &train_clips[i];
                let take = crop.min(clip.len()).max(min_len.min(clip.len()));
                let max_start = clip.len() - take;
                let start = if max_start == 0 {
                    0
                } else {
                    (crop_seed % (max_start as u64 + 1)) as usize
                };
                let window = clip.samples[start..start + take].to_vec();

                let tape = Tape::new();
                let mt = model.stage(&tape, true)?;
                let x = tape.input(&[1, take], window)?;
                let emb = model.embedding_graph(&mt, &x)?;
                let logits = model.logits_graph(&mt, &emb)?;
                let pred = {
                    let d = logits.data();
                    let mut best = (0usize, f64::NEG_INFINITY);
                    for (c, &v) in d.iter().enumerate() {
                        if v > best.1 {
                            best = (c, v);
                        }
                    }
                    best.0
                };
                let loss = cross_entropy(&tape, &logits, labels[i])?;
                let value = loss.value();
                loss.backward()?;
                Ok::<(f64, bool, Vec<Vec<f64>>), ModelError>((
                    value,
                    pred == labels[i],
                    mt.collect_grads(),
                ))
            });

            let mut grad_acc: Vec<Vec<f64>> = sizes.iter().map(|&n| vec![0.0; n]).collect();
            let mut batch_loss = 0.0;
            let n = results.len() as f64;
            for r in results {
                let (value, ok, grads) = r?;
                batch_loss += value;
                if ok {
                    correct += 1;
                }
                for (acc, g) in grad_acc.iter_mut().zip(&grads) {
                    for (a, x) in acc.iter_mut().zip(g) {
                        *a += x / n;
                    }
                }
            }
            batch_loss /= n;
            if !batch_loss.is_finite() {
                return Err(ModelError::Diverged { epoch });
            }
            loss_sum += batch_loss * n;
            seen += batch.len();
            adam.step(&mut model.params, &grad_acc)?;
        }

        let val_accuracy = if manifest.split_entries(Split::Val).next().is_some() {
            Some(classifier_accuracy(
                &model,
                manifest,
                base_dir,
                Split::Val,
                Some(cfg.val_probe_clips),
                Some(cfg.val_probe_s),
            )?)
        } else {
            None
        };
        stats.push(EpochStats {
            epoch,
            mean_loss: loss_sum / seen as f64,
            train_accuracy: correct as f64 / seen as f64,
            val_accuracy,
        });
        if let (Some(target), Some(acc)) = (cfg.early_stop_accuracy, val_accuracy) {
            if acc >= target {
                break;
            }
        }
    }
    Ok((model, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_synthetic_corpus, SynthCorpusConfig};

    fn micro_corpus() -> CorpusManifest {
        build_synthetic_corpus(&SynthCorpusConfig {
            n_train_speakers: 3,
            n_test_speakers: 1,
            utts_per_speaker: 4,
            duration_range: (1.0, 2.0),
            val_utts_per_speaker: 1,
            full_length_clips_per_test_speaker: 0,
            seed: 5,
        })
        .unwrap()
    }

    #[test]
    fn zero_epochs_gives_chance_level_model() {
        let manifest = micro_corpus();
        let cfg = TrainModelConfig {
            epochs: 0,
            ..Default::default()
        };
        let (model, stats) = train_model(&manifest, Path::new("."), &cfg).unwrap();
        assert!(stats.is_empty());
        assert_eq!(model.cfg.n_classes, 3);
        // Untrained accuracy should be near 1/K, certainly below 0.9.
        let acc = classifier_accuracy(
            &model,
            &manifest,
            Path::new("."),
            Split::Train,
            None,
            Some(1.0),
        )
        .unwrap();
        assert!(acc < 0.9, "untrained accuracy {acc}");
    }

    #[test]
    fn same_seed_same_final_loss() {
        let manifest = micro_corpus();
        let cfg = TrainModelConfig {
            epochs: 2,
            batch: 4,
            crop_s: 1.0,
            early_stop_accuracy: None,
            val_probe_clips: 3,
            val_probe_s: 1.0,
            ..Default::default()
        };
        let (ma, sa) = train_model(&manifest, Path::new("."), &cfg).unwrap();
        let (mb, sb) = train_model(&manifest, Path::new("."), &cfg).unwrap();
        assert_eq!(sa.last().unwrap().mean_loss, sb.last().unwrap().mean_loss);
        assert_eq!(ma.params, mb.params);
    }

    #[test]
    fn loss_decreases_on_micro_corpus() {
        let manifest = micro_corpus();
        let cfg = TrainModelConfig {
            epochs: 3,
            batch: 4,
            crop_s: 1.0,
            early_stop_accuracy: None,
            val_probe_clips: 3,
            val_probe_s: 1.0,
            ..Default::default()
        };
        let (_, stats) = train_model(&manifest, Path::new("."), &cfg).unwrap();
        assert!(
            stats.last().unwrap().mean_loss < stats[0].mean_loss,
            "{} -> {}",
            stats[0].mean_loss,
            stats.last().unwrap().mean_loss
        );
    }
}
