//! Corpus assembly: synthetic generation, WAV-tree ingestion, and the
//! normalize-then-pad preprocessing pass.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::audio::{self, read_wav, write_wav, AudioClip, SAMPLE_RATE};
use crate::util::{configured_threads, mix_seed, parallel_map_ordered};

use super::synth::{generate_speaker, synthesize_samples};
use super::{ClipKind, CorpusError, CorpusManifest, ManifestEntry, ProcState, Split};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpusConfig {
    pub n_train_speakers: usize,
    pub n_test_speakers: usize,
    pub utts_per_speaker: usize,
    /// Uniform duration range in seconds.
    pub duration_range: (f64, f64),
    /// Per train speaker, how many of its utterances go to the val split.
    pub val_utts_per_speaker: usize,
    /// Per test speaker, how many utterances are pinned to the top of the
    /// duration range so every sweep length has unpadded material.
    pub full_length_clips_per_test_speaker: usize,
    pub seed: u64,
}

impl Default for SynthCorpusConfig {
    fn default() -> Self {
        SynthCorpusConfig {
            n_train_speakers: 20,
            n_test_speakers: 5,
            utts_per_speaker: 30,
            duration_range: (3.0, 20.0),
            val_utts_per_speaker: 5,
            full_length_clips_per_test_speaker: 8,
            seed: 42,
        }
    }
}

/// A clip excluded from a manifest, with the reason it was dropped.
#[derive(Debug, Clone)]
pub struct SkipRecord {
    pub locator: String,
    pub reason: String,
}

pub fn build_synthetic_corpus(cfg: &SynthCorpusConfig) -> Result<CorpusManifest, CorpusError> {
    let bad = |msg: &str| CorpusError::BadSplitSpec(msg.to_string());
    if cfg.n_train_speakers == 0 || cfg.n_test_speakers == 0 {
        return Err(bad("need at least one train and one test speaker"));
    }
    if cfg.utts_per_speaker == 0 {
        return Err(bad("utts_per_speaker must be positive"));
    }
    if cfg.val_utts_per_speaker >= cfg.utts_per_speaker {
        return Err(bad("val utterances must leave room for train utterances"));
    }
    if cfg.full_length_clips_per_test_speaker > cfg.utts_per_speaker {
        return Err(bad("full-length quota exceeds utterances per speaker"));
    }
    let (lo, hi) = cfg.duration_range;
    if !(1.0..=25.0).contains(&lo) || !(1.0..=25.0).contains(&hi) || lo > hi {
        return Err(CorpusError::BadDuration(if lo > hi { lo } else { hi }));
    }

    let total = cfg.n_train_speakers + cfg.n_test_speakers;
    let mut entries = Vec::with_capacity(total * cfg.utts_per_speaker);
    for i in 0..total {
        let is_test = i >= cfg.n_train_speakers;
        let speaker_id = format!("spk{i:03}");
        let profile_seed = mix_seed(cfg.seed, i as u64);
        for j in 0..cfg.utts_per_speaker {
            let utt_seed = mix_seed(profile_seed, j as u64);
            let duration_s = if is_test && j < cfg.full_length_clips_per_test_speaker {
                hi
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(utt_seed, 0xd07a));
                rng.gen_range(lo..=hi)
            };
            let n_samples = (duration_s * SAMPLE_RATE as f64).round() as usize;
            let split = if is_test {
                Split::Test
            } else if j >= cfg.utts_per_speaker - cfg.val_utts_per_speaker {
                Split::Val
            } else {
                Split::Train
            };
            entries.push(ManifestEntry {
                split,
                speaker_id: speaker_id.clone(),
                kind: ClipKind::Synth,
                locator: format!("{profile_seed}:{utt_seed}:{n_samples}"),
                duration_s: n_samples as f64 / SAMPLE_RATE as f64,
                proc: ProcState::Raw,
            });
        }
    }
    CorpusManifest::new(entries)
}

/// Loads the waveform behind a manifest entry. Synthetic entries are
/// regenerated from their locator seeds; WAV entries are read relative to
/// `base_dir`.
pub fn load_entry_clip(entry: &ManifestEntry, base_dir: &Path) -> Result<AudioClip, CorpusError> {
    let mut clip = match entry.kind {
        ClipKind::Synth => {
            let parts: Vec<&str> = entry.locator.split(':').collect();
            let parsed = (|| {
                if parts.len() != 3 {
                    return None;
                }
                Some((
                    parts[0].parse::<u64>().ok()?,
                    parts[1].parse::<u64>().ok()?,
                    parts[2].parse::<usize>().ok()?,
                ))
            })();
            let (profile_seed, utt_seed, n_samples) =
                parsed.ok_or_else(|| CorpusError::ManifestParse {
                    line: 0,
                    detail: format!("bad synth locator {:?}", entry.locator),
                })?;
            let mut profile = generate_speaker(profile_seed);
            profile.speaker_id = entry.speaker_id.clone();
            synthesize_samples(&profile, n_samples, utt_seed)
        }
        ClipKind::Wav => {
            let mut clip = read_wav(&base_dir.join(&entry.locator))?;
            clip.speaker_id = Some(entry.speaker_id.clone());
            clip
        }
    };
    clip.padded = entry.proc == ProcState::NormPad;
    Ok(clip)
}

/// Builds a manifest from a directory tree of WAV files.
///
/// Accepts either `root/<split>/<speaker_id>/*.wav` with split directories
/// named train/val/test, or `root/<speaker_id>/*.wav` with everything
/// assigned to the train split. Files failing the WAV contract become skip
/// records instead of entries. Traversal order is lexicographic so the
/// manifest is independent of filesystem enumeration order.
pub fn ingest_wav_corpus(root: &Path) -> Result<(CorpusManifest, Vec<SkipRecord>), CorpusError> {
    let split_dirs: Vec<(Split, std::path::PathBuf)> = [Split::Train, Split::Val, Split::Test]
        .iter()
        .map(|&s| (s, root.join(s.as_str())))
        .filter(|(_, p)| p.is_dir())
        .collect();
    let roots: Vec<(Split, std::path::PathBuf, String)> = if split_dirs.is_empty() {
        vec![(Split::Train, root.to_path_buf(), String::new())]
    } else {
        split_dirs
            .into_iter()
            .map(|(s, p)| (s, p, format!("{}/", s.as_str())))
            .collect()
    };

    let mut entries = Vec::new();
    let mut skipped = Vec::new();
    for (split, dir, prefix) in roots {
        let mut speakers: Vec<std::path::PathBuf> = fs::read_dir(&dir)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.is_dir())
            .collect();
        speakers.sort();
        for spk_dir in speakers {
            let speaker_id = spk_dir
                .file_name()
                .and_then(|n| n.to_str())
                .unwrap_or_default()
                .to_string();
            if speaker_id.is_empty() {
                continue;
            }
            let mut files: Vec<std::path::PathBuf> = fs::read_dir(&spk_dir)?
                .filter_map(|e| e.ok())
                .map(|e| e.path())
                .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("wav"))
                .collect();
            files.sort();
            for file in files {
                let name = file.file_name().and_then(|n| n.to_str()).unwrap_or_default();
                let locator = format!("{prefix}{speaker_id}/{name}");
                match read_wav(&file) {
                    Ok(clip) => entries.push(ManifestEntry {
                        split,
                        speaker_id: speaker_id.clone(),
                        kind: ClipKind::Wav,
                        locator,
                        duration_s: clip.duration_s(),
                        proc: ProcState::Raw,
                    }),
                    Err(e) => skipped.push(SkipRecord {
                        locator,
                        reason: e.to_string(),
                    }),
                }
            }
        }
    }
    if entries.is_empty() && skipped.is_empty() {
        return Err(CorpusError::EmptyCorpus(root.display().to_string()));
    }
    Ok((CorpusManifest::new(entries)?, skipped))
}

/// Normalizes every clip to `target_lufs`, then repeat-pads train and val
/// clips to `pad_to_s`. Evaluation clips are normalized but never padded;
/// length-sensitive metrics depend on that. Processed WAVs land under
/// `out_root/<split>/<speaker>/`, and the returned manifest points at them.
///
/// Clips that fail to load or normalize become skip records; the pass as a
/// whole fails only when more than 10% of clips are lost.
pub fn preprocess_corpus(
    manifest: &CorpusManifest,
    base_dir: &Path,
    out_root: &Path,
    target_lufs: f64,
    pad_to_s: f64,
) -> Result<(CorpusManifest, Vec<SkipRecord>), CorpusError> {
    manifest.validate()?;
    let pad_samples = (pad_to_s * SAMPLE_RATE as f64).round() as usize;
    let total = manifest.entries.len();
    let mut entries = Vec::with_capacity(total);
    let mut skipped = Vec::new();
    let mut utt_counter: std::collections::HashMap<(Split, String), usize> =
        std::collections::HashMap::new();

    let threads = configured_threads();
    // Batched so peak memory stays at a handful of decoded clips per thread.
    for batch in manifest.entries.chunks(32.max(threads)) {
        let processed: Vec<Result<(AudioClip, ProcState), CorpusError>> =
            parallel_map_ordered(batch.iter().collect(), threads, |_, entry| {
                let clip = load_entry_clip(entry, base_dir)?;
                let (normed, _report) = audio::normalize_loudness(&clip, target_lufs)?;
                match entry.split {
                    Split::Train | Split::Val => {
                        let padded = if normed.len() >= pad_samples {
                            audio::truncate(&normed, pad_samples)?
                        } else {
                            audio::repeat_pad(&normed, pad_samples)?
                        };
                        Ok((padded, ProcState::NormPad))
                    }
                    Split::Test => Ok((normed, ProcState::Norm)),
                }
            });
        for (entry, result) in batch.iter().zip(processed) {
            match result {
                Ok((clip, proc)) => {
                    let counter = utt_counter
                        .entry((entry.split, entry.speaker_id.clone()))
                        .or_insert(0);
                    let rel = format!(
                        "{}/{}/utt{:04}.wav",
                        entry.split.as_str(),
                        entry.speaker_id,
                        counter
                    );
                    *counter += 1;
                    let dest = out_root.join(&rel);
                    fs::create_dir_all(dest.parent().expect("has parent"))?;
                    write_wav(&clip, &dest)?;
                    entries.push(ManifestEntry {
                        split: entry.split,
                        speaker_id: entry.speaker_id.clone(),
                        kind: ClipKind::Wav,
                        locator: rel,
                        duration_s: clip.duration_s(),
                        proc,
                    });
                }
                Err(e) => skipped.push(SkipRecord {
                    locator: entry.locator.clone(),
                    reason: e.to_string(),
                }),
            }
        }
    }
    if skipped.len() * 10 > total {
        return Err(CorpusError::TooManyFailures {
            failed: skipped.len(),
            total,
        });
    }
    Ok((CorpusManifest::new(entries)?, skipped))
}
