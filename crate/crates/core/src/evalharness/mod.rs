//! Length-agnostic attack evaluation: fooling rate against the model's own
//! clean predictions, SNR statistics, a fooling-rate-versus-length sweep over
//! one fixed clip pool, embedding-similarity histograms, and report files.

mod report;
mod similarity;
mod sweep;

pub use report::{
    compare_variants, emit_comparison, emit_report, run_evaluation, EvalConfig, EvalReport,
    Provenance, VariantComparison, VariantRow,
};
pub use similarity::{similarity_analysis, SimilarityAnalysis};
pub use sweep::{length_sweep, LengthSweepSpec, SweepRow};

use thiserror::Error;

use crate::audio::{snr_db, tile_patch, AudioClip, AudioError};
use crate::corpus::{load_entry_clip, CorpusError, CorpusManifest, ManifestEntry, Split};
use crate::gradcore::deterministic_dot;
use crate::spkmodel::{EnrollmentSet, ModelError, SpeakerModel};
use crate::uaptrain::Patch;
use crate::util::{configured_threads, parallel_map_ordered};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("empty clip set")]
    EmptyClipSet,
    #[error("evaluation clip was repeat-padded upstream: {locator}")]
    PaddedEvalClip { locator: String },
    #[error("need clips of at least {min_duration_s} s for the sweep, found {have}")]
    InsufficientLongClips { have: usize, min_duration_s: f64 },
    #[error("speaker {speaker_id} has {have} evaluation clips, need {need}")]
    InsufficientClips {
        speaker_id: String,
        have: usize,
        need: usize,
    },
    #[error("patch configs differ beyond the loss variant: {0}")]
    ConfigMismatch(String),
    #[error("provenance field {0} is empty; refusing to emit report")]
    MissingProvenance(&'static str),
    #[error("held-out identification accuracy {accuracy:.4} is below the gate {threshold:.4}; attack metrics would be meaningless")]
    AccuracyGate { accuracy: f64, threshold: f64 },
    #[error("invalid sweep spec: {0}")]
    BadSpec(String),
}

/// Adds the tiled patch to a clip, preserving its metadata.
pub(crate) fn perturb(clip: &AudioClip, patch: &Patch) -> AudioClip {
    let mut out = clip.clone();
    let tiled = tile_patch(patch.values(), out.len());
    for (s, d) in out.samples.iter_mut().zip(&tiled) {
        *s += d;
    }
    out
}

fn assert_unpadded(clips: &[AudioClip]) -> Result<(), EvalError> {
    for c in clips {
        if c.padded {
            return Err(EvalError::PaddedEvalClip {
                locator: c
                    .source
                    .as_ref()
                    .map(|p| p.display().to_string())
                    .unwrap_or_else(|| "<in-memory clip>".to_string()),
            });
        }
    }
    Ok(())
}

/// Percentage of clips whose identification flips when the tiled patch is
/// added. The baseline is the model's own clean prediction, so the rate is
/// well defined even where the clean model errs. Clips must never have been
/// repeat-padded.
pub fn fooling_rate(
    model: &SpeakerModel,
    enrollment: &EnrollmentSet,
    clips: &[AudioClip],
    patch: &Patch,
) -> Result<f64, EvalError> {
    if clips.is_empty() {
        return Err(EvalError::EmptyClipSet);
    }
    assert_unpadded(clips)?;
    let threads = configured_threads();
    let jobs: Vec<&AudioClip> = clips.iter().collect();
    let outcomes = parallel_map_ordered(jobs, threads, |_, clip| {
        let clean = model.embed(clip)?;
        let adv = model.embed(&perturb(clip, patch))?;
        let (before, _) = enrollment.best_match(&clean)?;
        let (after, _) = enrollment.best_match(&adv)?;
        Ok::<bool, EvalError>(before != after)
    });
    let mut flips = 0usize;
    for o in outcomes {
        flips += o? as usize;
    }
    Ok(100.0 * flips as f64 / clips.len() as f64)
}

/// Mean and population standard deviation of per-clip SNR in dB, with the
/// perturbation tiled to each clip's length. An all-zero patch reads +inf
/// with zero spread.
pub fn snr_stats(clips: &[AudioClip], patch: &Patch) -> Result<(f64, f64), EvalError> {
    if clips.is_empty() {
        return Err(EvalError::EmptyClipSet);
    }
    let mut snrs = Vec::with_capacity(clips.len());
    for clip in clips {
        let tiled = tile_patch(patch.values(), clip.len());
        snrs.push(snr_db(&clip.samples, &tiled)?);
    }
    if snrs.iter().any(|s| !s.is_finite()) {
        return Ok((f64::INFINITY, 0.0));
    }
    let n = snrs.len() as f64;
    let mean = snrs.iter().sum::<f64>() / n;
    let var = snrs.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

/// Test-split entries of one speaker past its enrollment clips.
pub(crate) fn eval_entries_for_speaker<'m>(
    manifest: &'m CorpusManifest,
    speaker_id: &str,
    enroll_count: usize,
    eval_count: usize,
) -> Result<Vec<&'m ManifestEntry>, EvalError> {
    let entries: Vec<&ManifestEntry> = manifest
        .split_entries(Split::Test)
        .filter(|e| e.speaker_id == speaker_id)
        .collect();
    if entries.len() < enroll_count + eval_count {
        return Err(EvalError::InsufficientClips {
            speaker_id: speaker_id.to_string(),
            have: entries.len().saturating_sub(enroll_count),
            need: eval_count,
        });
    }
    Ok(entries[enroll_count..enroll_count + eval_count].to_vec())
}

/// Loads every enrolled speaker's evaluation clips (those past the
/// enrollment set), capped at `eval_count` each.
pub(crate) fn load_eval_clips(
    manifest: &CorpusManifest,
    base_dir: &std::path::Path,
    enrollment: &EnrollmentSet,
    eval_count: usize,
) -> Result<Vec<(String, AudioClip)>, EvalError> {
    let mut jobs = Vec::new();
    for (spk, _) in &enrollment.vectors {
        for e in eval_entries_for_speaker(manifest, spk, enrollment.enroll_count, eval_count)? {
            jobs.push((spk.clone(), e.clone()));
        }
    }
    let threads = configured_threads();
    let loaded = parallel_map_ordered(jobs, threads, |_, (spk, entry)| {
        let clip = load_entry_clip(&entry, base_dir)?;
        Ok::<(String, AudioClip), EvalError>((spk, clip))
    });
    loaded.into_iter().collect()
}

/// Identification accuracy on held-out clips of the enrolled speakers; the
/// gate that attack metrics are conditioned on.
pub fn held_out_accuracy(
    model: &SpeakerModel,
    manifest: &CorpusManifest,
    base_dir: &std::path::Path,
    enrollment: &EnrollmentSet,
    eval_count: usize,
) -> Result<f64, EvalError> {
    let labeled = load_eval_clips(manifest, base_dir, enrollment, eval_count)?;
    if labeled.is_empty() {
        return Err(EvalError::EmptyClipSet);
    }
    let threads = configured_threads();
    let outcomes = parallel_map_ordered(labeled, threads, |_, (spk, clip)| {
        let emb = model.embed(&clip)?;
        let (pred, _) = enrollment.best_match(&emb)?;
        Ok::<bool, EvalError>(pred == spk)
    });
    let n = outcomes.len();
    let mut correct = 0usize;
    for o in outcomes {
        correct += o? as usize;
    }
    Ok(correct as f64 / n as f64)
}

/// A fixed-bin histogram over [-1, 1] for cosine values; out-of-range inputs
/// (possible only through rounding) land in the edge bins.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub label: String,
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
    pub total: u64,
    pub mean: f64,
}

pub const HISTOGRAM_BINS: usize = 50;

impl Histogram {
    pub fn collect(label: &str, values: &[f64]) -> Histogram {
        let (lo, hi) = (-1.0, 1.0);
        let mut counts = vec![0u64; HISTOGRAM_BINS];
        for &v in values {
            let t = (v - lo) / (hi - lo) * HISTOGRAM_BINS as f64;
            let bin = (t as usize).min(HISTOGRAM_BINS - 1);
            counts[bin] += 1;
        }
        let mean = if values.is_empty() {
            0.0
        } else {
            values.iter().sum::<f64>() / values.len() as f64
        };
        Histogram {
            label: label.to_string(),
            lo,
            hi,
            counts,
            total: values.len() as u64,
            mean,
        }
    }

    pub fn bin_edges(&self) -> Vec<f64> {
        (0..=HISTOGRAM_BINS)
            .map(|i| self.lo + (self.hi - self.lo) * i as f64 / HISTOGRAM_BINS as f64)
            .collect()
    }
}

pub(crate) fn cos(a: &[f64], b: &[f64]) -> f64 {
    let na = deterministic_dot(a, a).sqrt();
    let nb = deterministic_dot(b, b).sqrt();
    deterministic_dot(a, b) / (na * nb)
}
