//! Fooling rate as a function of utterance length, measured on one fixed
//! pool of long clips truncated to each target. Holding the pool constant
//! separates the length effect from clip-content variation; the row hashes
//! prove it.

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::audio::{dsp, AudioClip, SAMPLE_RATE};
use crate::spkmodel::{EnrollmentSet, SpeakerModel};
use crate::uaptrain::Patch;

use super::{fooling_rate, snr_stats, EvalError};

#[derive(Debug, Clone, PartialEq)]
pub struct LengthSweepSpec {
    /// Target utterance lengths in seconds, evaluated in the given order.
    pub lengths_s: Vec<f64>,
    /// Upper bound on the pool size.
    pub max_clips: usize,
}

impl Default for LengthSweepSpec {
    fn default() -> Self {
        LengthSweepSpec {
            lengths_s: vec![3.0, 5.0, 10.0, 15.0, 20.0],
            max_clips: 20,
        }
    }
}

impl LengthSweepSpec {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.lengths_s.is_empty() {
            return Err(EvalError::BadSpec("no sweep lengths given".into()));
        }
        if self.lengths_s.iter().any(|&l| !(l > 0.0) || l > 20.0) {
            return Err(EvalError::BadSpec(
                "sweep lengths must lie in (0, 20] seconds".into(),
            ));
        }
        if self.max_clips == 0 {
            return Err(EvalError::BadSpec("max_clips must be positive".into()));
        }
        Ok(())
    }

    pub fn max_length_s(&self) -> f64 {
        self.lengths_s.iter().cloned().fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub length_s: f64,
    pub n_clips: usize,
    pub fooling_rate: f64,
    pub snr_mean_db: f64,
    /// Hash of the shared clip pool; identical across rows by construction.
    pub pool_hash: String,
    /// Hash of the truncated clips this row was measured on.
    pub truncated_hash: String,
}

fn hash_clips(clips: &[AudioClip]) -> String {
    let mut h = Sha256::new();
    for c in clips {
        h.update((c.len() as u64).to_le_bytes());
        for s in &c.samples {
            h.update(s.to_le_bytes());
        }
    }
    format!("{:x}", h.finalize())
}

/// Measures the patch at each target length on truncated copies of one clip
/// pool. Pool membership requires the full maximum length, so every row sees
/// the same speech content.
pub fn length_sweep(
    model: &SpeakerModel,
    enrollment: &EnrollmentSet,
    clips: &[AudioClip],
    patch: &Patch,
    spec: &LengthSweepSpec,
) -> Result<Vec<SweepRow>, EvalError> {
    spec.validate()?;
    let min_duration_s = spec.max_length_s();
    let need = (min_duration_s * SAMPLE_RATE as f64).round() as usize;
    let pool: Vec<&AudioClip> = clips
        .iter()
        .filter(|c| c.len() >= need)
        .take(spec.max_clips)
        .collect();
    if pool.is_empty() {
        return Err(EvalError::InsufficientLongClips {
            have: 0,
            min_duration_s,
        });
    }
    let pool_owned: Vec<AudioClip> = pool.iter().map(|c| (*c).clone()).collect();
    let pool_hash = hash_clips(&pool_owned);
    let mut rows = Vec::with_capacity(spec.lengths_s.len());
    for &length_s in &spec.lengths_s {
        let target = (length_s * SAMPLE_RATE as f64).round() as usize;
        let truncated: Vec<AudioClip> = pool_owned
            .iter()
            .map(|c| dsp::truncate(c, target))
            .collect::<Result<_, _>>()?;
        let fr = fooling_rate(model, enrollment, &truncated, patch)?;
        let (snr_mean_db, _) = snr_stats(&truncated, patch)?;
        rows.push(SweepRow {
            length_s,
            n_clips: truncated.len(),
            fooling_rate: fr,
            snr_mean_db,
            pool_hash: pool_hash.clone(),
            truncated_hash: hash_clips(&truncated),
        });
    }
    Ok(rows)
}
