//! Waveform I/O and signal-level primitives: WAV files, repeat padding,
//! patch tiling, integrated loudness, SNR, and a forward DFT for tests.

pub mod dsp;
pub mod loudness;
pub mod wav;

pub use dsp::{dft_magnitudes, repeat_pad, snr_db, tile_patch, truncate};
pub use loudness::{measure_loudness, normalize_loudness, LoudnessStats, NormalizeReport};
pub use wav::{read_wav, write_wav};

use std::path::PathBuf;

use thiserror::Error;

/// The whole pipeline runs at a single fixed rate.
pub const SAMPLE_RATE: u32 = 16000;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed WAV file: {0}")]
    MalformedWav(String),
    #[error("expected mono, got {0} channels")]
    NotMono(u16),
    #[error("expected 16-bit samples, got {0}-bit")]
    WrongBitDepth(u16),
    #[error("expected {expected} Hz, got {got} Hz")]
    WrongSampleRate { expected: u32, got: u32 },
    #[error("expected PCM (format 1), got format {0}")]
    NotPcm(u16),
    #[error("clip is empty")]
    EmptyClip,
    #[error("pad target {target} is shorter than clip length {len}; truncate instead")]
    PadTargetTooShort { target: usize, len: usize },
    #[error("truncate target {target} exceeds clip length {len}; repeat_pad instead")]
    TruncateTargetTooLong { target: usize, len: usize },
    #[error("clip is {duration_s:.3} s; loudness needs at least 0.4 s")]
    TooShortForLoudness { duration_s: f64 },
    #[error("clip is silent after gating; loudness gain is undefined")]
    SilentClip,
    #[error("reference signal has zero energy")]
    ZeroReference,
    #[error("sequence lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
}

/// A mono waveform at [`SAMPLE_RATE`] with optional corpus bookkeeping.
#[derive(Debug, Clone)]
pub struct AudioClip {
    /// Samples in [-1, 1].
    pub samples: Vec<f64>,
    pub sample_rate: u32,
    pub speaker_id: Option<String>,
    pub source: Option<PathBuf>,
    /// Set once repeat padding has extended the clip beyond its recorded
    /// content. Evaluation paths assert this stays false.
    pub padded: bool,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        AudioClip {
            samples,
            sample_rate,
            speaker_id: None,
            source: None,
            padded: false,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}
