//! Synthetic multi-speaker corpus generation and on-disk WAV ingestion,
//! with speaker-disjoint train/val/test splits tracked in a manifest.

mod build;
mod manifest;
mod synth;

pub use build::{
    build_synthetic_corpus, ingest_wav_corpus, load_entry_clip, preprocess_corpus, SkipRecord,
    SynthCorpusConfig,
};
pub use manifest::{manifest_to_string, read_manifest, write_manifest};
pub use synth::{generate_speaker, synthesize_utterance, SpeakerProfile};

use crate::audio::AudioError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error("test-split speaker {0} also appears in train/val")]
    SplitLeak(String),
    #[error("inconsistent split spec: {0}")]
    BadSplitSpec(String),
    #[error("no WAV files found under {0}")]
    EmptyCorpus(String),
    #[error("manifest parse error at line {line}: {detail}")]
    ManifestParse { line: usize, detail: String },
    #[error("manifest version {0} is not supported")]
    ManifestVersion(u32),
    #[error("preprocessing failed for {failed} of {total} clips (over the 10% budget)")]
    TooManyFailures { failed: usize, total: usize },
    #[error("utterance duration {0} s outside supported range [1, 25]")]
    BadDuration(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClipKind {
    /// Locator is a path relative to the manifest's directory.
    Wav,
    /// Locator is `profile_seed:utt_seed:n_samples`; regenerated on load.
    Synth,
}

/// Preprocessing state a clip has passed through.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProcState {
    Raw,
    /// Loudness-normalized only (evaluation clips are never padded).
    Norm,
    /// Loudness-normalized then repeat-padded to the training length.
    NormPad,
}

impl ProcState {
    pub fn as_str(self) -> &'static str {
        match self {
            ProcState::Raw => "raw",
            ProcState::Norm => "norm",
            ProcState::NormPad => "norm+pad",
        }
    }

    pub fn parse(s: &str) -> Option<ProcState> {
        match s {
            "raw" => Some(ProcState::Raw),
            "norm" => Some(ProcState::Norm),
            "norm+pad" => Some(ProcState::NormPad),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ManifestEntry {
    pub split: Split,
    pub speaker_id: String,
    pub kind: ClipKind,
    pub locator: String,
    pub duration_s: f64,
    pub proc: ProcState,
}

#[derive(Debug, Clone)]
pub struct CorpusManifest {
    pub sample_rate: u32,
    pub entries: Vec<ManifestEntry>,
}

impl CorpusManifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Result<Self, CorpusError> {
        let m = CorpusManifest {
            sample_rate: crate::audio::SAMPLE_RATE,
            entries,
        };
        m.validate()?;
        Ok(m)
    }

    /// Speaker-disjointness of the test split is a hard invariant: a test
    /// speaker appearing in train or val invalidates every downstream number.
    pub fn validate(&self) -> Result<(), CorpusError> {
        let mut train_like = std::collections::HashSet::new();
        let mut test = std::collections::HashSet::new();
        for e in &self.entries {
            match e.split {
                Split::Train | Split::Val => {
                    train_like.insert(e.speaker_id.as_str());
                }
                Split::Test => {
                    test.insert(e.speaker_id.as_str());
                }
            }
        }
        for spk in &test {
            if train_like.contains(spk) {
                return Err(CorpusError::SplitLeak((*spk).to_string()));
            }
        }
        Ok(())
    }

    pub fn split_entries(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn speakers_in(&self, split: Split) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for e in self.split_entries(split) {
            if !out.contains(&e.speaker_id) {
                out.push(e.speaker_id.clone());
            }
        }
        out
    }
}
