//! uapforge-core: differentiable audio-patch training against a small
//! speaker-identification model, with a deterministic synthetic corpus,
//! loudness-gated preprocessing, and a length-sweep evaluation harness.

pub mod audio;
pub mod corpus;
pub mod evalharness;
pub mod gradcore;
pub mod optim;
pub mod spkmodel;
pub mod uaptrain;
pub mod util;

pub use audio::{AudioClip, AudioError};
pub use corpus::{CorpusError, CorpusManifest};
pub use evalharness::{EvalConfig, EvalError, EvalReport, LengthSweepSpec};
pub use gradcore::{GradError, Tape, Tensor};
pub use optim::{AdamConfig, AdamState, OptimError};
pub use spkmodel::{ModelConfig, ModelError, SpeakerModel};
pub use uaptrain::{AttackConfig, AttackError, LossVariant, Patch};
