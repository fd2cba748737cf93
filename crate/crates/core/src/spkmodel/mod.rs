//! Speaker-embedding network: strided conv frontend over the raw waveform,
//! mean+std temporal pooling, linear head to a unit-norm embedding, plus a
//! train-only softmax classifier. Identification is cosine against enrolled
//! speaker vectors.

mod checkpoint;
mod train;

pub use checkpoint::{load_model, model_to_bytes, save_model};
pub use train::{train_model, EpochStats, TrainModelConfig};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::audio::AudioClip;
use crate::corpus::CorpusError;
use crate::gradcore::{GradError, Tape, Tensor};
use crate::optim::OptimError;
use crate::util::mix_seed;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("clip of {len} samples is shorter than the model minimum {min}")]
    TooShort { len: usize, min: usize },
    #[error("training diverged (non-finite loss) at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("speaker {speaker_id} has {have} clips, enrollment needs {need}")]
    InsufficientClips {
        speaker_id: String,
        have: usize,
        need: usize,
    },
    #[error("train split is empty")]
    EmptyTrainSplit,
    #[error("enrollment set is empty")]
    EmptyEnrollment,
    #[error(transparent)]
    Grad(#[from] GradError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error("not a model checkpoint (bad magic bytes)")]
    NotACheckpoint,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("checkpoint file is truncated or inconsistent")]
    TruncatedCheckpoint,
    #[error("checkpoint architecture mismatch: {0}")]
    ArchMismatch(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub out_ch: usize,
    pub in_ch: usize,
    pub kernel: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub conv: Vec<ConvSpec>,
    pub emb_dim: usize,
    pub n_classes: usize,
}

impl ModelConfig {
    /// Default frontend: four strided conv layers shrinking 16 kHz audio by
    /// a factor of 128 in time, 64 channels out.
    pub fn with_classes(n_classes: usize) -> Self {
        let spec = |out_ch, in_ch, kernel, stride| ConvSpec {
            out_ch,
            in_ch,
            kernel,
            stride,
        };
        ModelConfig {
            conv: vec![
                spec(32, 1, 16, 8),
                spec(32, 32, 8, 4),
                spec(64, 32, 4, 2),
                spec(64, 64, 4, 2),
            ],
            emb_dim: 64,
            n_classes,
        }
    }

    fn pooled_dim(&self) -> usize {
        2 * self.conv.last().expect("at least one conv layer").out_ch
    }

    /// Parameter group sizes in staging order: per layer weights then bias,
    /// then head weight/bias, then classifier weight/bias.
    pub fn group_sizes(&self) -> Vec<usize> {
        let mut sizes = Vec::new();
        for c in &self.conv {
            sizes.push(c.out_ch * c.in_ch * c.kernel);
            sizes.push(c.out_ch);
        }
        sizes.push(self.emb_dim * self.pooled_dim());
        sizes.push(self.emb_dim);
        sizes.push(self.n_classes * self.emb_dim);
        sizes.push(self.n_classes);
        sizes
    }

    /// Shortest input for which the final feature map has at least two
    /// frames, so std pooling is well defined.
    pub fn min_input_len(&self) -> usize {
        let mut needed = 2usize;
        for c in self.conv.iter().rev() {
            needed = (needed - 1) * c.stride + c.kernel;
        }
        needed
    }
}

#[derive(Debug, Clone)]
pub struct SpeakerModel {
    pub cfg: ModelConfig,
    /// Flat parameter groups, order as in [`ModelConfig::group_sizes`].
    pub params: Vec<Vec<f64>>,
    /// Classifier row index -> speaker id, sorted.
    pub class_names: Vec<String>,
}

impl SpeakerModel {
    /// Random initialization: uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) per
    /// weight group, zero biases.
    pub fn new(cfg: ModelConfig, class_names: Vec<String>, seed: u64) -> Self {
        assert_eq!(cfg.n_classes, class_names.len());
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x0de1));
        let mut params = Vec::new();
        let weight = |fan_in: usize, n: usize, rng: &mut ChaCha8Rng| -> Vec<f64> {
            let a = 1.0 / (fan_in as f64).sqrt();
            (0..n).map(|_| rng.gen_range(-a..a)).collect()
        };
        for c in &cfg.conv {
            params.push(weight(c.in_ch * c.kernel, c.out_ch * c.in_ch * c.kernel, &mut rng));
            params.push(vec![0.0; c.out_ch]);
        }
        params.push(weight(cfg.pooled_dim(), cfg.emb_dim * cfg.pooled_dim(), &mut rng));
        params.push(vec![0.0; cfg.emb_dim]);
        params.push(weight(cfg.emb_dim, cfg.n_classes * cfg.emb_dim, &mut rng));
        params.push(vec![0.0; cfg.n_classes]);
        SpeakerModel {
            cfg,
            params,
            class_names,
        }
    }

    pub fn min_input_len(&self) -> usize {
        self.cfg.min_input_len()
    }

    /// Puts all parameters on a tape. With `trainable` they become gradient
    /// targets; otherwise backward treats them as constants and skips their
    /// gradient work entirely.
    pub fn stage(&self, tape: &Tape, trainable: bool) -> Result<ModelTensors, GradError> {
        let mut groups = Vec::with_capacity(self.params.len());
        let sizes = self.cfg.group_sizes();
        debug_assert_eq!(sizes.len(), self.params.len());
        let mut idx = 0;
        let mut stage_one = |shape: &[usize]| -> Result<Tensor, GradError> {
            let data = self.params[idx].clone();
            idx += 1;
            if trainable {
                tape.param(shape, data)
            } else {
                tape.input(shape, data)
            }
        };
        for c in &self.cfg.conv {
            groups.push(stage_one(&[c.out_ch, c.in_ch, c.kernel])?);
            groups.push(stage_one(&[c.out_ch])?);
        }
        groups.push(stage_one(&[self.cfg.emb_dim, self.cfg.pooled_dim()])?);
        groups.push(stage_one(&[self.cfg.emb_dim])?);
        groups.push(stage_one(&[self.cfg.n_classes, self.cfg.emb_dim])?);
        groups.push(stage_one(&[self.cfg.n_classes])?);
        Ok(ModelTensors { groups })
    }

    /// Builds the embedding graph for a `[1, T]` waveform tensor already on
    /// the same tape as `mt`. Output is the unit-norm embedding `[d]`.
    pub fn embedding_graph(&self, mt: &ModelTensors, x: &Tensor) -> Result<Tensor, GradError> {
        let mut h = x.clone();
        for (li, c) in self.cfg.conv.iter().enumerate() {
            let (w, b) = mt.conv(li);
            h = h.conv1d(w, c.stride)?.add_channel_bias(b)?.tanh();
        }
        let mean = h.mean_axis(1)?;
        let meansq = h.mul(&h)?.mean_axis(1)?;
        // var = E[h^2] - E[h]^2; the epsilon keeps sqrt differentiable when
        // a channel is constant over time.
        let var = meansq.sub(&mean.mul(&mean)?)?;
        let std = var.add_scalar(1e-8).sqrt()?;
        let pooled = mean.concat(&std)?;
        let (wh, bh) = mt.head(self.cfg.conv.len());
        let col = pooled.reshape(&[self.cfg.pooled_dim(), 1])?;
        let emb = wh
            .matmul(&col)?
            .reshape(&[self.cfg.emb_dim])?
            .add(bh)?;
        let norm = emb.mul(&emb)?.sum_all().sqrt()?;
        emb.div(&norm)
    }

    /// Classifier logits `[K]` from a unit embedding.
    pub fn logits_graph(&self, mt: &ModelTensors, emb: &Tensor) -> Result<Tensor, GradError> {
        let (wc, bc) = mt.classifier(self.cfg.conv.len());
        let col = emb.reshape(&[self.cfg.emb_dim, 1])?;
        wc.matmul(&col)?.reshape(&[self.cfg.n_classes])?.add(bc)
    }

    /// Detached embedding of a clip: fresh tape, forward only.
    pub fn embed(&self, clip: &AudioClip) -> Result<Vec<f64>, ModelError> {
        let min = self.min_input_len();
        if clip.len() < min {
            return Err(ModelError::TooShort {
                len: clip.len(),
                min,
            });
        }
        let tape = Tape::new();
        let mt = self.stage(&tape, false)?;
        let x = tape.input(&[1, clip.len()], clip.samples.clone())?;
        let emb = self.embedding_graph(&mt, &x)?;
        Ok(emb.data())
    }
}

/// Tape handles for one staging of the model parameters.
pub struct ModelTensors {
    groups: Vec<Tensor>,
}

impl ModelTensors {
    fn conv(&self, layer: usize) -> (&Tensor, &Tensor) {
        (&self.groups[2 * layer], &self.groups[2 * layer + 1])
    }

    fn head(&self, n_conv: usize) -> (&Tensor, &Tensor) {
        (&self.groups[2 * n_conv], &self.groups[2 * n_conv + 1])
    }

    fn classifier(&self, n_conv: usize) -> (&Tensor, &Tensor) {
        (&self.groups[2 * n_conv + 2], &self.groups[2 * n_conv + 3])
    }

    /// Gradients per group after a backward pass; groups the loss never
    /// reached read as zeros.
    pub fn collect_grads(&self) -> Vec<Vec<f64>> {
        self.groups
            .iter()
            .map(|t| t.grad().unwrap_or_else(|| vec![0.0; t.numel()]))
            .collect()
    }
}

/// Speaker representations for identification, sorted by speaker id so that
/// argmax ties resolve lexicographically.
#[derive(Debug, Clone)]
pub struct EnrollmentSet {
    pub enroll_count: usize,
    pub vectors: Vec<(String, Vec<f64>)>,
}

impl EnrollmentSet {
    pub fn best_match(&self, embedding: &[f64]) -> Result<(String, f64), ModelError> {
        if self.vectors.is_empty() {
            return Err(ModelError::EmptyEnrollment);
        }
        let mut best: Option<(&str, f64)> = None;
        for (id, vec) in &self.vectors {
            let sim = crate::gradcore::deterministic_dot(embedding, vec)
                / (norm(embedding) * norm(vec));
            match best {
                Some((_, b)) if sim <= b => {}
                _ => best = Some((id, sim)),
            }
        }
        let (id, sim) = best.expect("nonempty");
        Ok((id.to_string(), sim))
    }

    pub fn get(&self, speaker_id: &str) -> Option<&[f64]> {
        self.vectors
            .iter()
            .find(|(id, _)| id == speaker_id)
            .map(|(_, v)| v.as_slice())
    }
}

fn norm(v: &[f64]) -> f64 {
    crate::gradcore::deterministic_dot(v, v).sqrt()
}

/// Mean-of-embeddings enrollment from the first `enroll_count` test-split
/// clips of each test speaker; later clips stay disjoint for evaluation.
pub fn build_enrollment(
    model: &SpeakerModel,
    manifest: &crate::corpus::CorpusManifest,
    base_dir: &std::path::Path,
    enroll_count: usize,
) -> Result<EnrollmentSet, ModelError> {
    use crate::corpus::{load_entry_clip, Split};
    let mut speakers = manifest.speakers_in(Split::Test);
    speakers.sort();
    let mut vectors = Vec::with_capacity(speakers.len());
    for spk in speakers {
        let entries: Vec<_> = manifest
            .split_entries(Split::Test)
            .filter(|e| e.speaker_id == spk)
            .collect();
        if entries.len() < enroll_count {
            return Err(ModelError::InsufficientClips {
                speaker_id: spk,
                have: entries.len(),
                need: enroll_count,
            });
        }
        let mut acc = vec![0.0; model.cfg.emb_dim];
        for e in &entries[..enroll_count] {
            let clip = load_entry_clip(e, base_dir)?;
            let emb = model.embed(&clip)?;
            for (a, x) in acc.iter_mut().zip(&emb) {
                *a += x;
            }
        }
        let n = norm(&acc);
        if n == 0.0 {
            return Err(ModelError::Grad(GradError::ZeroNorm));
        }
        for a in &mut acc {
            *a /= n;
        }
        vectors.push((spk, acc));
    }
    vectors.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(EnrollmentSet {
        enroll_count,
        vectors,
    })
}

/// Identification rule: the enrolled speaker whose vector has the highest
/// cosine similarity with the clip embedding.
pub fn identify(
    model: &SpeakerModel,
    clip: &AudioClip,
    enrollment: &EnrollmentSet,
) -> Result<(String, f64), ModelError> {
    let emb = model.embed(clip)?;
    enrollment.best_match(&emb)
}
