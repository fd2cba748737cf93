//! Flat sectioned key-value run configuration. Every run echoes the fully
//! resolved form as its first output block, and that echo parses back to the
//! identical config, so any printed run is re-runnable as-is.

use std::fmt::Write as _;
use std::path::PathBuf;

use uapforge_core::corpus::SynthCorpusConfig;
use uapforge_core::evalharness::EvalConfig;
use uapforge_core::spkmodel::TrainModelConfig;
use uapforge_core::uaptrain::{AttackConfig, LossVariant};
use uapforge_core::util::mix_seed;

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub line: usize,
    pub detail: String,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.line == 0 {
            write!(f, "config error: {}", self.detail)
        } else {
            write!(f, "config error at line {}: {}", self.line, self.detail)
        }
    }
}

/// All pipeline settings in one place. Stage seeds are derived from the one
/// top-level seed, so a single number pins the whole run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub corpus: SynthCorpusConfig,
    pub target_lufs: f64,
    pub pad_to_s: f64,
    pub model: TrainModelConfig,
    pub attack: AttackConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut cfg = RunConfig {
            seed: 42,
            out_dir: PathBuf::from("runs/default"),
            corpus: SynthCorpusConfig::default(),
            target_lufs: -23.0,
            pad_to_s: 20.0,
            model: TrainModelConfig::default(),
            attack: AttackConfig::with_variant(LossVariant::ExpTv),
            eval: EvalConfig::default(),
        };
        cfg.reseed();
        cfg
    }
}

impl RunConfig {
    /// Re-derives the per-stage seeds from the top-level seed. Stages use
    /// distinct streams so no stage reuses another's random draws.
    pub fn reseed(&mut self) {
        self.corpus.seed = mix_seed(self.seed, 1);
        self.model.seed = mix_seed(self.seed, 2);
        self.attack.seed = mix_seed(self.seed, 3);
    }

    pub fn parse(text: &str) -> Result<RunConfig, ConfigError> {
        let mut cfg = RunConfig::default();
        // The regularizer weight default depends on the loss variant, so the
        // variant must be known before any explicit [attack] keys land. A
        // pre-pass finds the last loss key; malformed lines are left for the
        // main pass, which owns error reporting.
        if let Some(variant) = scan_loss_variant(text) {
            cfg.attack = AttackConfig::with_variant(variant);
        }
        let mut section = String::new();
        for (idx, raw) in text.lines().enumerate() {
            let lineno = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                section = name.trim().to_string();
                match section.as_str() {
                    "run" | "corpus" | "model" | "attack" | "eval" => {}
                    other => {
                        return Err(ConfigError {
                            line: lineno,
                            detail: format!("unknown section [{other}]"),
                        })
                    }
                }
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError {
                    line: lineno,
                    detail: format!("expected `key = value`, got {line:?}"),
                });
            };
            let key = key.trim();
            let value = value.trim();
            cfg.apply(&section, key, value)
                .map_err(|detail| ConfigError {
                    line: lineno,
                    detail,
                })?;
        }
        cfg.reseed();
        cfg.validate().map_err(|detail| ConfigError {
            line: 0,
            detail,
        })?;
        Ok(cfg)
    }

    fn apply(&mut self, section: &str, key: &str, value: &str) -> Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String> {
            value
                .parse::<T>()
                .map_err(|_| format!("bad value {value:?} for {key}"))
        }
        fn boolean(key: &str, value: &str) -> Result<bool, String> {
            match value {
                "true" => Ok(true),
                "false" => Ok(false),
                _ => Err(format!("bad value {value:?} for {key} (want true|false)")),
            }
        }
        match (section, key) {
            ("run", "seed") => self.seed = num(key, value)?,
            ("run", "out_dir") => self.out_dir = PathBuf::from(value),
            ("corpus", "train_speakers") => self.corpus.n_train_speakers = num(key, value)?,
            ("corpus", "test_speakers") => self.corpus.n_test_speakers = num(key, value)?,
            ("corpus", "utts_per_speaker") => self.corpus.utts_per_speaker = num(key, value)?,
            ("corpus", "duration_lo_s") => self.corpus.duration_range.0 = num(key, value)?,
            ("corpus", "duration_hi_s") => self.corpus.duration_range.1 = num(key, value)?,
            ("corpus", "val_utts_per_speaker") => {
                self.corpus.val_utts_per_speaker = num(key, value)?
            }
            ("corpus", "full_length_test_clips") => {
                self.corpus.full_length_clips_per_test_speaker = num(key, value)?
            }
            ("corpus", "target_lufs") => self.target_lufs = num(key, value)?,
            ("corpus", "pad_to_s") => self.pad_to_s = num(key, value)?,
            ("model", "epochs") => self.model.epochs = num(key, value)?,
            ("model", "lr") => self.model.lr = num(key, value)?,
            ("model", "batch") => self.model.batch = num(key, value)?,
            ("model", "crop_s") => self.model.crop_s = num(key, value)?,
            ("model", "early_stop_accuracy") => {
                self.model.early_stop_accuracy = if value == "none" {
                    None
                } else {
                    Some(num(key, value)?)
                }
            }
            ("model", "val_probe_clips") => self.model.val_probe_clips = num(key, value)?,
            ("model", "val_probe_s") => self.model.val_probe_s = num(key, value)?,
            ("attack", "loss") => {
                self.attack.loss_variant = LossVariant::parse(value)
                    .ok_or_else(|| format!("bad value {value:?} for loss (want exp_tv|l2)"))?
            }
            ("attack", "epochs") => self.attack.epochs = num(key, value)?,
            ("attack", "lr") => self.attack.lr = num(key, value)?,
            ("attack", "batch") => self.attack.batch = num(key, value)?,
            ("attack", "patch_len") => self.attack.patch_len = num(key, value)?,
            ("attack", "epsilon") => self.attack.epsilon = num(key, value)?,
            ("attack", "w_fooling") => self.attack.w_fooling = num(key, value)?,
            ("attack", "w_reg") => self.attack.w_reg = num(key, value)?,
            ("attack", "random_init") => self.attack.random_init = boolean(key, value)?,
            ("attack", "circular_pairs") => self.attack.circular_pairs = boolean(key, value)?,
            ("attack", "phase_jitter") => self.attack.phase_jitter = boolean(key, value)?,
            ("attack", "clips_per_epoch") => {
                self.attack.clips_per_epoch = if value == "all" {
                    None
                } else {
                    Some(num(key, value)?)
                }
            }
            ("attack", "val_probe_clips") => self.attack.val_probe_clips = num(key, value)?,
            ("attack", "val_probe_every") => self.attack.val_probe_every = num(key, value)?,
            ("eval", "enroll_count") => self.eval.enroll_count = num(key, value)?,
            ("eval", "eval_count") => self.eval.eval_count = num(key, value)?,
            ("eval", "sweep_lengths_s") => {
                self.eval.sweep.lengths_s = parse_lengths(value)?;
            }
            ("eval", "sweep_max_clips") => self.eval.sweep.max_clips = num(key, value)?,
            ("eval", "gate_threshold") => self.eval.gate_threshold = num(key, value)?,
            ("eval", "skip_gate") => self.eval.skip_gate = boolean(key, value)?,
            ("", k) => return Err(format!("key {k} appears before any [section]")),
            (s, k) => return Err(format!("unknown key {k} in section [{s}]")),
        }
        Ok(())
    }

    fn validate(&self) -> Result<(), String> {
        self.attack.validate().map_err(|e| e.to_string())?;
        self.eval.sweep.validate().map_err(|e| e.to_string())?;
        if self.eval.enroll_count == 0 || self.eval.eval_count == 0 {
            return Err("enroll_count and eval_count must be positive".into());
        }
        if !(self.pad_to_s > 0.0) {
            return Err("pad_to_s must be positive".into());
        }
        Ok(())
    }

    /// The canonical text image: every key, resolved, grouped by section.
    /// `parse(to_text(c)) == c` for any valid config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "[run]");
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "out_dir = {}", self.out_dir.display());
        let _ = writeln!(s, "[corpus]");
        let _ = writeln!(s, "train_speakers = {}", self.corpus.n_train_speakers);
        let _ = writeln!(s, "test_speakers = {}", self.corpus.n_test_speakers);
        let _ = writeln!(s, "utts_per_speaker = {}", self.corpus.utts_per_speaker);
        let _ = writeln!(s, "duration_lo_s = {:?}", self.corpus.duration_range.0);
        let _ = writeln!(s, "duration_hi_s = {:?}", self.corpus.duration_range.1);
        let _ = writeln!(
            s,
            "val_utts_per_speaker = {}",
            self.corpus.val_utts_per_speaker
        );
        let _ = writeln!(
            s,
            "full_length_test_clips = {}",
            self.corpus.full_length_clips_per_test_speaker
        );
        let _ = writeln!(s, "target_lufs = {:?}", self.target_lufs);
        let _ = writeln!(s, "pad_to_s = {:?}", self.pad_to_s);
        let _ = writeln!(s, "[model]");
        let _ = writeln!(s, "epochs = {}", self.model.epochs);
        let _ = writeln!(s, "lr = {:?}", self.model.lr);
        let _ = writeln!(s, "batch = {}", self.model.batch);
        let _ = writeln!(s, "crop_s = {:?}", self.model.crop_s);
        match self.model.early_stop_accuracy {
            Some(a) => {
                let _ = writeln!(s, "early_stop_accuracy = {a:?}");
            }
            None => {
                let _ = writeln!(s, "early_stop_accuracy = none");
            }
        }
        let _ = writeln!(s, "val_probe_clips = {}", self.model.val_probe_clips);
        let _ = writeln!(s, "val_probe_s = {:?}", self.model.val_probe_s);
        let _ = writeln!(s, "[attack]");
        let _ = writeln!(s, "loss = {}", self.attack.loss_variant.as_str());
        let _ = writeln!(s, "epochs = {}", self.attack.epochs);
        let _ = writeln!(s, "lr = {:?}", self.attack.lr);
        let _ = writeln!(s, "batch = {}", self.attack.batch);
        let _ = writeln!(s, "patch_len = {}", self.attack.patch_len);
        let _ = writeln!(s, "epsilon = {:?}", self.attack.epsilon);
        let _ = writeln!(s, "w_fooling = {:?}", self.attack.w_fooling);
        let _ = writeln!(s, "w_reg = {:?}", self.attack.w_reg);
        let _ = writeln!(s, "random_init = {}", self.attack.random_init);
        let _ = writeln!(s, "circular_pairs = {}", self.attack.circular_pairs);
        let _ = writeln!(s, "phase_jitter = {}", self.attack.phase_jitter);
        match self.attack.clips_per_epoch {
            Some(n) => {
                let _ = writeln!(s, "clips_per_epoch = {n}");
            }
            None => {
                let _ = writeln!(s, "clips_per_epoch = all");
            }
        }
        let _ = writeln!(s, "val_probe_clips = {}", self.attack.val_probe_clips);
        let _ = writeln!(s, "val_probe_every = {}", self.attack.val_probe_every);
        let _ = writeln!(s, "[eval]");
        let _ = writeln!(s, "enroll_count = {}", self.eval.enroll_count);
        let _ = writeln!(s, "eval_count = {}", self.eval.eval_count);
        let lengths: Vec<String> = self
            .eval
            .sweep
            .lengths_s
            .iter()
            .map(|l| format!("{l:?}"))
            .collect();
        let _ = writeln!(s, "sweep_lengths_s = {}", lengths.join(","));
        let _ = writeln!(s, "sweep_max_clips = {}", self.eval.sweep.max_clips);
        let _ = writeln!(s, "gate_threshold = {:?}", self.eval.gate_threshold);
        let _ = writeln!(s, "skip_gate = {}", self.eval.skip_gate);
        s
    }
}

fn scan_loss_variant(text: &str) -> Option<LossVariant> {
    let mut section = "";
    let mut found = None;
    for raw in text.lines() {
        let line = raw.trim();
        if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            section = name.trim();
            continue;
        }
        if section != "attack" {
            continue;
        }
        if let Some((key, value)) = line.split_once('=') {
            if key.trim() == "loss" {
                if let Some(v) = LossVariant::parse(value.trim()) {
                    found = Some(v);
                }
            }
        }
    }
    found
}

pub fn parse_lengths(value: &str) -> Result<Vec<f64>, String> {
    let lengths: Result<Vec<f64>, _> = value
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect();
    lengths.map_err(|_| format!("bad sweep lengths {value:?} (want comma-separated seconds)"))
}
