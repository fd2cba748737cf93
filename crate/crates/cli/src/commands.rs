//! Subcommand bodies. Each stage reads the previous stage's files from the
//! run directory, so stages are independently re-runnable, and every failure
//! carries the process exit code it maps to.

use std::fs;
use std::path::{Path, PathBuf};

use uapforge_core::corpus::{
    build_synthetic_corpus, preprocess_corpus, read_manifest, write_manifest, CorpusError,
    CorpusManifest, Split,
};
use uapforge_core::evalharness::{
    compare_variants, emit_comparison, emit_report, held_out_accuracy, run_evaluation, EvalError,
};
use uapforge_core::spkmodel::{
    build_enrollment, load_model, save_model, train_model, SpeakerModel,
};
use uapforge_core::uaptrain::{
    export_patch_wav, load_patch, save_patch, train_uap, AttackError, LossVariant,
};

use crate::config::RunConfig;

pub const EXIT_TEST_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_GATE: i32 = 4;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }
    pub fn io(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_IO,
            message: message.into(),
        }
    }
    pub fn gate(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_GATE,
            message: message.into(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::io(e.to_string())
    }
}

fn from_corpus(e: CorpusError) -> CliError {
    match e {
        CorpusError::Io(_) | CorpusError::Audio(_) | CorpusError::TooManyFailures { .. } => {
            CliError::io(e.to_string())
        }
        _ => CliError::config(e.to_string()),
    }
}

fn from_attack(e: AttackError) -> CliError {
    match e {
        AttackError::Io(_) => CliError::io(e.to_string()),
        AttackError::BadConfig(_)
        | AttackError::NotAPatchFile
        | AttackError::UnsupportedPatchVersion(_)
        | AttackError::TruncatedPatchFile
        | AttackError::StateMismatch(_) => CliError::config(e.to_string()),
        _ => CliError::io(e.to_string()),
    }
}

fn from_eval(e: EvalError) -> CliError {
    match e {
        EvalError::AccuracyGate { .. } => CliError::gate(e.to_string()),
        EvalError::BadSpec(_) | EvalError::ConfigMismatch(_) | EvalError::MissingProvenance(_) => {
            CliError::config(e.to_string())
        }
        EvalError::Io(_) => CliError::io(e.to_string()),
        _ => CliError::io(e.to_string()),
    }
}

/// Run-directory layout; every stage agrees on these names.
pub struct RunPaths {
    pub corpus_dir: PathBuf,
    pub manifest: PathBuf,
    pub model: PathBuf,
    pub model_log: PathBuf,
}

impl RunPaths {
    pub fn new(out_dir: &Path) -> Self {
        RunPaths {
            corpus_dir: out_dir.join("corpus"),
            manifest: out_dir.join("corpus").join("manifest.txt"),
            model: out_dir.join("model.bin"),
            model_log: out_dir.join("model_train_log.jsonl"),
        }
    }
    pub fn patch(out_dir: &Path, variant: LossVariant) -> PathBuf {
        out_dir.join(format!("patch_{}.bin", variant.as_str()))
    }
    pub fn patch_wav(out_dir: &Path, variant: LossVariant) -> PathBuf {
        out_dir.join(format!("patch_{}.wav", variant.as_str()))
    }
    pub fn attack_state(out_dir: &Path, variant: LossVariant) -> PathBuf {
        out_dir.join(format!("attack_state_{}.json", variant.as_str()))
    }
    pub fn attack_log(out_dir: &Path, variant: LossVariant) -> PathBuf {
        out_dir.join(format!("attack_log_{}.jsonl", variant.as_str()))
    }
}

fn require_file(path: &Path, hint: &str) -> Result<(), CliError> {
    if !path.is_file() {
        return Err(CliError::config(format!(
            "{hint} not found at {}",
            path.display()
        )));
    }
    Ok(())
}

fn load_manifest_checked(path: &Path) -> Result<CorpusManifest, CliError> {
    require_file(path, "corpus manifest")?;
    read_manifest(path).map_err(from_corpus)
}

fn load_model_checked(path: &Path) -> Result<SpeakerModel, CliError> {
    require_file(path, "model checkpoint")?;
    let (model, warnings) = load_model(path).map_err(|e| CliError::config(e.to_string()))?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    Ok(model)
}

fn write_jsonl<T: serde::Serialize>(path: &Path, records: &[T]) -> Result<(), CliError> {
    let mut s = String::new();
    for r in records {
        s.push_str(&serde_json::to_string(r).map_err(|e| CliError::io(e.to_string()))?);
        s.push('\n');
    }
    fs::write(path, s)?;
    Ok(())
}

pub fn gen_data(cfg: &RunConfig) -> Result<(), CliError> {
    let paths = RunPaths::new(&cfg.out_dir);
    let raw = build_synthetic_corpus(&cfg.corpus).map_err(from_corpus)?;
    fs::create_dir_all(&paths.corpus_dir)?;
    let (prep, skips) = preprocess_corpus(
        &raw,
        Path::new("."),
        &paths.corpus_dir,
        cfg.target_lufs,
        cfg.pad_to_s,
    )
    .map_err(from_corpus)?;
    write_manifest(&prep, &paths.manifest).map_err(from_corpus)?;
    let count = |split: Split| prep.split_entries(split).count();
    println!("manifest: {}", paths.manifest.display());
    println!(
        "clips: {} (train {}, val {}, test {})",
        prep.entries.len(),
        count(Split::Train),
        count(Split::Val),
        count(Split::Test)
    );
    println!(
        "speakers: train {}, test {} (disjoint)",
        prep.speakers_in(Split::Train).len(),
        prep.speakers_in(Split::Test).len()
    );
    if !skips.is_empty() {
        println!("skipped clips: {}", skips.len());
        for s in &skips {
            println!("  {}: {}", s.locator, s.reason);
        }
    }
    Ok(())
}

pub fn cmd_train_model(cfg: &RunConfig) -> Result<(), CliError> {
    let paths = RunPaths::new(&cfg.out_dir);
    let manifest = load_manifest_checked(&paths.manifest)?;
    let (model, stats) = train_model(&manifest, &paths.corpus_dir, &cfg.model)
        .map_err(|e| CliError::io(e.to_string()))?;
    save_model(&model, &paths.model).map_err(|e| CliError::io(e.to_string()))?;
    write_jsonl(&paths.model_log, &stats)?;
    let last = stats.last();
    println!("model: {}", paths.model.display());
    println!("log: {}", paths.model_log.display());
    if let Some(s) = last {
        match s.val_accuracy {
            Some(va) => println!(
                "epochs run: {}, final train accuracy {:.4}, val accuracy {:.4}",
                stats.len(),
                s.train_accuracy,
                va
            ),
            None => println!(
                "epochs run: {}, final train accuracy {:.4}",
                stats.len(),
                s.train_accuracy
            ),
        }
    }
    Ok(())
}

/// The identification gate shared by train-uap and evaluate: attack metrics
/// against a model that cannot identify its own speakers mean nothing.
fn check_gate(
    model: &SpeakerModel,
    manifest: &CorpusManifest,
    base_dir: &Path,
    cfg: &RunConfig,
) -> Result<f64, CliError> {
    let enrollment = build_enrollment(model, manifest, base_dir, cfg.eval.enroll_count)
        .map_err(|e| CliError::io(e.to_string()))?;
    let accuracy = held_out_accuracy(model, manifest, base_dir, &enrollment, cfg.eval.eval_count)
        .map_err(from_eval)?;
    if !cfg.eval.skip_gate && accuracy < cfg.eval.gate_threshold {
        return Err(CliError::gate(format!(
            "held-out identification accuracy {:.4} is below the gate {:.4}",
            accuracy, cfg.eval.gate_threshold
        )));
    }
    Ok(accuracy)
}

pub fn cmd_train_uap(cfg: &RunConfig) -> Result<(), CliError> {
    let paths = RunPaths::new(&cfg.out_dir);
    let manifest = load_manifest_checked(&paths.manifest)?;
    let model = load_model_checked(&paths.model)?;
    let accuracy = check_gate(&model, &manifest, &paths.corpus_dir, cfg)?;
    println!("held-out identification accuracy: {accuracy:.4}");

    let variant = cfg.attack.loss_variant;
    let state_path = RunPaths::attack_state(&cfg.out_dir, variant);
    let (patch, log) = train_uap(
        &model,
        &manifest,
        &paths.corpus_dir,
        &cfg.attack,
        Some(&state_path),
    )
    .map_err(from_attack)?;
    let patch_path = RunPaths::patch(&cfg.out_dir, variant);
    save_patch(&patch, &patch_path).map_err(from_attack)?;
    export_patch_wav(&patch, &RunPaths::patch_wav(&cfg.out_dir, variant)).map_err(from_attack)?;
    write_jsonl(&RunPaths::attack_log(&cfg.out_dir, variant), &log)?;
    println!("patch: {}", patch_path.display());
    println!("log: {}", RunPaths::attack_log(&cfg.out_dir, variant).display());
    if let Some(last) = log.last() {
        match last.val_fooling_rate {
            Some(fr) => println!(
                "epochs done: {}, final mean total loss {:.6}, val fooling rate {:.2}%",
                last.epoch, last.mean_total, fr
            ),
            None => println!(
                "epochs done: {}, final mean total loss {:.6}",
                last.epoch, last.mean_total
            ),
        }
    }
    Ok(())
}

pub struct EvaluateArgs {
    /// Patch file; defaults to the configured variant's artifact.
    pub patch: Option<PathBuf>,
    /// Second patch to compare against (emits comparison files).
    pub compare_patch: Option<PathBuf>,
}

pub fn cmd_evaluate(cfg: &RunConfig, args: &EvaluateArgs) -> Result<(), CliError> {
    let paths = RunPaths::new(&cfg.out_dir);
    let manifest = load_manifest_checked(&paths.manifest)?;
    let model = load_model_checked(&paths.model)?;
    let patch_path = args
        .patch
        .clone()
        .unwrap_or_else(|| RunPaths::patch(&cfg.out_dir, cfg.attack.loss_variant));
    require_file(&patch_path, "patch file")?;
    let patch = load_patch(&patch_path).map_err(from_attack)?;

    let report =
        run_evaluation(&model, &manifest, &paths.corpus_dir, &patch, &cfg.eval).map_err(from_eval)?;
    let report_dir = cfg.out_dir.join("report");
    emit_report(&report, &report_dir).map_err(from_eval)?;
    println!("report: {}", report_dir.join("report.json").display());
    println!(
        "fooling rate: {:.2}% over {} clips",
        report.fooling_rate, report.n_eval_clips
    );
    println!(
        "snr: {:.2} dB mean, {:.2} dB std",
        report.snr_mean_db, report.snr_std_db
    );
    println!("held-out accuracy: {:.4}", report.held_out_accuracy);
    for row in &report.sweep {
        println!(
            "  length {:>5.1} s: fooling rate {:.2}% ({} clips)",
            row.length_s, row.fooling_rate, row.n_clips
        );
    }

    if let Some(second) = &args.compare_patch {
        require_file(second, "comparison patch file")?;
        let other = load_patch(second).map_err(from_attack)?;
        let cmp = compare_variants(&model, &manifest, &paths.corpus_dir, &patch, &other, &cfg.eval)
            .map_err(from_eval)?;
        emit_comparison(&cmp, &report_dir).map_err(from_eval)?;
        println!("comparison: {}", report_dir.join("comparison.csv").display());
        for row in &cmp.rows {
            println!(
                "  {:>6}: fooling rate {:.2}%, snr {:.2} dB, tv {:.6}",
                row.variant, row.fooling_rate, row.snr_mean_db, row.tv_proxy
            );
        }
    }
    Ok(())
}

pub fn cmd_selftest() -> Result<(), CliError> {
    let results = crate::selftest::run_all();
    print!("{}", crate::selftest::render(&results));
    let failed: Vec<&str> = results
        .iter()
        .filter(|r| !r.passed)
        .map(|r| r.name)
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError {
            code: EXIT_TEST_FAILURE,
            message: format!("selftest failed: {}", failed.join(", ")),
        })
    }
}
