//! Full evaluation runs and their on-disk artifacts: report.json plus flat
//! CSVs, all deterministic byte-for-byte, with input hashes so any number
//! can be traced back to the exact model, patch, and corpus that produced it.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::audio::AudioClip;
use crate::corpus::{manifest_to_string, CorpusManifest, ProcState, Split};
use crate::spkmodel::{build_enrollment, model_to_bytes, SpeakerModel};
use crate::uaptrain::{patch_to_bytes, Patch};
use crate::util::{configured_threads, parallel_map_ordered};

use super::similarity::{analyze_embedded, embed_clips};
use super::sweep::{length_sweep, LengthSweepSpec, SweepRow};
use super::{load_eval_clips, perturb, snr_stats, EvalError, Histogram, SimilarityAnalysis};

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    /// Clips per test speaker folded into the enrollment vector.
    pub enroll_count: usize,
    /// Held-out clips per test speaker used for every metric.
    pub eval_count: usize,
    pub sweep: LengthSweepSpec,
    /// Minimum held-out identification accuracy; below it the attack
    /// numbers say nothing and the run refuses to report them.
    pub gate_threshold: f64,
    pub skip_gate: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            enroll_count: 5,
            eval_count: 20,
            sweep: LengthSweepSpec::default(),
            gate_threshold: 0.9,
            skip_gate: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub model_hash: String,
    pub patch_hash: String,
    pub manifest_hash: String,
    /// Whether every test-split clip carries loudness normalization and
    /// nothing else (evaluation clips must never be padded).
    pub loudness_normalized_eval: bool,
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub fooling_rate: f64,
    pub snr_mean_db: f64,
    pub snr_std_db: f64,
    pub held_out_accuracy: f64,
    pub enroll_count: usize,
    pub eval_count: usize,
    pub n_eval_clips: usize,
    pub patch_len: usize,
    pub epsilon: f64,
    pub sample_rate: u32,
    pub sweep: Vec<SweepRow>,
    pub similarity: SimilarityAnalysis,
    pub provenance: Provenance,
}

fn sha_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    format!("{:x}", h.finalize())
}

/// Runs the whole protocol: enrollment, accuracy gate, fooling rate, SNR,
/// length sweep, and similarity histograms, all on held-out test clips.
pub fn run_evaluation(
    model: &SpeakerModel,
    manifest: &CorpusManifest,
    base_dir: &Path,
    patch: &Patch,
    cfg: &EvalConfig,
) -> Result<EvalReport, EvalError> {
    cfg.sweep.validate()?;
    if cfg.enroll_count == 0 || cfg.eval_count == 0 {
        return Err(EvalError::BadSpec(
            "enroll_count and eval_count must be positive".into(),
        ));
    }
    let enrollment = build_enrollment(model, manifest, base_dir, cfg.enroll_count)?;
    let labeled = load_eval_clips(manifest, base_dir, &enrollment, cfg.eval_count)?;
    let embedded = embed_clips(model, &labeled, patch)?;

    let mut correct = 0usize;
    let mut flips = 0usize;
    for e in &embedded {
        let (pred_clean, _) = enrollment.best_match(&e.clean)?;
        let (pred_adv, _) = enrollment.best_match(&e.adv)?;
        correct += (pred_clean == e.speaker_id) as usize;
        flips += (pred_adv != pred_clean) as usize;
    }
    let held_out_accuracy = correct as f64 / embedded.len() as f64;
    if !cfg.skip_gate && held_out_accuracy < cfg.gate_threshold {
        return Err(EvalError::AccuracyGate {
            accuracy: held_out_accuracy,
            threshold: cfg.gate_threshold,
        });
    }
    let fooling_rate = 100.0 * flips as f64 / embedded.len() as f64;

    let clips_only: Vec<AudioClip> = labeled.iter().map(|(_, c)| c.clone()).collect();
    let (snr_mean_db, snr_std_db) = snr_stats(&clips_only, patch)?;
    drop(clips_only);

    let max_len = cfg.sweep.max_length_s();
    let mut sweep_entries = Vec::new();
    for (spk, _) in &enrollment.vectors {
        for e in manifest
            .split_entries(Split::Test)
            .filter(|e| e.speaker_id == *spk)
            .skip(cfg.enroll_count)
        {
            if e.duration_s + 1e-9 >= max_len {
                sweep_entries.push(e.clone());
            }
        }
    }
    sweep_entries.truncate(cfg.sweep.max_clips);
    let threads = configured_threads();
    let loaded = parallel_map_ordered(sweep_entries, threads, |_, entry| {
        crate::corpus::load_entry_clip(&entry, base_dir)
    });
    let sweep_clips: Vec<AudioClip> = loaded.into_iter().collect::<Result<_, _>>()?;
    let sweep = length_sweep(model, &enrollment, &sweep_clips, patch, &cfg.sweep)?;

    let similarity = analyze_embedded(&enrollment, &embedded)?;

    let loudness_normalized_eval = manifest
        .split_entries(Split::Test)
        .all(|e| e.proc == ProcState::Norm);
    let provenance = Provenance {
        model_hash: sha_hex(&model_to_bytes(model)),
        patch_hash: sha_hex(&patch_to_bytes(patch)),
        manifest_hash: sha_hex(manifest_to_string(manifest)?.as_bytes()),
        loudness_normalized_eval,
    };

    Ok(EvalReport {
        fooling_rate,
        snr_mean_db,
        snr_std_db,
        held_out_accuracy,
        enroll_count: cfg.enroll_count,
        eval_count: cfg.eval_count,
        n_eval_clips: embedded.len(),
        patch_len: patch.len(),
        epsilon: patch.epsilon(),
        sample_rate: patch.sample_rate(),
        sweep,
        similarity,
        provenance,
    })
}

/// 9 significant digits, the serialization contract for every float in the
/// report files.
fn fmt9(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.8e}")
    } else if x.is_nan() {
        "nan".to_string()
    } else if x > 0.0 {
        "inf".to_string()
    } else {
        "-inf".to_string()
    }
}

/// JSON value for a float; non-finite values become strings since JSON has
/// no literal for them.
fn jnum(x: f64) -> String {
    if x.is_finite() {
        fmt9(x)
    } else {
        format!("\"{}\"", fmt9(x))
    }
}

fn json_histogram(out: &mut String, indent: &str, h: &Histogram) {
    out.push_str("{\n");
    out.push_str(&format!("{indent}  \"label\": \"{}\",\n", h.label));
    out.push_str(&format!("{indent}  \"lo\": {},\n", jnum(h.lo)));
    out.push_str(&format!("{indent}  \"hi\": {},\n", jnum(h.hi)));
    out.push_str(&format!("{indent}  \"mean\": {},\n", jnum(h.mean)));
    out.push_str(&format!("{indent}  \"total\": {},\n", h.total));
    let counts: Vec<String> = h.counts.iter().map(|c| c.to_string()).collect();
    out.push_str(&format!("{indent}  \"counts\": [{}]\n", counts.join(", ")));
    out.push_str(&format!("{indent}}}"));
}

fn report_json(report: &EvalReport) -> String {
    let mut s = String::new();
    s.push_str("{\n");
    s.push_str("  \"report_version\": 1,\n");
    s.push_str(&format!(
        "  \"fooling_rate\": {},\n",
        jnum(report.fooling_rate)
    ));
    s.push_str(&format!(
        "  \"snr_mean_db\": {},\n",
        jnum(report.snr_mean_db)
    ));
    s.push_str(&format!("  \"snr_std_db\": {},\n", jnum(report.snr_std_db)));
    s.push_str(&format!(
        "  \"held_out_accuracy\": {},\n",
        jnum(report.held_out_accuracy)
    ));
    s.push_str(&format!("  \"enroll_count\": {},\n", report.enroll_count));
    s.push_str(&format!("  \"eval_count\": {},\n", report.eval_count));
    s.push_str(&format!("  \"n_eval_clips\": {},\n", report.n_eval_clips));
    s.push_str(&format!("  \"patch_len\": {},\n", report.patch_len));
    s.push_str(&format!("  \"epsilon\": {},\n", jnum(report.epsilon)));
    s.push_str(&format!("  \"sample_rate\": {},\n", report.sample_rate));
    s.push_str("  \"sweep\": [\n");
    for (i, row) in report.sweep.iter().enumerate() {
        s.push_str(&format!(
            "    {{\"length_s\": {}, \"n_clips\": {}, \"fooling_rate\": {}, \"snr_mean_db\": {}, \"pool_hash\": \"{}\", \"truncated_hash\": \"{}\"}}{}\n",
            jnum(row.length_s),
            row.n_clips,
            jnum(row.fooling_rate),
            jnum(row.snr_mean_db),
            row.pool_hash,
            row.truncated_hash,
            if i + 1 < report.sweep.len() { "," } else { "" }
        ));
    }
    s.push_str("  ],\n");
    s.push_str("  \"similarity\": {\n");
    for (i, h) in report.similarity.histograms().iter().enumerate() {
        s.push_str(&format!("    \"{}\": ", h.label));
        json_histogram(&mut s, "    ", h);
        s.push_str(if i < 2 { ",\n" } else { "\n" });
    }
    s.push_str("  },\n");
    s.push_str("  \"provenance\": {\n");
    s.push_str(&format!(
        "    \"model_hash\": \"{}\",\n",
        report.provenance.model_hash
    ));
    s.push_str(&format!(
        "    \"patch_hash\": \"{}\",\n",
        report.provenance.patch_hash
    ));
    s.push_str(&format!(
        "    \"manifest_hash\": \"{}\",\n",
        report.provenance.manifest_hash
    ));
    s.push_str(&format!(
        "    \"loudness_normalized_eval\": {}\n",
        report.provenance.loudness_normalized_eval
    ));
    s.push_str("  }\n");
    s.push_str("}\n");
    s
}

fn metrics_csv(report: &EvalReport) -> String {
    let mut s = String::from("metric,value\n");
    s.push_str(&format!("fooling_rate,{}\n", fmt9(report.fooling_rate)));
    s.push_str(&format!("snr_mean_db,{}\n", fmt9(report.snr_mean_db)));
    s.push_str(&format!("snr_std_db,{}\n", fmt9(report.snr_std_db)));
    s.push_str(&format!(
        "held_out_accuracy,{}\n",
        fmt9(report.held_out_accuracy)
    ));
    s.push_str(&format!("enroll_count,{}\n", report.enroll_count));
    s.push_str(&format!("eval_count,{}\n", report.eval_count));
    s.push_str(&format!("n_eval_clips,{}\n", report.n_eval_clips));
    s.push_str(&format!("patch_len,{}\n", report.patch_len));
    s.push_str(&format!("epsilon,{}\n", fmt9(report.epsilon)));
    s.push_str(&format!("sample_rate,{}\n", report.sample_rate));
    s
}

fn histograms_csv(report: &EvalReport) -> String {
    let mut s = String::from("label,bin_index,bin_lo,bin_hi,count\n");
    for h in report.similarity.histograms() {
        let edges = h.bin_edges();
        for (i, count) in h.counts.iter().enumerate() {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                h.label,
                i,
                fmt9(edges[i]),
                fmt9(edges[i + 1]),
                count
            ));
        }
    }
    s
}

fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("length_s,n_clips,fooling_rate,snr_mean_db,pool_hash,truncated_hash\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            fmt9(r.length_s),
            r.n_clips,
            fmt9(r.fooling_rate),
            fmt9(r.snr_mean_db),
            r.pool_hash,
            r.truncated_hash
        ));
    }
    s
}

/// Writes report.json, metrics.csv, histograms.csv, and sweep.csv into
/// `out_dir`. Output is a pure function of the report, so reruns on the
/// same inputs are byte-identical.
pub fn emit_report(report: &EvalReport, out_dir: &Path) -> Result<(), EvalError> {
    if report.provenance.model_hash.is_empty() {
        return Err(EvalError::MissingProvenance("model_hash"));
    }
    if report.provenance.patch_hash.is_empty() {
        return Err(EvalError::MissingProvenance("patch_hash"));
    }
    if report.provenance.manifest_hash.is_empty() {
        return Err(EvalError::MissingProvenance("manifest_hash"));
    }
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("report.json"), report_json(report))?;
    fs::write(out_dir.join("metrics.csv"), metrics_csv(report))?;
    fs::write(out_dir.join("histograms.csv"), histograms_csv(report))?;
    fs::write(out_dir.join("sweep.csv"), sweep_csv(&report.sweep))?;
    Ok(())
}

/// Mean absolute neighbor difference of the patch under circular pairing, a
/// stand-in perceptual roughness number reported alongside SNR.
pub fn tv_proxy(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let l = values.len();
    let mut acc = 0.0;
    for i in 0..l {
        acc += (values[(i + 1) % l] - values[i]).abs();
    }
    acc / l as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariantRow {
    pub variant: String,
    pub fooling_rate: f64,
    pub snr_mean_db: f64,
    pub tv_proxy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariantComparison {
    pub rows: Vec<VariantRow>,
}

/// Side-by-side metrics for two patches trained under the same settings but
/// different regularizers. Anything else differing between the patches
/// invalidates the comparison and is an error.
pub fn compare_variants(
    model: &SpeakerModel,
    manifest: &CorpusManifest,
    base_dir: &Path,
    patch_exptv: &Patch,
    patch_l2: &Patch,
    cfg: &EvalConfig,
) -> Result<VariantComparison, EvalError> {
    if patch_exptv.len() != patch_l2.len() {
        return Err(EvalError::ConfigMismatch(format!(
            "patch lengths {} vs {}",
            patch_exptv.len(),
            patch_l2.len()
        )));
    }
    if patch_exptv.epsilon() != patch_l2.epsilon() {
        return Err(EvalError::ConfigMismatch(format!(
            "epsilon {} vs {}",
            patch_exptv.epsilon(),
            patch_l2.epsilon()
        )));
    }
    if patch_exptv.sample_rate() != patch_l2.sample_rate() {
        return Err(EvalError::ConfigMismatch(format!(
            "sample rate {} vs {}",
            patch_exptv.sample_rate(),
            patch_l2.sample_rate()
        )));
    }
    let enrollment = build_enrollment(model, manifest, base_dir, cfg.enroll_count)?;
    let labeled = load_eval_clips(manifest, base_dir, &enrollment, cfg.eval_count)?;
    if labeled.is_empty() {
        return Err(EvalError::EmptyClipSet);
    }
    let threads = configured_threads();
    let jobs: Vec<&(String, AudioClip)> = labeled.iter().collect();
    let outcomes = parallel_map_ordered(jobs, threads, |_, (_, clip)| {
        let clean = model.embed(clip)?;
        let adv_a = model.embed(&perturb(clip, patch_exptv))?;
        let adv_b = model.embed(&perturb(clip, patch_l2))?;
        let (p0, _) = enrollment.best_match(&clean)?;
        let (pa, _) = enrollment.best_match(&adv_a)?;
        let (pb, _) = enrollment.best_match(&adv_b)?;
        Ok::<(bool, bool), EvalError>((pa != p0, pb != p0))
    });
    let mut flips_a = 0usize;
    let mut flips_b = 0usize;
    for o in outcomes {
        let (a, b) = o?;
        flips_a += a as usize;
        flips_b += b as usize;
    }
    let n = labeled.len() as f64;
    let clips_only: Vec<AudioClip> = labeled.iter().map(|(_, c)| c.clone()).collect();
    let (snr_a, _) = snr_stats(&clips_only, patch_exptv)?;
    let (snr_b, _) = snr_stats(&clips_only, patch_l2)?;
    Ok(VariantComparison {
        rows: vec![
            VariantRow {
                variant: "exp_tv".to_string(),
                fooling_rate: 100.0 * flips_a as f64 / n,
                snr_mean_db: snr_a,
                tv_proxy: tv_proxy(patch_exptv.values()),
            },
            VariantRow {
                variant: "l2".to_string(),
                fooling_rate: 100.0 * flips_b as f64 / n,
                snr_mean_db: snr_b,
                tv_proxy: tv_proxy(patch_l2.values()),
            },
        ],
    })
}

fn comparison_csv(cmp: &VariantComparison) -> String {
    let mut s = String::from("variant,fooling_rate,snr_mean_db,tv_proxy\n");
    for r in &cmp.rows {
        s.push_str(&format!(
            "{},{},{},{}\n",
            r.variant,
            fmt9(r.fooling_rate),
            fmt9(r.snr_mean_db),
            fmt9(r.tv_proxy)
        ));
    }
    s
}

fn comparison_json(cmp: &VariantComparison) -> String {
    let mut s = String::from("{\n  \"rows\": [\n");
    for (i, r) in cmp.rows.iter().enumerate() {
        s.push_str(&format!(
            "    {{\"variant\": \"{}\", \"fooling_rate\": {}, \"snr_mean_db\": {}, \"tv_proxy\": {}}}{}\n",
            r.variant,
            jnum(r.fooling_rate),
            jnum(r.snr_mean_db),
            jnum(r.tv_proxy),
            if i + 1 < cmp.rows.len() { "," } else { "" }
        ));
    }
    s.push_str("  ]\n}\n");
    s
}

/// Writes comparison.csv and comparison.json into `out_dir`.
pub fn emit_comparison(cmp: &VariantComparison, out_dir: &Path) -> Result<(), EvalError> {
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("comparison.csv"), comparison_csv(cmp))?;
    fs::write(out_dir.join("comparison.json"), comparison_json(cmp))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::super::tests::tiny_model;
    use super::*;
    use crate::corpus::{build_synthetic_corpus, preprocess_corpus, SynthCorpusConfig};
    use tempfile::TempDir;

    fn micro_eval_corpus(dir: &Path) -> CorpusManifest {
        let raw = build_synthetic_corpus(&SynthCorpusConfig {
            n_train_speakers: 2,
            n_test_speakers: 2,
            utts_per_speaker: 6,
            duration_range: (1.0, 1.6),
            val_utts_per_speaker: 1,
            full_length_clips_per_test_speaker: 4,
            seed: 21,
        })
        .unwrap();
        let (prep, skips) = preprocess_corpus(&raw, Path::new("."), dir, -23.0, 1.0).unwrap();
        assert!(skips.is_empty());
        prep
    }

    fn micro_eval_cfg() -> EvalConfig {
        EvalConfig {
            enroll_count: 2,
            eval_count: 2,
            sweep: LengthSweepSpec {
                lengths_s: vec![1.0, 1.5],
                max_clips: 10,
            },
            gate_threshold: 0.0,
            skip_gate: false,
        }
    }

    #[test]
    fn zero_patch_report_has_no_fooling_and_reruns_byte_identically() {
        let dir = TempDir::new().unwrap();
        let manifest = micro_eval_corpus(dir.path());
        let model = tiny_model();
        let patch = Patch::zeros(160, 0.01).unwrap();
        let cfg = micro_eval_cfg();
        let report = run_evaluation(&model, &manifest, dir.path(), &patch, &cfg).unwrap();
        assert_eq!(report.fooling_rate, 0.0);
        assert_eq!(report.n_eval_clips, 4);
        assert!(report.snr_mean_db.is_infinite());
        assert_eq!(report.sweep.len(), 2);
        assert!(report.sweep.iter().all(|r| r.fooling_rate == 0.0));
        assert_eq!(report.sweep[0].pool_hash, report.sweep[1].pool_hash);
        assert_eq!(report.provenance.model_hash.len(), 64);
        assert_eq!(report.provenance.patch_hash.len(), 64);
        assert_eq!(report.provenance.manifest_hash.len(), 64);
        assert!(report.provenance.loudness_normalized_eval);
        assert_eq!(
            report.similarity.orig_enroll.counts,
            report.similarity.anon_enroll.counts
        );

        let out_a = dir.path().join("out_a");
        let out_b = dir.path().join("out_b");
        emit_report(&report, &out_a).unwrap();
        let report2 = run_evaluation(&model, &manifest, dir.path(), &patch, &cfg).unwrap();
        emit_report(&report2, &out_b).unwrap();
        for name in ["report.json", "metrics.csv", "histograms.csv", "sweep.csv"] {
            let a = fs::read(out_a.join(name)).unwrap();
            let b = fs::read(out_b.join(name)).unwrap();
            assert_eq!(a, b, "{name} differs between identical runs");
        }
        let sweep_lines = fs::read_to_string(out_a.join("sweep.csv")).unwrap();
        assert_eq!(sweep_lines.lines().count(), 1 + report.sweep.len());
        let json = fs::read_to_string(out_a.join("report.json")).unwrap();
        serde_json::from_str::<serde_json::Value>(&json).expect("report.json must parse");
    }

    #[test]
    fn accuracy_gate_blocks_untrustworthy_models() {
        let dir = TempDir::new().unwrap();
        let manifest = micro_eval_corpus(dir.path());
        let model = tiny_model();
        let patch = Patch::zeros(160, 0.01).unwrap();
        let mut cfg = micro_eval_cfg();
        cfg.gate_threshold = 1.01;
        let err = run_evaluation(&model, &manifest, dir.path(), &patch, &cfg).unwrap_err();
        assert!(matches!(err, EvalError::AccuracyGate { .. }));
        cfg.skip_gate = true;
        assert!(run_evaluation(&model, &manifest, dir.path(), &patch, &cfg).is_ok());
    }

    #[test]
    fn report_without_provenance_is_refused() {
        let dir = TempDir::new().unwrap();
        let manifest = micro_eval_corpus(dir.path());
        let model = tiny_model();
        let patch = Patch::zeros(160, 0.01).unwrap();
        let mut report =
            run_evaluation(&model, &manifest, dir.path(), &patch, &micro_eval_cfg()).unwrap();
        report.provenance.patch_hash.clear();
        assert!(matches!(
            emit_report(&report, &dir.path().join("out")),
            Err(EvalError::MissingProvenance("patch_hash"))
        ));
    }

    #[test]
    fn identical_patches_produce_identical_comparison_rows() {
        let dir = TempDir::new().unwrap();
        let manifest = micro_eval_corpus(dir.path());
        let model = tiny_model();
        let patch = Patch::uniform(160, 0.01, 5).unwrap();
        let cfg = micro_eval_cfg();
        let cmp =
            compare_variants(&model, &manifest, dir.path(), &patch, &patch, &cfg).unwrap();
        assert_eq!(cmp.rows.len(), 2);
        assert_eq!(cmp.rows[0].variant, "exp_tv");
        assert_eq!(cmp.rows[1].variant, "l2");
        assert_eq!(cmp.rows[0].fooling_rate, cmp.rows[1].fooling_rate);
        assert_eq!(cmp.rows[0].snr_mean_db, cmp.rows[1].snr_mean_db);
        assert_eq!(cmp.rows[0].tv_proxy, cmp.rows[1].tv_proxy);

        let out = dir.path().join("cmp");
        emit_comparison(&cmp, &out).unwrap();
        let csv = fs::read_to_string(out.join("comparison.csv")).unwrap();
        assert!(csv.starts_with("variant,fooling_rate,snr_mean_db,tv_proxy\n"));
        assert_eq!(csv.lines().count(), 3);
        let json = fs::read_to_string(out.join("comparison.json")).unwrap();
        serde_json::from_str::<serde_json::Value>(&json).expect("comparison.json must parse");
    }

    #[test]
    fn mismatched_patch_configs_are_rejected() {
        let dir = TempDir::new().unwrap();
        let manifest = micro_eval_corpus(dir.path());
        let model = tiny_model();
        let cfg = micro_eval_cfg();
        let a = Patch::zeros(160, 0.01).unwrap();
        let b = Patch::zeros(320, 0.01).unwrap();
        assert!(matches!(
            compare_variants(&model, &manifest, dir.path(), &a, &b, &cfg),
            Err(EvalError::ConfigMismatch(_))
        ));
        let c = Patch::zeros(160, 0.02).unwrap();
        assert!(matches!(
            compare_variants(&model, &manifest, dir.path(), &a, &c, &cfg),
            Err(EvalError::ConfigMismatch(_))
        ));
    }

    #[test]
    fn tv_proxy_matches_hand_computed_values() {
        assert_eq!(tv_proxy(&[0.5, 0.5, 0.5]), 0.0);
        assert_eq!(tv_proxy(&[1.0, -1.0, 1.0, -1.0]), 2.0);
        assert!((tv_proxy(&[0.0, 1.0, 2.0, 3.0]) - 1.5).abs() < 1e-15);
        assert_eq!(tv_proxy(&[]), 0.0);
    }

    #[test]
    fn float_formatting_keeps_nine_significant_digits() {
        assert_eq!(fmt9(0.01), "1.00000000e-2");
        assert_eq!(fmt9(75.7), "7.57000000e1");
        assert_eq!(fmt9(f64::INFINITY), "inf");
        assert_eq!(jnum(f64::INFINITY), "\"inf\"");
        assert_eq!(jnum(1.0), "1.00000000e0");
    }
}
