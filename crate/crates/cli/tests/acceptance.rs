//! End-to-end acceptance suite: property checks on the numeric kernels plus
//! a full pipeline run on the default configuration. Each numbered criterion
//! prints one PASS/FAIL line; the test fails if any criterion fails.
//!
//! The pipeline criteria run the real binary single-threaded and take tens
//! of minutes; the suite is meant for `cargo test --workspace` completeness
//! runs, not inner-loop iteration.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use uapforge_core::audio::{
    measure_loudness, normalize_loudness, read_wav, snr_db, tile_patch, AudioClip, SAMPLE_RATE,
};
use uapforge_core::corpus::{
    build_synthetic_corpus, generate_speaker, preprocess_corpus, synthesize_utterance, Split,
    SynthCorpusConfig,
};
use uapforge_core::gradcore::{finite_diff_check, GradError, Tape, Tensor};
use uapforge_core::spkmodel::{ConvSpec, ModelConfig, SpeakerModel};
use uapforge_core::uaptrain::{phi, save_patch, Patch};

const BIN: &str = env!("CARGO_BIN_EXE_uapforge");

struct Outcome {
    line: String,
    failed: bool,
}

fn report(n: usize, name: &str, started: Instant, result: Result<String, String>) -> Outcome {
    let secs = started.elapsed().as_secs_f64();
    let (verdict, detail, failed) = match result {
        Ok(d) => ("PASS", d, false),
        Err(d) => ("FAIL", d, true),
    };
    let line = format!("criterion {n:2} {verdict} {name:<22} [{secs:7.1}s] {detail}");
    println!("{line}");
    Outcome { line, failed }
}

fn run_cli(dir: &Path, args: &[&str]) -> Result<String, String> {
    let out = Command::new(BIN)
        .args(args)
        .env("UAPFORGE_THREADS", "1")
        .current_dir(dir)
        .output()
        .map_err(|e| format!("spawn {args:?}: {e}"))?;
    if !out.status.success() {
        return Err(format!(
            "{args:?} exited {:?}\nstdout:\n{}\nstderr:\n{}",
            out.status.code(),
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn tiny_model() -> SpeakerModel {
    let cfg = ModelConfig {
        conv: vec![
            ConvSpec {
                out_ch: 4,
                in_ch: 1,
                kernel: 16,
                stride: 8,
            },
            ConvSpec {
                out_ch: 8,
                in_ch: 4,
                kernel: 4,
                stride: 4,
            },
        ],
        emb_dim: 8,
        n_classes: 2,
    };
    SpeakerModel::new(cfg, vec!["a".into(), "b".into()], 3)
}

/// Criterion 1: analytic gradients match central differences, per elementary
/// op and end-to-end through embed(clip + tiled patch).
fn gradient_correctness() -> Result<String, String> {
    type Graph = fn(&Tape, &Tensor) -> Result<Tensor, GradError>;
    let ops: [(&str, Graph); 6] = [
        ("abs", |_t, p| Ok(p.abs().mean_all())),
        ("exp", |_t, p| Ok(p.scale(0.5).exp().mean_all())),
        ("tanh", |_t, p| Ok(p.tanh().mean_all())),
        ("mul", |_t, p| Ok(p.mul(p)?.mean_all())),
        ("sqrt_norm", |_t, p| Ok(p.mul(p)?.sum_all().sqrt()?)),
        ("affine", |_t, p| {
            Ok(p.scale(1.7).add_scalar(0.3).tanh().mean_all())
        }),
    ];
    let mut worst_op = 0.0f64;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Keep coordinates away from 0 so |.| has a two-sided neighborhood.
        let x0: Vec<f64> = (0..10)
            .map(|_| {
                let v: f64 = rng.gen_range(0.05..0.8);
                if rng.gen_bool(0.5) {
                    v
                } else {
                    -v
                }
            })
            .collect();
        for (name, graph) in &ops {
            let rep = finite_diff_check(&x0, 1e-4, |t, p| graph(t, p))
                .map_err(|e| format!("op {name} seed {seed}: {e}"))?;
            if !rep.pass {
                return Err(format!(
                    "op {name} seed {seed}: max rel err {:.3e}",
                    rep.max_rel_err
                ));
            }
            worst_op = worst_op.max(rep.max_rel_err);
        }
    }

    let model = tiny_model();
    let clip = synthesize_utterance(&generate_speaker(31), 1.0, 4).unwrap();
    let n = clip.len();
    let target: Vec<f64> = (0..model.cfg.emb_dim)
        .map(|i| if i % 2 == 0 { 0.5 } else { -0.5 })
        .collect();
    let mut worst_e2e = 0.0f64;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let p0: Vec<f64> = (0..48).map(|_| rng.gen_range(-0.009..0.009)).collect();
        let rep = finite_diff_check(&p0, 1e-3, |tape, p| {
            let mt = model.stage(tape, false)?;
            let x = tape.input(&[n], clip.samples.clone())?;
            let adv = x.add(&p.tile_to(n)?)?.reshape(&[1, n])?;
            let emb = model.embedding_graph(&mt, &adv)?;
            let t = tape.input(&[target.len()], target.clone())?;
            emb.cosine_similarity(&t)
        })
        .map_err(|e| format!("end-to-end seed {seed}: {e}"))?;
        if !rep.pass {
            return Err(format!(
                "end-to-end seed {seed}: max rel err {:.3e}",
                rep.max_rel_err
            ));
        }
        worst_e2e = worst_e2e.max(rep.max_rel_err);
    }
    Ok(format!(
        "20 seeds, per-op err<=1e-4 (worst {worst_op:.1e}), end-to-end err<=1e-3 (worst {worst_e2e:.1e})"
    ))
}

/// Criterion 2: the neighbor-pair penalty matches an independently written
/// piecewise oracle on fixed anchors and 1000 random pairs.
fn phi_oracle_table() -> Result<String, String> {
    fn oracle(x: f64, y: f64) -> f64 {
        let (ax, ay) = (x.abs(), y.abs());
        if ay > ax {
            return (ay - ax).exp() - 1.0;
        }
        // Nonzero values of opposite sign; zero never counts as a flip.
        if x * y < 0.0 {
            ay.exp() - 1.0
        } else {
            0.0
        }
    }
    let anchors = [
        (0.1, 0.2, 0.1f64.exp() - 1.0),
        (0.2, 0.1, 0.0),
        (0.2, -0.1, 0.1f64.exp() - 1.0),
        (0.0, 0.0, 0.0),
    ];
    for (x, y, want) in anchors {
        if (phi(x, y) - want).abs() > 1e-12 {
            return Err(format!("anchor phi({x},{y}) = {} want {want}", phi(x, y)));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for i in 0..1000 {
        let draw = |rng: &mut ChaCha8Rng| -> f64 {
            if rng.gen_bool(0.1) {
                0.0
            } else {
                rng.gen_range(-0.5..0.5)
            }
        };
        let x = draw(&mut rng);
        let y = draw(&mut rng);
        let (got, want) = (phi(x, y), oracle(x, y));
        if (got - want).abs() > 1e-12 {
            return Err(format!("pair {i}: phi({x},{y}) = {got} want {want}"));
        }
    }
    Ok("4 anchors + 1000 random pairs agree to 1e-12".into())
}

/// Criterion 3: tiling an l-periodic patch to n = 4l puts all DFT energy on
/// multiples of n/l, against a brute-force DFT written here.
fn tiling_comb_property() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for case in 0..50 {
        let l = [4usize, 8, 16][case % 3];
        let n = 4 * l;
        let patch: Vec<f64> = (0..l).map(|_| rng.gen_range(-0.01..0.01)).collect();
        let tiled = tile_patch(&patch, n);
        let mut total = 0.0;
        let mut off = 0.0;
        for k in 0..n {
            let (mut re, mut im) = (0.0f64, 0.0f64);
            for (t, &v) in tiled.iter().enumerate() {
                let ang = -2.0 * std::f64::consts::PI * (k * t) as f64 / n as f64;
                re += v * ang.cos();
                im += v * ang.sin();
            }
            let e = re * re + im * im;
            total += e;
            if k % (n / l) != 0 {
                off += e;
            }
        }
        if total > 0.0 {
            let frac = off / total;
            worst = worst.max(frac);
            if frac >= 1e-10 {
                return Err(format!("case {case} (l={l}): off-comb fraction {frac:.3e}"));
            }
        }
    }
    Ok(format!("50 patches, worst off-comb fraction {worst:.1e}"))
}

/// Criterion 4: snr scaling law to 1e-9 dB and the equal-norm case exactly 0.
fn snr_identities() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x: Vec<f64> = (0..1000).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let d: Vec<f64> = (0..1000).map(|_| rng.gen_range(-0.01..0.01)).collect();
    let base = snr_db(&x, &d).map_err(|e| e.to_string())?;
    for alpha in [0.03125f64, 0.5, 2.0, 10.0] {
        let scaled: Vec<f64> = d.iter().map(|v| v * alpha).collect();
        let got = snr_db(&x, &scaled).map_err(|e| e.to_string())?;
        let want = base - 20.0 * alpha.log10();
        if (got - want).abs() > 1e-9 {
            return Err(format!(
                "alpha {alpha}: snr {got} vs {want} (diff {:.2e})",
                got - want
            ));
        }
    }
    let negated: Vec<f64> = x.iter().map(|v| -v).collect();
    let zero = snr_db(&x, &negated).map_err(|e| e.to_string())?;
    if zero != 0.0 {
        return Err(format!("equal-norm snr {zero} != 0"));
    }
    Ok("scaling law within 1e-9 dB, equal-norm exactly 0 dB".into())
}

/// Criterion 5: 997 Hz sine at -18 dBFS RMS measures -18 +/- 0.5 LUFS;
/// normalization round-trips and is idempotent within 0.5 LU.
fn loudness_anchor() -> Result<String, String> {
    let amp = 10.0f64.powf(-18.0 / 20.0) * std::f64::consts::SQRT_2;
    let n = 3 * SAMPLE_RATE as usize;
    let samples: Vec<f64> = (0..n)
        .map(|t| amp * (2.0 * std::f64::consts::PI * 997.0 * t as f64 / SAMPLE_RATE as f64).sin())
        .collect();
    let clip = AudioClip::new(samples, SAMPLE_RATE);
    let stats = measure_loudness(&clip).map_err(|e| e.to_string())?;
    if (stats.integrated_loudness + 18.0).abs() > 0.5 {
        return Err(format!(
            "anchor measured {:.3} LUFS, want -18 +/- 0.5",
            stats.integrated_loudness
        ));
    }
    let (once, _) = normalize_loudness(&clip, -23.0).map_err(|e| e.to_string())?;
    let l1 = measure_loudness(&once).map_err(|e| e.to_string())?.integrated_loudness;
    if (l1 + 23.0).abs() > 0.5 {
        return Err(format!("round-trip measured {l1:.3} LUFS, want -23 +/- 0.5"));
    }
    let (twice, _) = normalize_loudness(&once, -23.0).map_err(|e| e.to_string())?;
    let l2 = measure_loudness(&twice).map_err(|e| e.to_string())?.integrated_loudness;
    if (l2 - l1).abs() > 0.5 {
        return Err(format!("idempotence drift {:.3} LU", l2 - l1));
    }
    Ok(format!(
        "anchor {:.2} LUFS, round-trip {:.2}, idempotence drift {:.3} LU",
        stats.integrated_loudness,
        l1,
        (l2 - l1).abs()
    ))
}

/// Criterion 6: training clips are repeat-padded to 20 s with no injected
/// silence; evaluation clips keep their original sample counts.
fn preprocessing_contract(dir: &Path) -> Result<String, String> {
    let out_dir = dir.join("prep_out");
    let cfg = SynthCorpusConfig {
        n_train_speakers: 3,
        n_test_speakers: 2,
        utts_per_speaker: 6,
        duration_range: (2.0, 6.0),
        val_utts_per_speaker: 1,
        full_length_clips_per_test_speaker: 2,
        seed: 13,
    };
    let manifest = build_synthetic_corpus(&cfg).map_err(|e| e.to_string())?;
    let (processed, skips) =
        preprocess_corpus(&manifest, &dir, &out_dir, -23.0, 20.0).map_err(|e| e.to_string())?;
    if !skips.is_empty() {
        return Err(format!("{} clips skipped", skips.len()));
    }
    if processed.entries.len() != manifest.entries.len() {
        return Err("entry count changed during preprocessing".into());
    }
    let pad_samples = 20 * SAMPLE_RATE as usize;
    let mut padded = 0;
    let mut unpadded = 0;
    for (entry, orig) in processed.entries.iter().zip(&manifest.entries) {
        if entry.speaker_id != orig.speaker_id {
            return Err("entry order changed during preprocessing".into());
        }
        let clip = read_wav(&out_dir.join(&entry.locator)).map_err(|e| e.to_string())?;
        match entry.split {
            Split::Train | Split::Val => {
                if clip.len() != pad_samples {
                    return Err(format!(
                        "{}: padded length {} != {pad_samples}",
                        entry.locator,
                        clip.len()
                    ));
                }
                for (w, window) in clip.samples.chunks(3200).enumerate() {
                    let peak = window.iter().fold(0.0f64, |m, s| m.max(s.abs()));
                    if peak <= 1e-6 {
                        return Err(format!(
                            "{}: silent 0.2 s window {w} (peak {peak:.2e})",
                            entry.locator
                        ));
                    }
                }
                padded += 1;
            }
            Split::Test => {
                let want = (orig.duration_s * SAMPLE_RATE as f64).round() as usize;
                if clip.len() != want {
                    return Err(format!(
                        "{}: eval length {} != source {want}",
                        entry.locator,
                        clip.len()
                    ));
                }
                unpadded += 1;
            }
        }
    }
    Ok(format!(
        "{padded} train/val clips padded silence-free, {unpadded} eval clips untouched"
    ))
}

fn json(path: &Path) -> Result<serde_json::Value, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn f(v: &serde_json::Value, key: &str) -> Result<f64, String> {
    v.get(key)
        .and_then(|x| x.as_f64())
        .ok_or_else(|| format!("missing numeric field {key}"))
}

struct PipelineArtifacts {
    report: serde_json::Value,
    comparison: serde_json::Value,
    zero_fr: f64,
    pipeline_secs: f64,
    eval_secs: f64,
}

/// Runs the default-configuration pipeline once, plus the l2 variant and a
/// zero-patch control, all single-threaded.
fn run_pipeline_a(dir: &Path) -> Result<PipelineArtifacts, String> {
    let t0 = Instant::now();
    run_cli(dir, &["gen-data", "--out-dir", "runA"])?;
    run_cli(dir, &["train-model", "--out-dir", "runA"])?;
    run_cli(dir, &["train-uap", "--out-dir", "runA"])?;
    run_cli(dir, &["train-uap", "--out-dir", "runA", "--loss", "l2"])?;

    let zero = Patch::zeros(3200, 0.01).map_err(|e| e.to_string())?;
    let zero_path = dir.join("runA/zero_patch.bin");
    save_patch(&zero, &zero_path).map_err(|e| e.to_string())?;
    run_cli(
        dir,
        &[
            "evaluate",
            "--out-dir",
            "runA",
            "--patch",
            "runA/zero_patch.bin",
        ],
    )?;
    let zero_fr = f(&json(&dir.join("runA/report/report.json"))?, "fooling_rate")?;

    let te = Instant::now();
    run_cli(
        dir,
        &[
            "evaluate",
            "--out-dir",
            "runA",
            "--compare-patch",
            "runA/patch_l2.bin",
        ],
    )?;
    let eval_secs = te.elapsed().as_secs_f64();
    let report = json(&dir.join("runA/report/report.json"))?;
    let comparison = json(&dir.join("runA/report/comparison.json"))?;
    Ok(PipelineArtifacts {
        report,
        comparison,
        zero_fr,
        pipeline_secs: t0.elapsed().as_secs_f64(),
        eval_secs,
    })
}

fn desk_scale_pipeline(a: &PipelineArtifacts) -> Result<String, String> {
    let accuracy = f(&a.report, "held_out_accuracy")?;
    if accuracy < 0.9 {
        return Err(format!("held-out accuracy {accuracy:.4} < 0.90"));
    }
    let fr = f(&a.report, "fooling_rate")?;
    if fr < 50.0 {
        return Err(format!("exp_tv fooling rate {fr:.2}% < 50%"));
    }
    if a.zero_fr != 0.0 {
        return Err(format!("zero patch fooling rate {}% != 0", a.zero_fr));
    }
    let rows = a
        .comparison
        .get("rows")
        .and_then(|r| r.as_array())
        .ok_or("comparison.json missing rows")?;
    let find = |name: &str| -> Result<(f64, f64), String> {
        let row = rows
            .iter()
            .find(|r| r.get("variant").and_then(|v| v.as_str()) == Some(name))
            .ok_or_else(|| format!("comparison missing variant {name}"))?;
        Ok((f(row, "fooling_rate")?, f(row, "snr_mean_db")?))
    };
    let (fr_exp, snr_exp) = find("exp_tv")?;
    let (fr_l2, snr_l2) = find("l2")?;
    if (fr_exp - fr_l2).abs() > 5.0 {
        return Err(format!(
            "fooling rates not matched: exp_tv {fr_exp:.2}% vs l2 {fr_l2:.2}%"
        ));
    }
    if snr_exp < snr_l2 {
        return Err(format!(
            "snr ordering violated: exp_tv {snr_exp:.2} dB < l2 {snr_l2:.2} dB"
        ));
    }
    let budget = if a.pipeline_secs < 1800.0 {
        "within 30 min"
    } else {
        "OVER 30 min target"
    };
    Ok(format!(
        "acc {accuracy:.3}, FR exp_tv {fr_exp:.1}% l2 {fr_l2:.1}% zero {:.1}%, snr {snr_exp:.2}>={snr_l2:.2} dB, {:.0}s {budget}",
        a.zero_fr, a.pipeline_secs
    ))
}

fn length_robustness(a: &PipelineArtifacts) -> Result<String, String> {
    let rows = a
        .report
        .get("sweep")
        .and_then(|r| r.as_array())
        .ok_or("report.json missing sweep rows")?;
    if rows.len() != 5 {
        return Err(format!("{} sweep rows, want 5", rows.len()));
    }
    let mut lengths = Vec::new();
    let mut rates = Vec::new();
    let mut pool_hashes = Vec::new();
    for row in rows {
        lengths.push(f(row, "length_s")?);
        rates.push(f(row, "fooling_rate")?);
        let pool = row
            .get("pool_hash")
            .and_then(|h| h.as_str())
            .ok_or("row missing pool_hash")?;
        let trunc = row
            .get("truncated_hash")
            .and_then(|h| h.as_str())
            .ok_or("row missing truncated_hash")?;
        if pool.len() != 64 || trunc.len() != 64 {
            return Err("clip hashes are not 64-char digests".into());
        }
        pool_hashes.push(pool.to_string());
    }
    if lengths != [3.0, 5.0, 10.0, 15.0, 20.0] {
        return Err(format!("sweep lengths {lengths:?}"));
    }
    if pool_hashes.windows(2).any(|w| w[0] != w[1]) {
        return Err("pool hash differs between rows".into());
    }
    let spread = rates.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - rates.iter().cloned().fold(f64::INFINITY, f64::min);
    if spread > 20.0 {
        return Err(format!("fooling-rate spread {spread:.1} points > 20"));
    }
    if a.eval_secs >= 300.0 {
        return Err(format!("evaluation took {:.0}s >= 300s", a.eval_secs));
    }
    Ok(format!(
        "spread {spread:.1} points over {rates:?}, one pool, eval {:.0}s",
        a.eval_secs
    ))
}

fn similarity_ordering(a: &PipelineArtifacts) -> Result<String, String> {
    let sim = a.report.get("similarity").ok_or("report.json missing similarity")?;
    let mean = |k: &str| -> Result<f64, String> {
        sim.get(k)
            .map(|h| f(h, "mean"))
            .ok_or_else(|| format!("similarity missing {k}"))?
    };
    let orig_enroll = mean("orig_enroll")?;
    let anon_enroll = mean("anon_enroll")?;
    let anon_anon = mean("anon_anon")?;
    if anon_enroll >= orig_enroll - 0.1 {
        return Err(format!(
            "anon-enroll mean {anon_enroll:.3} not below orig-enroll {orig_enroll:.3} by 0.1"
        ));
    }
    if anon_anon <= anon_enroll {
        return Err(format!(
            "anon-anon mean {anon_anon:.3} <= anon-enroll {anon_enroll:.3}"
        ));
    }
    Ok(format!(
        "orig-enroll {orig_enroll:.3}, anon-enroll {anon_enroll:.3}, anon-anon {anon_anon:.3}"
    ))
}

fn determinism(dir: &Path, run_a_report: &Path) -> Result<String, String> {
    run_cli(dir, &["gen-data", "--out-dir", "runB"])?;
    run_cli(dir, &["train-model", "--out-dir", "runB"])?;
    run_cli(dir, &["train-uap", "--out-dir", "runB"])?;
    run_cli(dir, &["evaluate", "--out-dir", "runB"])?;
    let a = std::fs::read(run_a_report).map_err(|e| e.to_string())?;
    let b = std::fs::read(dir.join("runB/report/report.json")).map_err(|e| e.to_string())?;
    if a != b {
        return Err(format!(
            "report.json differs between runs ({} vs {} bytes)",
            a.len(),
            b.len()
        ));
    }
    Ok(format!("two full runs byte-identical ({} bytes)", a.len()))
}

#[test]
fn acceptance_criteria() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let dir: PathBuf = tmp.path().to_path_buf();
    let mut outcomes = Vec::new();
    let mut go = |n: usize, name: &str, result: Result<String, String>, started: Instant| {
        outcomes.push(report(n, name, started, result));
    };

    let t = Instant::now();
    go(1, "gradient_correctness", gradient_correctness(), t);
    let t = Instant::now();
    go(2, "phi_oracle_table", phi_oracle_table(), t);
    let t = Instant::now();
    go(3, "tiling_comb", tiling_comb_property(), t);
    let t = Instant::now();
    go(4, "snr_identities", snr_identities(), t);
    let t = Instant::now();
    go(5, "loudness_anchor", loudness_anchor(), t);
    let t = Instant::now();
    go(6, "preprocessing", preprocessing_contract(&dir), t);

    let t = Instant::now();
    match run_pipeline_a(&dir) {
        Ok(arts) => {
            go(7, "desk_scale_pipeline", desk_scale_pipeline(&arts), t);
            let t8 = Instant::now();
            go(8, "length_robustness", length_robustness(&arts), t8);
            let t9 = Instant::now();
            go(9, "similarity_ordering", similarity_ordering(&arts), t9);
            let t10 = Instant::now();
            go(
                10,
                "determinism",
                determinism(&dir, &dir.join("runA/report/report.json")),
                t10,
            );
        }
        Err(e) => {
            let msg = format!("pipeline run failed: {e}");
            go(7, "desk_scale_pipeline", Err(msg.clone()), t);
            go(8, "length_robustness", Err("no pipeline artifacts".into()), t);
            go(9, "similarity_ordering", Err("no pipeline artifacts".into()), t);
            go(10, "determinism", Err("no pipeline artifacts".into()), t);
        }
    }

    let failures: Vec<&str> = outcomes
        .iter()
        .filter(|o| o.failed)
        .map(|o| o.line.as_str())
        .collect();
    assert!(
        failures.is_empty(),
        "{} acceptance criteria failed:\n{}",
        failures.len(),
        failures.join("\n")
    );
}
