//! Fast invariant suite behind the `selftest` subcommand: a handful of
//! named checks over the numeric core, each with a hard tolerance. Output
//! text is a pure function of the build, so reruns match byte for byte.

use rand::Rng;
use rand_chacha::{rand_core::SeedableRng, ChaCha8Rng};

use uapforge_core::audio::{
    dft_magnitudes, measure_loudness, normalize_loudness, snr_db, tile_patch, AudioClip,
    SAMPLE_RATE,
};
use uapforge_core::gradcore::{finite_diff_check, GradError, Tape, Tensor};
use uapforge_core::uaptrain::phi;

pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, outcome: Result<String, String>) -> CheckResult {
    match outcome {
        Ok(detail) => CheckResult {
            name,
            passed: true,
            detail,
        },
        Err(detail) => CheckResult {
            name,
            passed: false,
            detail,
        },
    }
}

/// Differentiates a small composite of the ops the attack objective uses
/// and compares against central differences on a few seeds.
fn gradient_ops() -> Result<String, String> {
    let graph = |_tape: &Tape, p: &Tensor| -> Result<Tensor, GradError> {
        let a = p.abs().mul(&p.scale(0.3).exp())?;
        let b = a.add(&p.tanh())?;
        Ok(b.mean_all())
    };
    let mut worst = 0.0f64;
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x0: Vec<f64> = (0..24).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let report = finite_diff_check(&x0, 1e-4, graph).map_err(|e| e.to_string())?;
        worst = worst.max(report.max_rel_err);
        if !report.pass {
            return Err(format!(
                "seed {seed}: max relative error {:.3e} over 1e-4",
                report.max_rel_err
            ));
        }
    }
    Ok(format!("max relative error {worst:.3e}"))
}

/// The neighbor-pair penalty against an independently written piecewise
/// oracle, on fixed anchor points plus a random scan.
fn phi_oracle() -> Result<String, String> {
    fn oracle(x: f64, y: f64) -> f64 {
        let (ax, ay) = (x.abs(), y.abs());
        if ay > ax {
            (ay - ax).exp() - 1.0
        } else if x != 0.0 && y != 0.0 && (x < 0.0) != (y < 0.0) {
            ay.exp() - 1.0
        } else {
            0.0
        }
    }
    let anchors = [
        (0.3, 0.0),
        (0.0, 0.3),
        (-0.1, 0.1),
        (0.1, 0.2),
        (0.2, 0.2),
        (-0.2, -0.3),
    ];
    for &(x, y) in &anchors {
        let (got, want) = (phi(x, y), oracle(x, y));
        if (got - want).abs() > 1e-12 {
            return Err(format!("phi({x}, {y}) = {got}, oracle says {want}"));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x9e11);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let x: f64 = rng.gen_range(-0.02..0.02);
        let y: f64 = rng.gen_range(-0.02..0.02);
        let d = (phi(x, y) - oracle(x, y)).abs();
        worst = worst.max(d);
        if d > 1e-12 {
            return Err(format!("phi({x}, {y}) off by {d:.3e}"));
        }
    }
    Ok(format!("worst deviation {worst:.3e}"))
}

/// An l-periodic tiling must put all DFT energy on multiples of n/l.
fn tiling_comb() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xc0b1);
    let mut worst = 0.0f64;
    for &l in &[4usize, 8, 16] {
        for _ in 0..10 {
            let patch: Vec<f64> = (0..l).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let n = 4 * l;
            let tiled = tile_patch(&patch, n);
            let mags = dft_magnitudes(&tiled);
            let total: f64 = mags.iter().map(|m| m * m).sum();
            let off: f64 = mags
                .iter()
                .enumerate()
                .filter(|(k, _)| k % (n / l) != 0)
                .map(|(_, m)| m * m)
                .sum();
            let ratio = if total > 0.0 { off / total } else { 0.0 };
            worst = worst.max(ratio);
            if ratio >= 1e-10 {
                return Err(format!(
                    "l={l}: off-comb energy fraction {ratio:.3e} over 1e-10"
                ));
            }
        }
    }
    Ok(format!("worst off-comb fraction {worst:.3e}"))
}

/// Scaling the perturbation by a shifts SNR by exactly -20 log10 a, and an
/// equal-norm perturbation reads 0 dB.
fn snr_identities() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5412);
    let x: Vec<f64> = (0..512).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let d: Vec<f64> = (0..512).map(|_| rng.gen_range(-0.01..0.01)).collect();
    let base = snr_db(&x, &d).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for &alpha in &[0.5f64, 2.0, 10.0] {
        let scaled: Vec<f64> = d.iter().map(|v| v * alpha).collect();
        let got = snr_db(&x, &scaled).map_err(|e| e.to_string())?;
        let err = (got - (base - 20.0 * alpha.log10())).abs();
        worst = worst.max(err);
        if err > 1e-9 {
            return Err(format!("scaling law off by {err:.3e} dB at alpha={alpha}"));
        }
    }
    let equal = snr_db(&x, &x).map_err(|e| e.to_string())?;
    if equal != 0.0 {
        return Err(format!("equal-norm SNR is {equal}, want exactly 0"));
    }
    Ok(format!("worst scaling error {worst:.3e} dB"))
}

/// A 997 Hz sine at a known RMS level must read within 0.5 LU of that
/// level, and normalization must hit its target and be idempotent.
fn loudness_anchor() -> Result<String, String> {
    let n = 3 * SAMPLE_RATE as usize;
    let w = 2.0 * std::f64::consts::PI * 997.0 / SAMPLE_RATE as f64;
    // RMS of a sine is amplitude / sqrt(2); -18 dBFS RMS.
    let amp = 10.0f64.powf(-18.0 / 20.0) * 2.0f64.sqrt();
    let clip = AudioClip::new(
        (0..n).map(|t| amp * (w * t as f64).sin()).collect(),
        SAMPLE_RATE,
    );
    let stats = measure_loudness(&clip).map_err(|e| e.to_string())?;
    let anchor_err = (stats.integrated_loudness - (-18.0)).abs();
    if anchor_err > 0.5 {
        return Err(format!(
            "997 Hz anchor reads {:.3} LUFS, want -18 +/- 0.5",
            stats.integrated_loudness
        ));
    }
    let (normed, _) = normalize_loudness(&clip, -23.0).map_err(|e| e.to_string())?;
    let after = measure_loudness(&normed).map_err(|e| e.to_string())?;
    if (after.integrated_loudness - (-23.0)).abs() > 0.5 {
        return Err(format!(
            "normalize landed at {:.3} LUFS, want -23 +/- 0.5",
            after.integrated_loudness
        ));
    }
    let (again, _) = normalize_loudness(&normed, -23.0).map_err(|e| e.to_string())?;
    let twice = measure_loudness(&again).map_err(|e| e.to_string())?;
    if (twice.integrated_loudness - after.integrated_loudness).abs() > 0.5 {
        return Err("re-normalization moved the loudness".to_string());
    }
    Ok(format!("anchor error {anchor_err:.3} LU"))
}

pub fn run_all() -> Vec<CheckResult> {
    vec![
        check("gradient_ops", gradient_ops()),
        check("phi_oracle", phi_oracle()),
        check("tiling_comb", tiling_comb()),
        check("snr_identities", snr_identities()),
        check("loudness_anchor", loudness_anchor()),
    ]
}

/// Renders results as stable text: one line per check, then a verdict.
pub fn render(results: &[CheckResult]) -> String {
    let mut s = String::new();
    for r in results {
        let status = if r.passed { "ok  " } else { "FAIL" };
        s.push_str(&format!("{status} {:<16} {}\n", r.name, r.detail));
    }
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.name).collect();
    if failed.is_empty() {
        s.push_str(&format!("selftest: all {} checks passed\n", results.len()));
    } else {
        s.push_str(&format!("selftest: FAILED: {}\n", failed.join(", ")));
    }
    s
}
