//! Pure signal transforms: repeat padding, patch tiling, SNR, forward DFT.

use super::{AudioClip, AudioError};

/// Extends a clip to `target_len` by cyclic repetition, never by silence.
/// A clip already at the target is returned unchanged.
pub fn repeat_pad(clip: &AudioClip, target_len: usize) -> Result<AudioClip, AudioError> {
    if clip.is_empty() {
        return Err(AudioError::EmptyClip);
    }
    if target_len < clip.len() {
        return Err(AudioError::PadTargetTooShort {
            target: target_len,
            len: clip.len(),
        });
    }
    if target_len == clip.len() {
        return Ok(clip.clone());
    }
    let mut out = clip.clone();
    out.samples = tile_patch(&clip.samples, target_len);
    out.padded = true;
    Ok(out)
}

/// Keeps the first `target_len` samples.
pub fn truncate(clip: &AudioClip, target_len: usize) -> Result<AudioClip, AudioError> {
    if target_len > clip.len() {
        return Err(AudioError::TruncateTargetTooLong {
            target: target_len,
            len: clip.len(),
        });
    }
    let mut out = clip.clone();
    out.samples.truncate(target_len);
    Ok(out)
}

/// Cyclically repeats a patch of length `l` out to `n` samples, truncating
/// the final copy: `out[i] = patch[i mod l]`.
pub fn tile_patch(patch: &[f64], n: usize) -> Vec<f64> {
    assert!(!patch.is_empty(), "patch must be nonempty");
    assert!(n >= 1, "target length must be positive");
    let l = patch.len();
    let mut out = Vec::with_capacity(n);
    while out.len() + l <= n {
        out.extend_from_slice(patch);
    }
    out.extend_from_slice(&patch[..n - out.len()]);
    out
}

pub(crate) fn l2_norm(v: &[f64]) -> f64 {
    crate::gradcore::deterministic_dot(v, v).sqrt()
}

/// Signal-to-perturbation ratio `20 log10(|reference| / |perturbation|)` in dB.
/// A zero perturbation reads +inf; a zero reference is an error because the
/// ratio would not say anything about audibility.
pub fn snr_db(reference: &[f64], perturbation: &[f64]) -> Result<f64, AudioError> {
    if reference.len() != perturbation.len() {
        return Err(AudioError::LengthMismatch(
            reference.len(),
            perturbation.len(),
        ));
    }
    let nr = l2_norm(reference);
    if nr == 0.0 {
        return Err(AudioError::ZeroReference);
    }
    let np = l2_norm(perturbation);
    if np == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(20.0 * (nr / np).log10())
}

/// Magnitudes of DFT bins 0..=n/2, by direct summation. Forward only; this
/// never touches the autodiff tape.
pub fn dft_magnitudes(signal: &[f64]) -> Vec<f64> {
    let n = signal.len();
    assert!(n >= 2, "DFT needs at least two samples");
    let mut out = Vec::with_capacity(n / 2 + 1);
    for k in 0..=n / 2 {
        let mut re = 0.0;
        let mut im = 0.0;
        for (t, &x) in signal.iter().enumerate() {
            let angle = -2.0 * std::f64::consts::PI * (k * t) as f64 / n as f64;
            re += x * angle.cos();
            im += x * angle.sin();
        }
        out.push(re.hypot(im));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::SAMPLE_RATE;

    fn clip(samples: Vec<f64>) -> AudioClip {
        AudioClip::new(samples, SAMPLE_RATE)
    }

    #[test]
    fn repeat_pad_cycles_content() {
        let c = repeat_pad(&clip(vec![1.0, 2.0, 3.0]), 7).unwrap();
        assert_eq!(c.samples, vec![1.0, 2.0, 3.0, 1.0, 2.0, 3.0, 1.0]);
        assert!(c.padded);
    }

    #[test]
    fn repeat_pad_at_target_is_identity() {
        let c = repeat_pad(&clip(vec![1.0, 2.0]), 2).unwrap();
        assert_eq!(c.samples, vec![1.0, 2.0]);
        assert!(!c.padded);
    }

    #[test]
    fn twenty_seconds_is_320k_samples() {
        let c = repeat_pad(&clip(vec![0.1; 16000]), 20 * SAMPLE_RATE as usize).unwrap();
        assert_eq!(c.len(), 320000);
    }

    #[test]
    fn repeat_pad_guards() {
        assert!(matches!(
            repeat_pad(&clip(vec![]), 4),
            Err(AudioError::EmptyClip)
        ));
        assert!(matches!(
            repeat_pad(&clip(vec![0.0; 5]), 4),
            Err(AudioError::PadTargetTooShort { target: 4, len: 5 })
        ));
    }

    #[test]
    fn pad_then_truncate_is_identity() {
        let orig = clip((0..50).map(|i| (i as f64 / 25.0).sin()).collect());
        let padded = repeat_pad(&orig, 173).unwrap();
        let back = truncate(&padded, orig.len()).unwrap();
        assert_eq!(back.samples, orig.samples);
    }

    #[test]
    fn truncate_rejects_growth() {
        assert!(matches!(
            truncate(&clip(vec![0.0; 3]), 5),
            Err(AudioError::TruncateTargetTooLong { target: 5, len: 3 })
        ));
    }

    #[test]
    fn tile_patch_examples() {
        assert_eq!(tile_patch(&[1.0, 2.0], 5), vec![1.0, 2.0, 1.0, 2.0, 1.0]);
        assert_eq!(tile_patch(&[1.0, 2.0, 3.0], 3), vec![1.0, 2.0, 3.0]);
        assert_eq!(tile_patch(&[0.5; 3200], 320000).len(), 320000);
    }

    #[test]
    fn snr_examples() {
        // |x| = 1, |d| = 0.1 -> 20 dB
        let x = vec![1.0, 0.0, 0.0];
        let d = vec![0.1, 0.0, 0.0];
        assert!((snr_db(&x, &d).unwrap() - 20.0).abs() < 1e-12);
        assert_eq!(snr_db(&x, &x).unwrap(), 0.0);
        assert_eq!(snr_db(&x, &[0.0; 3]).unwrap(), f64::INFINITY);
        assert!(matches!(
            snr_db(&[0.0; 3], &d),
            Err(AudioError::ZeroReference)
        ));
        assert!(matches!(
            snr_db(&x, &[0.1; 2]),
            Err(AudioError::LengthMismatch(3, 2))
        ));
    }

    #[test]
    fn snr_scaling_law() {
        let x: Vec<f64> = (0..64).map(|i| ((i * 13) % 17) as f64 / 17.0 - 0.3).collect();
        let d: Vec<f64> = (0..64).map(|i| ((i * 7) % 23) as f64 / 230.0).collect();
        let alpha = 3.7;
        let da: Vec<f64> = d.iter().map(|v| v * alpha).collect();
        let lhs = snr_db(&x, &da).unwrap();
        let rhs = snr_db(&x, &d).unwrap() - 20.0 * alpha.log10();
        assert!((lhs - rhs).abs() < 1e-9, "{lhs} vs {rhs}");
    }

    #[test]
    fn dft_constant_hits_bin_zero() {
        let mags = dft_magnitudes(&[0.7; 16]);
        assert!((mags[0] - 0.7 * 16.0).abs() < 1e-9);
        for m in &mags[1..] {
            assert!(*m < 1e-9);
        }
    }

    #[test]
    fn dft_pure_cosine_hits_single_bin() {
        let n = 32;
        let sig: Vec<f64> = (0..n)
            .map(|t| (2.0 * std::f64::consts::PI * 3.0 * t as f64 / n as f64).cos())
            .collect();
        let mags = dft_magnitudes(&sig);
        for (k, m) in mags.iter().enumerate() {
            if k == 3 {
                assert!((m - n as f64 / 2.0).abs() < 1e-9);
            } else {
                assert!(*m < 1e-9, "bin {k} = {m}");
            }
        }
    }

    #[test]
    fn tiled_patch_spectrum_is_a_comb() {
        // l = 8 into n = 32: energy may appear only at multiples of n/l = 4.
        let patch: Vec<f64> = (0..8).map(|i| ((i * 11) % 13) as f64 / 13.0 - 0.4).collect();
        let tiled = tile_patch(&patch, 32);
        let mags = dft_magnitudes(&tiled);
        let total: f64 = mags.iter().map(|m| m * m).sum();
        let off_comb: f64 = mags
            .iter()
            .enumerate()
            .filter(|(k, _)| k % 4 != 0)
            .map(|(_, m)| m * m)
            .sum();
        assert!(off_comb / total < 1e-10, "off-comb fraction {}", off_comb / total);
    }
}
