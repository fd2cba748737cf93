//! Deterministic synthetic speakers: a jittered sawtooth source shaped by
//! three formant resonators, mixed with noise and a syllabic envelope.
//! Not speech, but separable by a small conv net, which is all the
//! downstream attack needs from a corpus.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::audio::{AudioClip, SAMPLE_RATE};
use crate::util::mix_seed;

use super::CorpusError;

#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerProfile {
    pub speaker_id: String,
    /// Fundamental in [80, 300] Hz.
    pub f0_hz: f64,
    /// Three resonator center frequencies, strictly increasing.
    pub formants_hz: [f64; 3],
    pub bandwidths_hz: [f64; 3],
    /// Relative slow wobble applied to f0.
    pub jitter: f64,
    /// White-noise fraction in [0, 0.3].
    pub noise_mix: f64,
    pub seed: u64,
}

/// Draws a speaker's vocal parameters from its seed. Speaker ranges overlap
/// deliberately: per-utterance drift (see `synthesize_samples`) is a sizable
/// fraction of the between-speaker spread, so identities stay learnable but
/// embedding clusters are not degenerate point masses. The formant draw
/// ranges stay disjoint even after drift, so the increasing-frequency
/// invariant holds by construction.
pub fn generate_speaker(seed: u64) -> SpeakerProfile {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x5eed_5eed));
    let f0_hz = rng.gen_range(133.0..198.0);
    let formants_hz = [
        rng.gen_range(380.0..460.0),
        rng.gen_range(1250.0..1580.0),
        rng.gen_range(2685.0..2915.0),
    ];
    let bandwidths_hz = [
        rng.gen_range(110.0..190.0),
        rng.gen_range(110.0..190.0),
        rng.gen_range(110.0..190.0),
    ];
    let jitter = rng.gen_range(0.015..0.035);
    let noise_mix = rng.gen_range(0.08..0.18);
    SpeakerProfile {
        speaker_id: format!("spk{seed:04}"),
        f0_hz,
        formants_hz,
        bandwidths_hz,
        jitter,
        noise_mix,
        seed,
    }
}

/// Two-pole resonator `y[n] = g x[n] + 2 r cos(w) y[n-1] - r^2 y[n-2]`
/// with `r = exp(-pi bw / fs)`.
struct Resonator {
    c1: f64,
    c2: f64,
    g: f64,
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn new(fc: f64, bw: f64, fs: f64) -> Self {
        let r = (-std::f64::consts::PI * bw / fs).exp();
        let w = 2.0 * std::f64::consts::PI * fc / fs;
        Resonator {
            c1: 2.0 * r * w.cos(),
            c2: -r * r,
            // Unity gain at the center frequency, roughly.
            g: (1.0 - r) * (1.0 - r),
            y1: 0.0,
            y2: 0.0,
        }
    }

    fn step(&mut self, x: f64) -> f64 {
        let y = self.g * x + self.c1 * self.y1 + self.c2 * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

pub fn synthesize_utterance(
    profile: &SpeakerProfile,
    duration_s: f64,
    utt_seed: u64,
) -> Result<AudioClip, CorpusError> {
    if !(1.0..=25.0).contains(&duration_s) {
        return Err(CorpusError::BadDuration(duration_s));
    }
    let n = (duration_s * SAMPLE_RATE as f64).round() as usize;
    Ok(synthesize_samples(profile, n, utt_seed))
}

/// Sample-count variant used when regenerating clips from manifest locators,
/// where the exact length must round-trip.
pub(crate) fn synthesize_samples(profile: &SpeakerProfile, n: usize, utt_seed: u64) -> AudioClip {
    let fs = SAMPLE_RATE as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(profile.seed, utt_seed));
    let wobble_hz: f64 = rng.gen_range(0.4..2.0);
    let wobble_phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let env_hz: f64 = rng.gen_range(2.0..5.0);
    let env_phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    // Utterance-level drift: pitch, vocal-tract scale, and breathiness move
    // between recordings of the same speaker. The factors keep instantaneous
    // f0 inside [80, 300] Hz and preserve formant ordering.
    let f0_scale: f64 = rng.gen_range(0.96..1.04);
    let tract_scale: f64 = rng.gen_range(0.975..1.025);
    let noise_wobble: f64 = rng.gen_range(-0.03..0.03);
    let f0_utt = profile.f0_hz * f0_scale;
    let noise_mix = (profile.noise_mix + noise_wobble).clamp(0.0, 0.3);

    let mut resonators: Vec<Resonator> = profile
        .formants_hz
        .iter()
        .zip(&profile.bandwidths_hz)
        .map(|(&fc, &bw)| Resonator::new(fc * tract_scale, bw, fs))
        .collect();

    let mut phase = 0.0f64;
    let mut samples = Vec::with_capacity(n);
    for t in 0..n {
        let ts = t as f64 / fs;
        let f_inst = f0_utt
            * (1.0 + profile.jitter * (std::f64::consts::TAU * wobble_hz * ts + wobble_phase).sin());
        phase += f_inst / fs;
        phase -= phase.floor();
        let saw = 2.0 * phase - 1.0;
        let noise: f64 = rng.gen_range(-1.0..1.0);
        let mut x = (1.0 - noise_mix) * saw + noise_mix * noise;
        for res in &mut resonators {
            x = res.step(x);
        }
        // Syllabic envelope with a 0.2 floor: loudness varies but the clip
        // never contains silence, so repeat padding cannot fake quiet gaps.
        let env = 0.2 + 0.8 * 0.5 * (1.0 + (std::f64::consts::TAU * env_hz * ts + env_phase).sin());
        samples.push(x * env);
    }
    let peak = samples.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    if peak > 0.0 {
        let k = 0.5 / peak;
        for s in &mut samples {
            *s *= k;
        }
    }
    let mut clip = AudioClip::new(samples, SAMPLE_RATE);
    clip.speaker_id = Some(profile.speaker_id.clone());
    clip
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_gives_identical_profile() {
        assert_eq!(generate_speaker(7), generate_speaker(7));
    }

    #[test]
    fn seeds_give_distinct_f0() {
        let profiles: Vec<SpeakerProfile> = (0..20).map(generate_speaker).collect();
        for i in 0..profiles.len() {
            for j in 0..i {
                assert_ne!(profiles[i].f0_hz, profiles[j].f0_hz, "seeds {i} and {j}");
            }
        }
    }

    #[test]
    fn profile_parameters_in_range() {
        for seed in 0..50 {
            let p = generate_speaker(seed);
            assert!((80.0..300.0).contains(&p.f0_hz));
            assert!(p.formants_hz[0] < p.formants_hz[1] && p.formants_hz[1] < p.formants_hz[2]);
            assert!((0.0..=0.3).contains(&p.noise_mix));
            for bw in p.bandwidths_hz {
                assert!((60.0..200.0).contains(&bw));
            }
        }
    }

    #[test]
    fn three_seconds_is_48000_samples() {
        let clip = synthesize_utterance(&generate_speaker(1), 3.0, 0).unwrap();
        assert_eq!(clip.len(), 48000);
    }

    #[test]
    fn utterance_is_bit_deterministic() {
        let p = generate_speaker(3);
        let a = synthesize_utterance(&p, 2.0, 9).unwrap();
        let b = synthesize_utterance(&p, 2.0, 9).unwrap();
        assert_eq!(a.samples, b.samples);
        let c = synthesize_utterance(&p, 2.0, 10).unwrap();
        assert_ne!(a.samples, c.samples);
    }

    #[test]
    fn utterance_peak_is_half() {
        let clip = synthesize_utterance(&generate_speaker(5), 2.0, 1).unwrap();
        let peak = clip.samples.iter().fold(0.0f64, |m, s| m.max(s.abs()));
        assert!((peak - 0.5).abs() < 1e-12);
    }

    #[test]
    fn no_silent_windows() {
        // 0.2 s windows must all carry energy (envelope floor, noise mix).
        let clip = synthesize_utterance(&generate_speaker(11), 4.0, 2).unwrap();
        for window in clip.samples.chunks(3200) {
            let peak = window.iter().fold(0.0f64, |m, s| m.max(s.abs()));
            assert!(peak > 1e-4, "near-silent window (peak {peak})");
        }
    }

    #[test]
    fn out_of_range_duration_rejected() {
        let p = generate_speaker(0);
        assert!(matches!(
            synthesize_utterance(&p, 0.5, 0),
            Err(CorpusError::BadDuration(_))
        ));
        assert!(matches!(
            synthesize_utterance(&p, 30.0, 0),
            Err(CorpusError::BadDuration(_))
        ));
    }
}
