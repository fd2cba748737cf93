//! Embedding-cosine distributions behind the anonymization claim: perturbed
//! clips should drift away from their speaker's enrollment vector while
//! remaining mutually similar, since every clip carries the same patch.

use crate::audio::AudioClip;
use crate::spkmodel::{EnrollmentSet, SpeakerModel};
use crate::uaptrain::Patch;
use crate::util::{configured_threads, parallel_map_ordered};

use super::{cos, perturb, EvalError, Histogram};

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityAnalysis {
    /// Clean clip vs own speaker's enrollment vector.
    pub orig_enroll: Histogram,
    /// Perturbed clip vs own speaker's enrollment vector.
    pub anon_enroll: Histogram,
    /// Distinct pairs of perturbed clips of the same speaker.
    pub anon_anon: Histogram,
}

impl SimilarityAnalysis {
    pub fn histograms(&self) -> [&Histogram; 3] {
        [&self.orig_enroll, &self.anon_enroll, &self.anon_anon]
    }
}

/// One evaluation clip reduced to embeddings: its speaker id, clean
/// embedding, and embedding after the tiled patch is added.
pub(crate) struct EmbeddedClip {
    pub speaker_id: String,
    pub clean: Vec<f64>,
    pub adv: Vec<f64>,
}

pub(crate) fn embed_clips(
    model: &SpeakerModel,
    labeled_clips: &[(String, AudioClip)],
    patch: &Patch,
) -> Result<Vec<EmbeddedClip>, EvalError> {
    if labeled_clips.is_empty() {
        return Err(EvalError::EmptyClipSet);
    }
    for (_, c) in labeled_clips {
        if c.padded {
            return Err(EvalError::PaddedEvalClip {
                locator: c
                    .source
                    .as_ref()
                    .map(|p| p.display().to_string())
                    .unwrap_or_else(|| "<in-memory clip>".to_string()),
            });
        }
    }
    let threads = configured_threads();
    let jobs: Vec<&(String, AudioClip)> = labeled_clips.iter().collect();
    let embedded = parallel_map_ordered(jobs, threads, |_, (spk, clip)| {
        let clean = model.embed(clip)?;
        let adv = model.embed(&perturb(clip, patch))?;
        Ok::<EmbeddedClip, EvalError>(EmbeddedClip {
            speaker_id: spk.clone(),
            clean,
            adv,
        })
    });
    embedded.into_iter().collect()
}

pub(crate) fn analyze_embedded(
    enrollment: &EnrollmentSet,
    embedded: &[EmbeddedClip],
) -> Result<SimilarityAnalysis, EvalError> {
    let mut orig_enroll = Vec::new();
    let mut anon_enroll = Vec::new();
    let mut per_speaker: Vec<(&str, Vec<&Vec<f64>>)> = Vec::new();
    for item in embedded {
        let spk = item.speaker_id.as_str();
        let enroll_vec = enrollment
            .vectors
            .iter()
            .find(|(id, _)| id == spk)
            .map(|(_, v)| v)
            .ok_or_else(|| EvalError::BadSpec(format!("speaker {spk} is not enrolled")))?;
        orig_enroll.push(cos(&item.clean, enroll_vec));
        anon_enroll.push(cos(&item.adv, enroll_vec));
        match per_speaker.iter_mut().find(|(id, _)| *id == spk) {
            Some((_, advs)) => advs.push(&item.adv),
            None => per_speaker.push((spk, vec![&item.adv])),
        }
    }
    let mut anon_anon = Vec::new();
    for (_, advs) in &per_speaker {
        for i in 0..advs.len() {
            for j in i + 1..advs.len() {
                anon_anon.push(cos(advs[i], advs[j]));
            }
        }
    }

    Ok(SimilarityAnalysis {
        orig_enroll: Histogram::collect("orig_enroll", &orig_enroll),
        anon_enroll: Histogram::collect("anon_enroll", &anon_enroll),
        anon_anon: Histogram::collect("anon_anon", &anon_anon),
    })
}

/// Computes the three cosine distributions over `(speaker, clip)` pairs.
/// Clips must carry their true speaker id and be enrolled.
pub fn similarity_analysis(
    model: &SpeakerModel,
    enrollment: &EnrollmentSet,
    labeled_clips: &[(String, AudioClip)],
    patch: &Patch,
) -> Result<SimilarityAnalysis, EvalError> {
    let embedded = embed_clips(model, labeled_clips, patch)?;
    analyze_embedded(enrollment, &embedded)
}

#[cfg(test)]
mod tests {
    use super::super::tests::tiny_model;
    use super::*;
    use crate::audio::SAMPLE_RATE;

    fn tone(freq: f64, n: usize) -> AudioClip {
        let w = 2.0 * std::f64::consts::PI * freq / SAMPLE_RATE as f64;
        AudioClip::new(
            (0..n).map(|t| 0.1 * (w * t as f64).sin()).collect(),
            SAMPLE_RATE,
        )
    }

    fn setup() -> (
        crate::spkmodel::SpeakerModel,
        EnrollmentSet,
        Vec<(String, AudioClip)>,
    ) {
        let model = tiny_model();
        let ea = tone(220.0, 8000);
        let eb = tone(900.0, 8000);
        let mut vectors = vec![
            ("a".to_string(), model.embed(&ea).unwrap()),
            ("b".to_string(), model.embed(&eb).unwrap()),
        ];
        vectors.sort_by(|x, y| x.0.cmp(&y.0));
        let enrollment = EnrollmentSet {
            enroll_count: 1,
            vectors,
        };
        let labeled = vec![
            ("a".to_string(), tone(230.0, 7000)),
            ("a".to_string(), tone(210.0, 9000)),
            ("a".to_string(), tone(205.0, 6000)),
            ("b".to_string(), tone(880.0, 7000)),
            ("b".to_string(), tone(920.0, 9000)),
        ];
        (model, enrollment, labeled)
    }

    #[test]
    fn zero_patch_gives_identical_clean_and_perturbed_histograms() {
        let (model, enrollment, labeled) = setup();
        let patch = Patch::zeros(160, 0.01).unwrap();
        let sim = similarity_analysis(&model, &enrollment, &labeled, &patch).unwrap();
        assert_eq!(sim.orig_enroll.counts, sim.anon_enroll.counts);
        assert_eq!(sim.orig_enroll.mean, sim.anon_enroll.mean);
    }

    #[test]
    fn pair_counts_follow_the_speaker_grouping() {
        let (model, enrollment, labeled) = setup();
        let patch = Patch::uniform(160, 0.01, 3).unwrap();
        let sim = similarity_analysis(&model, &enrollment, &labeled, &patch).unwrap();
        assert_eq!(sim.orig_enroll.total, 5);
        assert_eq!(sim.anon_enroll.total, 5);
        // 3 choose 2 for speaker a plus 2 choose 2 for speaker b.
        assert_eq!(sim.anon_anon.total, 3 + 1);
    }

    #[test]
    fn unenrolled_speaker_is_rejected() {
        let (model, enrollment, mut labeled) = setup();
        labeled.push(("ghost".to_string(), tone(500.0, 7000)));
        let patch = Patch::zeros(160, 0.01).unwrap();
        assert!(matches!(
            similarity_analysis(&model, &enrollment, &labeled, &patch),
            Err(EvalError::BadSpec(_))
        ));
    }

    #[test]
    fn padded_clips_are_rejected() {
        let (model, enrollment, mut labeled) = setup();
        labeled[0].1.padded = true;
        let patch = Patch::zeros(160, 0.01).unwrap();
        assert!(matches!(
            similarity_analysis(&model, &enrollment, &labeled, &patch),
            Err(EvalError::PaddedEvalClip { .. })
        ));
    }
}
