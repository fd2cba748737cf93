//! Minimal RIFF/WAVE reader and writer for 16-bit PCM mono at 16 kHz.
//! Any other layout is rejected rather than converted.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use super::{AudioClip, AudioError, SAMPLE_RATE};

/// Integer samples map to reals as `s / 32768`.
const SCALE: f64 = 32768.0;

pub fn read_wav(path: &Path) -> Result<AudioClip, AudioError> {
    let bytes = fs::read(path)?;
    let clip = decode(&bytes)?;
    Ok(AudioClip {
        source: Some(path.to_path_buf()),
        ..clip
    })
}

fn decode(bytes: &[u8]) -> Result<AudioClip, AudioError> {
    let bad = |msg: &str| AudioError::MalformedWav(msg.to_string());
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(bad("missing RIFF/WAVE header"));
    }
    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    let mut data: Option<&[u8]> = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let body_end = pos + 8 + size;
        if body_end > bytes.len() {
            return Err(bad("chunk extends past end of file"));
        }
        let body = &bytes[pos + 8..body_end];
        match id {
            b"fmt " => {
                if body.len() < 16 {
                    return Err(bad("fmt chunk too short"));
                }
                let format = u16::from_le_bytes(body[0..2].try_into().unwrap());
                let channels = u16::from_le_bytes(body[2..4].try_into().unwrap());
                let rate = u32::from_le_bytes(body[4..8].try_into().unwrap());
                let bits = u16::from_le_bytes(body[14..16].try_into().unwrap());
                fmt = Some((format, channels, rate, bits));
            }
            b"data" => data = Some(body),
            _ => {}
        }
        // Chunk bodies are padded to even length.
        pos = body_end + (size & 1);
    }
    let (format, channels, rate, bits) = fmt.ok_or_else(|| bad("no fmt chunk"))?;
    if format != 1 {
        return Err(AudioError::NotPcm(format));
    }
    if channels != 1 {
        return Err(AudioError::NotMono(channels));
    }
    if bits != 16 {
        return Err(AudioError::WrongBitDepth(bits));
    }
    if rate != SAMPLE_RATE {
        return Err(AudioError::WrongSampleRate {
            expected: SAMPLE_RATE,
            got: rate,
        });
    }
    let data = data.ok_or_else(|| bad("no data chunk"))?;
    if data.len() % 2 != 0 {
        return Err(bad("data chunk has odd byte length"));
    }
    let samples = data
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / SCALE)
        .collect();
    Ok(AudioClip::new(samples, rate))
}

pub fn write_wav(clip: &AudioClip, path: &Path) -> Result<(), AudioError> {
    if clip.sample_rate != SAMPLE_RATE {
        return Err(AudioError::WrongSampleRate {
            expected: SAMPLE_RATE,
            got: clip.sample_rate,
        });
    }
    let mut out = Vec::with_capacity(44 + clip.len() * 2);
    let data_len = (clip.len() * 2) as u32;
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&SAMPLE_RATE.to_le_bytes());
    out.extend_from_slice(&(SAMPLE_RATE * 2).to_le_bytes()); // byte rate
    out.extend_from_slice(&2u16.to_le_bytes()); // block align
    out.extend_from_slice(&16u16.to_le_bytes()); // bits per sample
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in &clip.samples {
        let q = (s * SCALE).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    let mut file = fs::File::create(path)?;
    file.write_all(&out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn round_trip(samples: Vec<f64>) -> Vec<f64> {
        let dir = tempdir().unwrap();
        let path = dir.path().join("t.wav");
        write_wav(&AudioClip::new(samples, SAMPLE_RATE), &path).unwrap();
        read_wav(&path).unwrap().samples
    }

    #[test]
    fn zero_round_trips_exactly() {
        assert_eq!(round_trip(vec![0.0]), vec![0.0]);
    }

    #[test]
    fn half_amplitude_is_exact() {
        // 0.5 * 32768 = 16384 is representable, so the trip is lossless.
        assert_eq!(round_trip(vec![0.5, -0.5]), vec![0.5, -0.5]);
    }

    #[test]
    fn round_trip_error_bounded_by_one_lsb() {
        let samples: Vec<f64> = (0..1000).map(|i| ((i * 37) % 200) as f64 / 100.0 - 1.0).collect();
        let back = round_trip(samples.clone());
        for (a, b) in samples.iter().zip(&back) {
            assert!((a - b).abs() <= 1.0 / 32768.0, "{a} vs {b}");
        }
    }

    #[test]
    fn full_scale_positive_clamps_to_max_int() {
        let back = round_trip(vec![1.0, -1.0]);
        assert!((back[0] - 32767.0 / 32768.0).abs() < 1e-12);
        assert_eq!(back[1], -1.0);
    }

    fn patch_header(mut bytes: Vec<u8>, offset: usize, value: &[u8]) -> Vec<u8> {
        bytes[offset..offset + value.len()].copy_from_slice(value);
        bytes
    }

    fn encoded(samples: &[f64]) -> Vec<u8> {
        let dir = tempdir().unwrap();
        let path = dir.path().join("t.wav");
        write_wav(&AudioClip::new(samples.to_vec(), SAMPLE_RATE), &path).unwrap();
        std::fs::read(&path).unwrap()
    }

    fn decode_bytes(bytes: &[u8]) -> Result<AudioClip, AudioError> {
        let dir = tempdir().unwrap();
        let path = dir.path().join("t.wav");
        std::fs::write(&path, bytes).unwrap();
        read_wav(&path)
    }

    #[test]
    fn stereo_rejected() {
        // Channel count lives at byte 22 of the canonical header.
        let bytes = patch_header(encoded(&[0.0, 0.0]), 22, &2u16.to_le_bytes());
        assert!(matches!(decode_bytes(&bytes), Err(AudioError::NotMono(2))));
    }

    #[test]
    fn wrong_rate_rejected() {
        let bytes = patch_header(encoded(&[0.0]), 24, &44100u32.to_le_bytes());
        assert!(matches!(
            decode_bytes(&bytes),
            Err(AudioError::WrongSampleRate { got: 44100, .. })
        ));
    }

    #[test]
    fn wrong_depth_rejected() {
        let bytes = patch_header(encoded(&[0.0]), 34, &8u16.to_le_bytes());
        assert!(matches!(
            decode_bytes(&bytes),
            Err(AudioError::WrongBitDepth(8))
        ));
    }

    #[test]
    fn float_format_rejected() {
        let bytes = patch_header(encoded(&[0.0]), 20, &3u16.to_le_bytes());
        assert!(matches!(decode_bytes(&bytes), Err(AudioError::NotPcm(3))));
    }

    #[test]
    fn truncated_file_rejected() {
        let mut bytes = encoded(&[0.1, 0.2, 0.3]);
        bytes.truncate(bytes.len() - 2);
        assert!(matches!(
            decode_bytes(&bytes),
            Err(AudioError::MalformedWav(_))
        ));
    }

    #[test]
    fn unknown_chunks_are_skipped() {
        // Insert a LIST chunk between fmt and data.
        let bytes = encoded(&[0.25]);
        let mut with_list = bytes[..36].to_vec();
        with_list.extend_from_slice(b"LIST");
        with_list.extend_from_slice(&4u32.to_le_bytes());
        with_list.extend_from_slice(b"INFO");
        with_list.extend_from_slice(&bytes[36..]);
        let riff_size = (with_list.len() - 8) as u32;
        let with_list = patch_header(with_list, 4, &riff_size.to_le_bytes());
        assert_eq!(decode_bytes(&with_list).unwrap().samples, vec![0.25]);
    }
}
