//! Patch artifacts: a small versioned binary for bit-exact round-trips and a
//! WAV export for listening.

use std::fs;
use std::path::Path;

use super::{AttackError, Patch};
use crate::audio::{write_wav, AudioClip};

const MAGIC: &[u8; 8] = b"UAPFPTCH";
const VERSION: u32 = 1;

/// The exact patch file byte image; also used for provenance hashing.
pub fn patch_to_bytes(patch: &Patch) -> Vec<u8> {
    let mut out = Vec::with_capacity(32 + 8 * patch.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&patch.sample_rate().to_le_bytes());
    out.extend_from_slice(&patch.epsilon().to_le_bytes());
    out.extend_from_slice(&(patch.len() as u64).to_le_bytes());
    for v in patch.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn save_patch(patch: &Patch, path: &Path) -> Result<(), AttackError> {
    fs::write(path, patch_to_bytes(patch))?;
    Ok(())
}

pub fn load_patch(path: &Path) -> Result<Patch, AttackError> {
    let bytes = fs::read(path)?;
    if bytes.len() < 8 || &bytes[..8] != MAGIC {
        return Err(AttackError::NotAPatchFile);
    }
    if bytes.len() < 32 {
        return Err(AttackError::TruncatedPatchFile);
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(AttackError::UnsupportedPatchVersion(version));
    }
    let sample_rate = u32::from_le_bytes(bytes[12..16].try_into().unwrap());
    let epsilon = f64::from_le_bytes(bytes[16..24].try_into().unwrap());
    let len = u64::from_le_bytes(bytes[24..32].try_into().unwrap()) as usize;
    if bytes.len() != 32 + 8 * len {
        return Err(AttackError::TruncatedPatchFile);
    }
    if sample_rate != crate::audio::SAMPLE_RATE {
        return Err(AttackError::BadConfig(format!(
            "patch sample rate {sample_rate} is not supported"
        )));
    }
    let values = bytes[32..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Patch::from_values(values, epsilon)
}

/// Writes the patch as a mono PCM16 WAV at its native scale, so an
/// epsilon-bounded patch stays within quantization bound round(eps * 32768).
pub fn export_patch_wav(patch: &Patch, path: &Path) -> Result<(), AttackError> {
    let clip = AudioClip::new(patch.values().to_vec(), patch.sample_rate());
    write_wav(&clip, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::read_wav;
    use tempfile::tempdir;

    fn demo_patch() -> Patch {
        let values: Vec<f64> = (0..64).map(|i| 0.01 * ((i as f64) * 0.37).sin()).collect();
        Patch::from_values(values, 0.01).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("p.bin");
        let p = demo_patch();
        save_patch(&p, &path).unwrap();
        let back = load_patch(&path).unwrap();
        assert_eq!(p.values(), back.values());
        assert_eq!(p.epsilon(), back.epsilon());
    }

    #[test]
    fn corrupt_and_truncated_files_are_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("p.bin");
        save_patch(&demo_patch(), &path).unwrap();
        let good = fs::read(&path).unwrap();

        let mut bad_magic = good.clone();
        bad_magic[0] = b'x';
        fs::write(&path, &bad_magic).unwrap();
        assert!(matches!(load_patch(&path), Err(AttackError::NotAPatchFile)));

        let mut bad_version = good.clone();
        bad_version[8..12].copy_from_slice(&9u32.to_le_bytes());
        fs::write(&path, &bad_version).unwrap();
        assert!(matches!(
            load_patch(&path),
            Err(AttackError::UnsupportedPatchVersion(9))
        ));

        fs::write(&path, &good[..good.len() - 5]).unwrap();
        assert!(matches!(
            load_patch(&path),
            Err(AttackError::TruncatedPatchFile)
        ));

        let mut trailing = good.clone();
        trailing.push(0);
        fs::write(&path, &trailing).unwrap();
        assert!(matches!(
            load_patch(&path),
            Err(AttackError::TruncatedPatchFile)
        ));
    }

    #[test]
    fn out_of_bound_values_in_file_are_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("p.bin");
        save_patch(&demo_patch(), &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        let hot = 0.5f64.to_le_bytes();
        bytes[32..40].copy_from_slice(&hot);
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_patch(&path),
            Err(AttackError::PatchBoundViolated { index: 0, .. })
        ));
    }

    #[test]
    fn wav_export_of_bounded_patch_stays_within_328_counts() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("p.wav");
        export_patch_wav(&demo_patch(), &path).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back.len(), 64);
        for &s in &back.samples {
            let counts = (s * 32768.0).round().abs();
            assert!(counts <= 328.0, "quantized magnitude {counts}");
        }
    }
}
