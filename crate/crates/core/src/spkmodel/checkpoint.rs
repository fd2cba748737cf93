//! Model checkpoints: magic bytes, version, architecture, then flat
//! little-endian f64 parameter groups with explicit lengths.

use std::fs;
use std::path::Path;

use super::{ConvSpec, ModelConfig, ModelError, SpeakerModel};

const MAGIC: &[u8; 8] = b"UAPFSPKM";
/// Current version. Version 1 had the same layout and is still readable;
/// loading one produces a warning instead of an error.
const VERSION: u32 = 2;

/// The exact checkpoint byte image; also used for provenance hashing.
pub fn model_to_bytes(model: &SpeakerModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(model.cfg.conv.len() as u32).to_le_bytes());
    for c in &model.cfg.conv {
        for v in [c.out_ch, c.in_ch, c.kernel, c.stride] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
    }
    out.extend_from_slice(&(model.cfg.emb_dim as u32).to_le_bytes());
    out.extend_from_slice(&(model.cfg.n_classes as u32).to_le_bytes());
    for name in &model.class_names {
        let bytes = name.as_bytes();
        out.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
        out.extend_from_slice(bytes);
    }
    out.extend_from_slice(&(model.params.len() as u32).to_le_bytes());
    for group in &model.params {
        out.extend_from_slice(&(group.len() as u64).to_le_bytes());
        for v in group {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn save_model(model: &SpeakerModel, path: &Path) -> Result<(), ModelError> {
    fs::write(path, model_to_bytes(model))?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        if self.pos + n > self.bytes.len() {
            return Err(ModelError::TruncatedCheckpoint);
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Loads a checkpoint, returning the model plus any compatibility warnings.
pub fn load_model(path: &Path) -> Result<(SpeakerModel, Vec<String>), ModelError> {
    let bytes = fs::read(path)?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
    };
    if r.take(8)? != MAGIC {
        return Err(ModelError::NotACheckpoint);
    }
    let mut warnings = Vec::new();
    let version = r.u32()?;
    match version {
        VERSION => {}
        1 => warnings.push("checkpoint is version 1; layout is compatible, consider re-saving".to_string()),
        other => return Err(ModelError::UnsupportedVersion(other)),
    }
    let n_conv = r.u32()? as usize;
    if n_conv == 0 || n_conv > 64 {
        return Err(ModelError::ArchMismatch(format!("{n_conv} conv layers")));
    }
    let mut conv = Vec::with_capacity(n_conv);
    for _ in 0..n_conv {
        conv.push(ConvSpec {
            out_ch: r.u32()? as usize,
            in_ch: r.u32()? as usize,
            kernel: r.u32()? as usize,
            stride: r.u32()? as usize,
        });
    }
    let emb_dim = r.u32()? as usize;
    let n_classes = r.u32()? as usize;
    let mut class_names = Vec::with_capacity(n_classes);
    for _ in 0..n_classes {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| ModelError::ArchMismatch("class name is not UTF-8".to_string()))?;
        class_names.push(name.to_string());
    }
    let cfg = ModelConfig {
        conv,
        emb_dim,
        n_classes,
    };
    let expected_sizes = cfg.group_sizes();
    let n_groups = r.u32()? as usize;
    if n_groups != expected_sizes.len() {
        return Err(ModelError::ArchMismatch(format!(
            "{n_groups} parameter groups, architecture implies {}",
            expected_sizes.len()
        )));
    }
    let mut params = Vec::with_capacity(n_groups);
    for (gi, &expected) in expected_sizes.iter().enumerate() {
        let len = r.u64()? as usize;
        if len != expected {
            return Err(ModelError::ArchMismatch(format!(
                "group {gi} has {len} values, architecture implies {expected}"
            )));
        }
        let raw = r.take(len * 8)?;
        params.push(
            raw.chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        );
    }
    if r.pos != bytes.len() {
        return Err(ModelError::ArchMismatch("trailing bytes".to_string()));
    }
    Ok((
        SpeakerModel {
            cfg,
            params,
            class_names,
        },
        warnings,
    ))
}
