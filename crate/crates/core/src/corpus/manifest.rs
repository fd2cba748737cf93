//! Manifest persistence: one JSON header line, then one tab-separated line
//! per clip. Text, ordered, and diffable.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ClipKind, CorpusError, CorpusManifest, ManifestEntry, ProcState, Split};

const FORMAT_NAME: &str = "uapforge-manifest";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    sample_rate: u32,
}

/// Canonical text image of a manifest, also the basis of provenance hashes.
pub fn manifest_to_string(manifest: &CorpusManifest) -> Result<String, CorpusError> {
    manifest.validate()?;
    let header = Header {
        format: FORMAT_NAME.to_string(),
        version: VERSION,
        sample_rate: manifest.sample_rate,
    };
    let mut out = serde_json::to_string(&header).expect("header serializes");
    out.push('\n');
    for e in &manifest.entries {
        let kind = match e.kind {
            ClipKind::Wav => "wav",
            ClipKind::Synth => "synth",
        };
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{:.6}\t{}\n",
            e.split.as_str(),
            e.speaker_id,
            kind,
            e.locator,
            e.duration_s,
            e.proc.as_str(),
        ));
    }
    Ok(out)
}

pub fn write_manifest(manifest: &CorpusManifest, path: &Path) -> Result<(), CorpusError> {
    fs::write(path, manifest_to_string(manifest)?)?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<CorpusManifest, CorpusError> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header_line) = lines.next().ok_or(CorpusError::ManifestParse {
        line: 1,
        detail: "empty file".to_string(),
    })?;
    let header: Header =
        serde_json::from_str(header_line).map_err(|e| CorpusError::ManifestParse {
            line: 1,
            detail: format!("bad header: {e}"),
        })?;
    if header.format != FORMAT_NAME {
        return Err(CorpusError::ManifestParse {
            line: 1,
            detail: format!("unknown format {:?}", header.format),
        });
    }
    if header.version != VERSION {
        return Err(CorpusError::ManifestVersion(header.version));
    }
    let mut entries = Vec::new();
    for (idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        let err = |detail: String| CorpusError::ManifestParse {
            line: idx + 1,
            detail,
        };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 6 {
            return Err(err(format!("expected 6 fields, got {}", fields.len())));
        }
        let split =
            Split::parse(fields[0]).ok_or_else(|| err(format!("bad split {:?}", fields[0])))?;
        let kind = match fields[2] {
            "wav" => ClipKind::Wav,
            "synth" => ClipKind::Synth,
            other => return Err(err(format!("bad kind {other:?}"))),
        };
        let duration_s: f64 = fields[4]
            .parse()
            .map_err(|e| err(format!("bad duration: {e}")))?;
        let proc =
            ProcState::parse(fields[5]).ok_or_else(|| err(format!("bad proc {:?}", fields[5])))?;
        entries.push(ManifestEntry {
            split,
            speaker_id: fields[1].to_string(),
            kind,
            locator: fields[3].to_string(),
            duration_s,
            proc,
        });
    }
    let manifest = CorpusManifest {
        sample_rate: header.sample_rate,
        entries,
    };
    manifest.validate()?;
    Ok(manifest)
}
