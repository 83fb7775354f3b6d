//! JSON-lines manifest persistence.
//!
//! Line 1 is a version header; every following line is one
//! `RecordingEntry`. Unknown fields on entries survive a round trip.

use super::{DatasetManifest, RecordingEntry};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

const FORMAT: &str = "leafkit-manifest";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
}

/// Writes entries sorted by id, so identical corpora produce byte-identical
/// manifests.
pub fn write_manifest(manifest: &DatasetManifest, path: &Path) -> Result<()> {
    manifest.validate()?;
    let mut sorted: Vec<&RecordingEntry> = manifest.entries.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));

    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    let header = Header { format: FORMAT.into(), version: VERSION };
    writeln!(file, "{}", serde_json::to_string(&header).expect("header serializes"))?;
    for e in sorted {
        let line = serde_json::to_string(e)
            .map_err(|e| Error::Data(format!("manifest entry serialization: {}", e)))?;
        writeln!(file, "{}", line)?;
    }
    file.flush()?;
    Ok(())
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let file = BufReader::new(std::fs::File::open(path)?);
    let mut lines = file.lines().enumerate();

    let (_, first) = lines
        .next()
        .ok_or_else(|| Error::Parse { line: 1, msg: "empty manifest".into() })?;
    let first = first?;
    let header: Header = serde_json::from_str(&first)
        .map_err(|e| Error::Parse { line: 1, msg: format!("bad header: {}", e) })?;
    if header.format != FORMAT {
        return Err(Error::Parse { line: 1, msg: format!("unknown format {:?}", header.format) });
    }
    if header.version != VERSION {
        return Err(Error::Parse {
            line: 1,
            msg: format!("unsupported manifest version {} (expected {})", header.version, VERSION),
        });
    }

    let mut entries = Vec::new();
    for (i, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: RecordingEntry = serde_json::from_str(&line)
            .map_err(|e| Error::Parse { line: i + 1, msg: e.to_string() })?;
        entries.push(entry);
    }
    let manifest = DatasetManifest { entries };
    manifest.validate()?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::super::{ChunkSpec, Split};
    use super::*;

    fn sample_manifest() -> DatasetManifest {
        DatasetManifest {
            entries: vec![
                RecordingEntry {
                    id: "b/2".into(),
                    label: "b".into(),
                    duration_s: 7.5,
                    source_path: "b/2.wav".into(),
                    split: Split::Train,
                    chunks: vec![
                        ChunkSpec { start_s: 0.0, wrap_s: 0.0, looped: false },
                        ChunkSpec { start_s: 1.25, wrap_s: 0.0, looped: false },
                    ],
                    sha256: "aa".into(),
                    offset_s: 0.0,
                    extra: Default::default(),
                },
                RecordingEntry {
                    id: "a/1".into(),
                    label: "a".into(),
                    duration_s: 3.0,
                    source_path: "a/1.wav".into(),
                    split: Split::Val,
                    chunks: vec![ChunkSpec { start_s: 0.0, wrap_s: 0.0, looped: true }],
                    sha256: "bb".into(),
                    offset_s: 2.5,
                    extra: Default::default(),
                },
            ],
        }
    }

    #[test]
    fn round_trip_is_structurally_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let m = sample_manifest();
        write_manifest(&m, &path).unwrap();
        let loaded = load_manifest(&path).unwrap();
        // Entries come back sorted by id.
        assert_eq!(loaded.entries.len(), 2);
        assert_eq!(loaded.entries[0].id, "a/1");
        assert_eq!(loaded.entries[1], m.entries[0]);
        assert_eq!(loaded.entries[0], m.entries[1]);
    }

    #[test]
    fn rewrite_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let (p1, p2) = (dir.path().join("1.jsonl"), dir.path().join("2.jsonl"));
        let m = sample_manifest();
        write_manifest(&m, &p1).unwrap();
        write_manifest(&load_manifest(&p1).unwrap(), &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn unknown_fields_survive() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let m = sample_manifest();
        write_manifest(&m, &path).unwrap();
        // Inject an extra field.
        let content = std::fs::read_to_string(&path).unwrap();
        let modified: Vec<String> = content
            .lines()
            .map(|l| {
                if l.contains("\"a/1\"") {
                    l.replacen('{', "{\"future_field\":42,", 1)
                } else {
                    l.to_string()
                }
            })
            .collect();
        std::fs::write(&path, modified.join("\n")).unwrap();

        let loaded = load_manifest(&path).unwrap();
        assert_eq!(loaded.entries[0].extra.get("future_field").unwrap(), 42);
        let path2 = dir.path().join("m2.jsonl");
        write_manifest(&loaded, &path2).unwrap();
        assert!(std::fs::read_to_string(&path2).unwrap().contains("future_field"));
    }

    #[test]
    fn truncated_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        write_manifest(&sample_manifest(), &path).unwrap();
        let mut content = std::fs::read_to_string(&path).unwrap();
        content.truncate(content.len() - 40);
        std::fs::write(&path, content).unwrap();
        match load_manifest(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn version_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        std::fs::write(&path, "{\"format\":\"leafkit-manifest\",\"version\":99}\n").unwrap();
        assert!(matches!(load_manifest(&path), Err(Error::Parse { line: 1, .. })));
    }
}
