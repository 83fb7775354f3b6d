//! Corpus ingestion: scan `<root>/<label>/<file>.wav`, validate, convert,
//! and build manifest entries. Nonconforming files are collected into a
//! rejection report instead of failing the run.

use super::wav::read_wav;
use super::{DatasetManifest, RecordingEntry, Split};
use crate::dsp::{resample_to_44100, to_mono, SAMPLE_RATE};
use crate::error::{Error, Result};
use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, Default)]
pub struct IngestOptions {
    /// Keep only the last ten seconds of each recording (commentary
    /// trimming for collections with spoken intros). Off by default.
    pub trim_last_10s: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RejectReason {
    LowSampleRate(u32),
    DecodeError(String),
    NotWav,
    /// Identical audio payload filed under two or more labels; all copies
    /// are excluded.
    DuplicateCrossLabel,
    /// Identical audio payload repeated under one label; only the first
    /// (path order) is kept.
    DuplicateSameLabel,
}

impl RejectReason {
    pub fn code(&self) -> &'static str {
        match self {
            RejectReason::LowSampleRate(_) => "low_sample_rate",
            RejectReason::DecodeError(_) => "decode_error",
            RejectReason::NotWav => "not_wav",
            RejectReason::DuplicateCrossLabel => "duplicate_cross_label",
            RejectReason::DuplicateSameLabel => "duplicate_same_label",
        }
    }
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RejectReason::LowSampleRate(sr) => write!(f, "{} ({} Hz)", self.code(), sr),
            RejectReason::DecodeError(msg) => write!(f, "{} ({})", self.code(), msg),
            _ => write!(f, "{}", self.code()),
        }
    }
}

#[derive(Debug, Default)]
pub struct IngestReport {
    pub rejected: Vec<(PathBuf, RejectReason)>,
    pub warnings: Vec<String>,
}

/// One line per excluded file: `<path>\t<reason>`.
pub fn write_rejection_report(report: &IngestReport, path: &Path) -> Result<()> {
    let mut out = String::new();
    for (p, reason) in &report.rejected {
        out.push_str(&format!("{}\t{}\n", p.display(), reason));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Scans a `<root>/<species_label>/*.wav` tree.
///
/// Valid files are decoded, converted to mono 44.1 kHz (downsampling
/// higher rates) and entered with their post-conversion duration. Files
/// with lower sample rates, broken files and duplicate payloads land in
/// the report. Empty label directories are an error.
pub fn ingest(root: &Path, opts: &IngestOptions) -> Result<(DatasetManifest, IngestReport)> {
    if !root.is_dir() {
        return Err(Error::Data(format!("data root {} is not a directory", root.display())));
    }

    let mut label_dirs: Vec<PathBuf> = std::fs::read_dir(root)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    label_dirs.sort();
    if label_dirs.is_empty() {
        return Err(Error::Data(format!("no label directories under {}", root.display())));
    }

    let mut report = IngestReport::default();
    let mut entries = Vec::new();
    // payload hash -> (label, entry index) of the first occurrence
    let mut seen: HashMap<String, (String, usize)> = HashMap::new();
    let mut cross_label_dups: Vec<String> = Vec::new();

    for dir in &label_dirs {
        let label = dir
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| Error::Data(format!("unreadable label directory name: {}", dir.display())))?
            .to_string();
        let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.is_file())
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(Error::Data(format!("label directory {} is empty", dir.display())));
        }

        for path in files {
            let is_wav = path
                .extension()
                .and_then(|e| e.to_str())
                .map(|e| e.eq_ignore_ascii_case("wav"))
                .unwrap_or(false);
            if !is_wav {
                report.rejected.push((path, RejectReason::NotWav));
                continue;
            }
            let decoded = match read_wav(&path) {
                Ok(d) => d,
                Err(e) => {
                    log::warn!("skipping unreadable file {}: {}", path.display(), e);
                    report
                        .rejected
                        .push((path, RejectReason::DecodeError(e.to_string())));
                    continue;
                }
            };
            if decoded.sample_rate < SAMPLE_RATE {
                report
                    .rejected
                    .push((path, RejectReason::LowSampleRate(decoded.sample_rate)));
                continue;
            }

            if let Some((first_label, _)) = seen.get(&decoded.payload_sha256) {
                if *first_label != label {
                    // Same audio under different labels: drop both copies.
                    cross_label_dups.push(decoded.payload_sha256.clone());
                    report.warnings.push(format!(
                        "identical audio under labels {:?} and {:?}: {}",
                        first_label,
                        label,
                        path.display()
                    ));
                    report.rejected.push((path, RejectReason::DuplicateCrossLabel));
                } else {
                    report.warnings.push(format!(
                        "duplicate audio within label {:?}: {}",
                        label,
                        path.display()
                    ));
                    report.rejected.push((path, RejectReason::DuplicateSameLabel));
                }
                continue;
            }

            let mono = match to_mono(&decoded.channels, decoded.sample_rate)
                .and_then(|m| resample_to_44100(&m))
            {
                Ok(w) => w,
                Err(e) => {
                    report
                        .rejected
                        .push((path, RejectReason::DecodeError(e.to_string())));
                    continue;
                }
            };

            let full_duration = mono.duration_s();
            let offset_s = if opts.trim_last_10s && full_duration > 10.0 {
                full_duration - 10.0
            } else {
                0.0
            };

            let stem = path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("unnamed")
                .to_string();
            let rel = path
                .strip_prefix(root)
                .unwrap_or(&path)
                .to_string_lossy()
                .into_owned();
            seen.insert(decoded.payload_sha256.clone(), (label.clone(), entries.len()));
            entries.push(RecordingEntry {
                id: format!("{}/{}", label, stem),
                label: label.clone(),
                duration_s: full_duration - offset_s,
                source_path: rel,
                split: Split::Unassigned,
                chunks: Vec::new(),
                sha256: decoded.payload_sha256,
                offset_s,
                extra: Default::default(),
            });
        }
    }

    // Remove the retained first copies of cross-label duplicates.
    if !cross_label_dups.is_empty() {
        let mut removed = Vec::new();
        entries.retain(|e| {
            if cross_label_dups.contains(&e.sha256) {
                removed.push((PathBuf::from(&e.source_path), RejectReason::DuplicateCrossLabel));
                false
            } else {
                true
            }
        });
        report.rejected.extend(removed);
    }

    if entries.is_empty() {
        return Err(Error::Data("no valid recordings".into()));
    }

    let manifest = DatasetManifest { entries };
    manifest.validate()?;
    Ok((manifest, report))
}
