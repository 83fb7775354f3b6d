//! Dataset ingestion, chunking, deterministic splitting and manifests.

mod chunk;
mod ingest;
mod manifest;
mod split;
mod wav;

pub use chunk::{chunk_spans, extract_chunk, CHUNK_HOP_S, CHUNK_S};
pub use ingest::{ingest, write_rejection_report, IngestOptions, IngestReport, RejectReason};
pub use manifest::{load_manifest, write_manifest};
pub use split::{assign_splits, SplitScheme};
pub use wav::{read_wav, write_wav_f32, DecodedWav};

use crate::dsp::{resample_to_44100, to_mono, Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::cell::RefCell;
use std::collections::{HashMap, VecDeque};
use std::path::{Path, PathBuf};

/// Subset assignment of a recording (and thereby all of its chunks).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
    Unassigned,
}

/// One realized 5 s segment of a recording.
///
/// `start_s` is the in-file start; `wrap_s` is how much of the chunk is
/// filled by wrapping to the file start (terminal chunks only); `looped`
/// marks sub-5 s recordings tiled out to length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkSpec {
    pub start_s: f64,
    pub wrap_s: f64,
    pub looped: bool,
}

/// Per-recording manifest record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingEntry {
    pub id: String,
    pub label: String,
    pub duration_s: f64,
    pub source_path: String,
    pub split: Split,
    pub chunks: Vec<ChunkSpec>,
    pub sha256: String,
    /// Seconds skipped from the start of the decoded file (commentary
    /// trimming); 0 when disabled.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub offset_s: f64,
    /// Unknown fields from newer writers, preserved across round trips.
    #[serde(flatten)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

fn is_zero(x: &f64) -> bool {
    *x == 0.0
}

/// The labeled corpus: recordings with split assignments and chunk lists.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<RecordingEntry>,
}

impl DatasetManifest {
    /// Sorted unique label set.
    pub fn labels(&self) -> Vec<String> {
        let mut labels: Vec<String> = self.entries.iter().map(|e| e.label.clone()).collect();
        labels.sort();
        labels.dedup();
        labels
    }

    pub fn entries_in(&self, split: Split) -> impl Iterator<Item = &RecordingEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    /// `(entry index, chunk index)` pairs of one subset, manifest order.
    pub fn chunk_refs(&self, split: Split) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (ei, e) in self.entries.iter().enumerate() {
            if e.split == split {
                for ci in 0..e.chunks.len() {
                    out.push((ei, ci));
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids: Vec<&str> = self.entries.iter().map(|e| e.id.as_str()).collect();
        ids.sort();
        for w in ids.windows(2) {
            if w[0] == w[1] {
                return Err(Error::Data(format!("duplicate recording id {}", w[0])));
            }
        }
        for e in &self.entries {
            if e.duration_s <= 0.0 {
                return Err(Error::Data(format!("non-positive duration for {}", e.id)));
            }
        }
        Ok(())
    }

    /// Fills every entry's chunk list from its duration.
    pub fn compute_chunks(&mut self) {
        for e in &mut self.entries {
            let samples = (e.duration_s * SAMPLE_RATE as f64).round() as usize;
            e.chunks = chunk_spans(samples, SAMPLE_RATE);
        }
    }
}

/// Decodes recordings on demand (mono, 44.1 kHz, offset applied) with a
/// byte-capped FIFO cache.
pub struct AudioStore {
    root: PathBuf,
    cache: RefCell<HashMap<String, Waveform>>,
    order: RefCell<VecDeque<String>>,
    cap_bytes: usize,
}

impl AudioStore {
    pub fn new(root: &Path) -> Self {
        AudioStore {
            root: root.to_path_buf(),
            cache: RefCell::new(HashMap::new()),
            order: RefCell::new(VecDeque::new()),
            cap_bytes: 1 << 30,
        }
    }

    fn cached_bytes(&self) -> usize {
        self.cache.borrow().values().map(|w| w.len() * 4).sum()
    }

    pub fn load_recording(&self, entry: &RecordingEntry) -> Result<Waveform> {
        if let Some(w) = self.cache.borrow().get(&entry.id) {
            return Ok(w.clone());
        }
        let path = self.root.join(&entry.source_path);
        let decoded = read_wav(&path)?;
        let mono = to_mono(&decoded.channels, decoded.sample_rate)?;
        let resampled = resample_to_44100(&mono)?;
        let skip = (entry.offset_s * SAMPLE_RATE as f64).round() as usize;
        let w = if skip > 0 && skip < resampled.len() {
            Waveform::new(resampled.samples()[skip..].to_vec(), SAMPLE_RATE)?
        } else {
            resampled
        };
        while self.cached_bytes() + w.len() * 4 > self.cap_bytes {
            let Some(evict) = self.order.borrow_mut().pop_front() else {
                break;
            };
            self.cache.borrow_mut().remove(&evict);
        }
        self.cache.borrow_mut().insert(entry.id.clone(), w.clone());
        self.order.borrow_mut().push_back(entry.id.clone());
        Ok(w)
    }

    /// The realized 5 s waveform of one chunk.
    pub fn load_chunk(&self, entry: &RecordingEntry, chunk: &ChunkSpec) -> Result<Waveform> {
        let rec = self.load_recording(entry)?;
        Ok(extract_chunk(&rec, chunk))
    }
}
