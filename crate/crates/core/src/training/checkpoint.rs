//! Binary checkpoint format.
//!
//! Layout (all little-endian):
//!
//! ```text
//! "LEAFCKPT"  (8 bytes)
//! u32 format version
//! u64 metadata length, then that many bytes of JSON (config snapshot,
//!     label set, epoch bookkeeping, rng seed, optimizer step)
//! u32 tensor count
//! per tensor: u32 name length, name bytes,
//!             u32 rank, u64 * rank dims,
//!             f32 * product values
//! ```

use super::TrainConfig;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"LEAFCKPT";
const VERSION: u32 = 1;

/// Everything needed to restore a trained state: parameter tensors,
/// optimizer moments, bookkeeping and the producing configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    /// Named tensors: model parameters, frontend parameters, batchnorm
    /// running statistics and Adam moments.
    pub tensors: Vec<(String, Vec<usize>, Vec<f32>)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: TrainConfig,
    /// Alphabetical label set of the producing manifest.
    pub labels: Vec<String>,
    /// Epoch whose weights these are (the best-validation epoch).
    pub epoch: usize,
    pub best_val_loss: f64,
    pub best_val_acc: f64,
    /// Master seed; together with `next_epoch` and `adam_step` this pins
    /// the stream-derived RNG state for resumption.
    pub rng_seed: u64,
    pub next_epoch: usize,
    pub adam_step: u64,
    pub leaf_epsilon: f32,
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> Option<(&[usize], &[f32])> {
        self.tensors
            .iter()
            .find(|(n, _, _)| n == name)
            .map(|(_, shape, values)| (shape.as_slice(), values.as_slice()))
    }

    pub fn n_classes(&self) -> usize {
        self.meta.labels.len()
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let meta = serde_json::to_vec(&ckpt.meta)
        .map_err(|e| Error::Checkpoint(format!("metadata serialization: {}", e)))?;
    out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
    out.extend_from_slice(&meta);
    out.extend_from_slice(&(ckpt.tensors.len() as u32).to_le_bytes());
    for (name, shape, values) in &ckpt.tensors {
        let expect: usize = shape.iter().product();
        assert_eq!(expect, values.len(), "tensor {} shape/value mismatch", name);
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &d in shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(&out)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut pos = 0usize;

    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        if *pos + n > bytes.len() {
            return Err(Error::Checkpoint("truncated checkpoint".into()));
        }
        let s = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };

    if take(&mut pos, 8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic: not a checkpoint file".into()));
    }
    let version = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {} (expected {})",
            version, VERSION
        )));
    }
    let meta_len = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize;
    let meta: CheckpointMeta = serde_json::from_slice(take(&mut pos, meta_len)?)
        .map_err(|e| Error::Checkpoint(format!("metadata: {}", e)))?;

    let count = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(&mut pos, name_len)?.to_vec())
            .map_err(|_| Error::Checkpoint("tensor name is not utf-8".into()))?;
        let rank = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize);
        }
        let n: usize = shape.iter().product();
        let raw = take(&mut pos, n * 4)?;
        let values: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push((name, shape, values));
    }
    Ok(Checkpoint { meta, tensors })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::FrontendKind;

    fn sample() -> Checkpoint {
        Checkpoint {
            meta: CheckpointMeta {
                config: TrainConfig::defaults(FrontendKind::Mel),
                labels: vec!["a".into(), "b".into()],
                epoch: 3,
                best_val_loss: 0.21,
                best_val_acc: 0.9,
                rng_seed: 17,
                next_epoch: 4,
                adam_step: 12,
                leaf_epsilon: 1e-6,
            },
            tensors: vec![
                ("backend.head.weight".into(), vec![2, 3], vec![0.1, -0.5, f32::MIN_POSITIVE, 2.0, -0.0, 3.5e-20]),
                ("frontend.center_freqs".into(), vec![2], vec![440.0, 880.0]),
            ],
        }
    }

    #[test]
    fn round_trip_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ckpt");
        let ckpt = sample();
        save_checkpoint(&ckpt, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.meta, ckpt.meta);
        for ((n1, s1, v1), (n2, s2, v2)) in ckpt.tensors.iter().zip(loaded.tensors.iter()) {
            assert_eq!(n1, n2);
            assert_eq!(s1, s2);
            let b1: Vec<u32> = v1.iter().map(|v| v.to_bits()).collect();
            let b2: Vec<u32> = v2.iter().map(|v| v.to_bits()).collect();
            assert_eq!(b1, b2);
        }
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.ckpt");
        std::fs::write(&path, b"NOTACKPTxxxxxxxxxxx").unwrap();
        match load_checkpoint(&path) {
            Err(Error::Checkpoint(msg)) => assert!(msg.contains("magic")),
            other => panic!("expected checkpoint error, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn truncation_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ckpt");
        save_checkpoint(&sample(), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 7);
        std::fs::write(&path, bytes).unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
