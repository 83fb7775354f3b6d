//! Fixed-length chunking: 5 s windows with 3.75 s overlap, a wrapped
//! terminal chunk when at least 1.25 s of tail remains, and looping for
//! recordings shorter than 5 s.

use super::ChunkSpec;
use crate::dsp::Waveform;

/// Chunk length in seconds.
pub const CHUNK_S: f64 = 5.0;
/// Window hop in seconds (5 s windows with 3.75 s overlap).
pub const CHUNK_HOP_S: f64 = 1.25;

/// Chunk boundaries for a recording of `samples` samples.
///
/// All arithmetic is in integer samples; the stored second values are the
/// exact sample counts divided by the rate.
pub fn chunk_spans(samples: usize, sample_rate: u32) -> Vec<ChunkSpec> {
    let sr = sample_rate as f64;
    let chunk_len = (CHUNK_S * sr).round() as usize;
    let hop = (CHUNK_HOP_S * sr).round() as usize;

    if samples == 0 {
        return Vec::new();
    }
    if samples < chunk_len {
        return vec![ChunkSpec { start_s: 0.0, wrap_s: 0.0, looped: true }];
    }
    // A recording of exactly one chunk is taken as-is, without a wrapped
    // variant of itself.
    if samples == chunk_len {
        return vec![ChunkSpec { start_s: 0.0, wrap_s: 0.0, looped: false }];
    }

    let mut out = Vec::new();
    let mut start = 0usize;
    while start + chunk_len <= samples {
        out.push(ChunkSpec { start_s: start as f64 / sr, wrap_s: 0.0, looped: false });
        start += hop;
    }
    // One terminal wrapped chunk if enough tail remains.
    let tail = samples - start;
    if tail >= hop {
        out.push(ChunkSpec {
            start_s: start as f64 / sr,
            wrap_s: (chunk_len - tail) as f64 / sr,
            looped: false,
        });
    }
    out
}

/// Realizes a chunk as exactly 5 s of audio: in-file span, wrap-around
/// completion from the file start, or tiling for looped chunks.
pub fn extract_chunk(w: &Waveform, spec: &ChunkSpec) -> Waveform {
    let sr = w.sample_rate();
    let chunk_len = (CHUNK_S * sr as f64).round() as usize;
    let x = w.samples();

    let mut out = Vec::with_capacity(chunk_len);
    if spec.looped {
        while out.len() < chunk_len {
            let take = (chunk_len - out.len()).min(x.len());
            out.extend_from_slice(&x[..take]);
        }
    } else {
        let start = (spec.start_s * sr as f64).round() as usize;
        let end = (start + chunk_len).min(x.len());
        out.extend_from_slice(&x[start..end]);
        let mut wrap_pos = 0usize;
        while out.len() < chunk_len {
            let take = (chunk_len - out.len()).min(x.len() - wrap_pos);
            out.extend_from_slice(&x[wrap_pos..wrap_pos + take]);
            wrap_pos = 0;
        }
    }
    Waveform::new(out, sr).expect("chunk extraction produced invalid waveform")
}
