//! WAV reading/writing (PCM 16/24-bit and 32-bit float).

use crate::dsp::Waveform;
use crate::error::{Error, Result};
use sha2::{Digest, Sha256};
use std::path::Path;

/// A decoded multi-channel file plus a content hash of its sample payload.
pub struct DecodedWav {
    pub channels: Vec<Vec<f32>>,
    pub sample_rate: u32,
    /// SHA-256 over the decoded interleaved samples (f32 little-endian),
    /// used for duplicate detection.
    pub payload_sha256: String,
}

pub fn read_wav(path: &Path) -> Result<DecodedWav> {
    let mut reader = hound::WavReader::open(path)
        .map_err(|e| Error::Wav(format!("{}: {}", path.display(), e)))?;
    let spec = reader.spec();
    let n_channels = spec.channels as usize;
    if n_channels == 0 {
        return Err(Error::Wav(format!("{}: zero channels", path.display())));
    }

    let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Wav(format!("{}: {}", path.display(), e)))?,
        (hound::SampleFormat::Int, bits @ (16 | 24 | 32)) => {
            let scale = 1.0 / (1i64 << (bits - 1)) as f32;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f32 * scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Wav(format!("{}: {}", path.display(), e)))?
        }
        (fmt, bits) => {
            return Err(Error::Wav(format!(
                "{}: unsupported format {:?}/{} bits",
                path.display(),
                fmt,
                bits
            )))
        }
    };

    let mut hasher = Sha256::new();
    for s in &interleaved {
        hasher.update(s.to_le_bytes());
    }
    let payload_sha256 = hex_string(&hasher.finalize());

    let frames = interleaved.len() / n_channels;
    let mut channels = vec![Vec::with_capacity(frames); n_channels];
    for (i, &s) in interleaved.iter().enumerate() {
        channels[i % n_channels].push(s);
    }

    Ok(DecodedWav { channels, sample_rate: spec.sample_rate, payload_sha256 })
}

/// Writes a mono 32-bit float WAV.
pub fn write_wav_f32(path: &Path, w: &Waveform) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate(),
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut writer = hound::WavWriter::create(path, spec)
        .map_err(|e| Error::Wav(format!("{}: {}", path.display(), e)))?;
    for &s in w.samples() {
        writer
            .write_sample(s)
            .map_err(|e| Error::Wav(format!("{}: {}", path.display(), e)))?;
    }
    writer
        .finalize()
        .map_err(|e| Error::Wav(format!("{}: {}", path.display(), e)))?;
    Ok(())
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{:02x}", b)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_pcm16(path: &Path, sr: u32, channels: &[Vec<i16>]) {
        let spec = hound::WavSpec {
            channels: channels.len() as u16,
            sample_rate: sr,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(path, spec).unwrap();
        for i in 0..channels[0].len() {
            for ch in channels {
                w.write_sample(ch[i]).unwrap();
            }
        }
        w.finalize().unwrap();
    }

    #[test]
    fn pcm16_round_trip_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.wav");
        write_pcm16(&path, 44100, &[vec![0, 16384, -16384, 32767]]);
        let d = read_wav(&path).unwrap();
        assert_eq!(d.sample_rate, 44100);
        assert_eq!(d.channels.len(), 1);
        let s = &d.channels[0];
        assert_eq!(s[0], 0.0);
        assert!((s[1] - 0.5).abs() < 1e-4);
        assert!((s[2] + 0.5).abs() < 1e-4);
    }

    #[test]
    fn stereo_deinterleaves() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("st.wav");
        write_pcm16(&path, 48000, &[vec![100i16; 8], vec![-100i16; 8]]);
        let d = read_wav(&path).unwrap();
        assert_eq!(d.channels.len(), 2);
        assert!(d.channels[0].iter().all(|&v| v > 0.0));
        assert!(d.channels[1].iter().all(|&v| v < 0.0));
    }

    #[test]
    fn f32_write_read_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.wav");
        let w = Waveform::new(vec![0.1, -0.5, 0.25, 0.0], 44100).unwrap();
        write_wav_f32(&path, &w).unwrap();
        let d = read_wav(&path).unwrap();
        assert_eq!(d.channels[0], w.samples());
    }

    #[test]
    fn identical_payloads_share_hash() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.wav");
        let b = dir.path().join("b.wav");
        write_pcm16(&a, 44100, &[vec![5, 6, 7, 8]]);
        write_pcm16(&b, 44100, &[vec![5, 6, 7, 8]]);
        let (da, db) = (read_wav(&a).unwrap(), read_wav(&b).unwrap());
        assert_eq!(da.payload_sha256, db.payload_sha256);
        let c = dir.path().join("c.wav");
        write_pcm16(&c, 44100, &[vec![5, 6, 7, 9]]);
        assert_ne!(read_wav(&c).unwrap().payload_sha256, da.payload_sha256);
    }

    #[test]
    fn unreadable_file_is_a_wav_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nope.wav");
        std::fs::write(&path, b"not a wav").unwrap();
        assert!(matches!(read_wav(&path), Err(Error::Wav(_))));
    }
}
