//! Signal-processing primitives: mono conversion, resampling, framing,
//! power STFT, mel scale and filterbank, Gabor and Gaussian kernel synthesis.

mod gabor;
mod mel;
mod resample;
mod stft;

pub use gabor::{gabor_kernels, gaussian_lowpass_kernel};
pub use mel::{build_mel_filterbank, hz_to_mel, mel_to_hz, MelFilterbank};
pub use resample::resample_to_44100;
pub use stft::{stft_power, Spectrogram};

use crate::error::{Error, Result};

/// The toolkit's working sample rate.
pub const SAMPLE_RATE: u32 = 44_100;
/// Samples in one 5 s chunk at the working rate.
pub const CHUNK_SAMPLES: usize = 220_500;

/// A mono sample sequence with its sample rate. Amplitudes are nominally
/// within `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Data("sample rate must be positive".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::Numeric("waveform contains non-finite samples".into()));
        }
        Ok(Waveform { samples, sample_rate })
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        let sum: f64 = self.samples.iter().map(|&s| s as f64 * s as f64).sum();
        (sum / self.samples.len() as f64).sqrt()
    }
}

/// Per-sample mean across channels.
pub fn to_mono(channels: &[Vec<f32>], sample_rate: u32) -> Result<Waveform> {
    if channels.is_empty() {
        return Err(Error::Data("to_mono: zero channels".into()));
    }
    let len = channels[0].len();
    for (i, ch) in channels.iter().enumerate() {
        if ch.len() != len {
            return Err(Error::Data(format!(
                "to_mono: channel {} has {} samples, expected {}",
                i,
                ch.len(),
                len
            )));
        }
    }
    if channels.len() == 1 {
        return Waveform::new(channels[0].clone(), sample_rate);
    }
    let scale = 1.0 / channels.len() as f32;
    let mut out = vec![0.0f32; len];
    for ch in channels {
        for (o, &s) in out.iter_mut().zip(ch.iter()) {
            *o += s;
        }
    }
    for o in &mut out {
        *o *= scale;
    }
    Waveform::new(out, sample_rate)
}

/// STFT framing parameters. The window is constrained to twice the hop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FramingConfig {
    window_len: usize,
    hop: usize,
    centered: bool,
}

impl FramingConfig {
    pub fn new(window_len: usize, hop: usize, centered: bool) -> Result<Self> {
        if hop < 1 {
            return Err(Error::Config("framing hop must be >= 1".into()));
        }
        if window_len != 2 * hop {
            return Err(Error::Config(format!(
                "window length {} must be exactly twice the hop {}",
                window_len, hop
            )));
        }
        Ok(FramingConfig { window_len, hop, centered })
    }

    /// The standard configuration: 294-sample window, 147-sample hop
    /// (6.67 ms / 3.335 ms at 44.1 kHz), centered.
    pub fn standard() -> Self {
        FramingConfig { window_len: 294, hop: 147, centered: true }
    }

    pub fn window_len(&self) -> usize {
        self.window_len
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn centered(&self) -> bool {
        self.centered
    }

    /// Frame count for an input of `len` samples: `ceil(len / hop)` when
    /// centered, the valid-window count otherwise.
    pub fn frames(&self, len: usize) -> usize {
        if self.centered {
            len.div_ceil(self.hop)
        } else if len < self.window_len {
            0
        } else {
            (len - self.window_len) / self.hop + 1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mono_passthrough_single_channel() {
        let w = to_mono(&[vec![0.1, -0.2, 0.3]], 44100).unwrap();
        assert_eq!(w.samples(), &[0.1, -0.2, 0.3]);
    }

    #[test]
    fn mono_opposite_channels_cancel() {
        let w = to_mono(&[vec![1.0; 4], vec![-1.0; 4]], 44100).unwrap();
        assert!(w.samples().iter().all(|&s| s == 0.0));
    }

    #[test]
    fn mono_averages() {
        let w = to_mono(&[vec![0.2; 3], vec![0.4; 3]], 44100).unwrap();
        for &s in w.samples() {
            assert!((s - 0.3).abs() < 1e-7);
        }
    }

    #[test]
    fn mono_rejects_empty() {
        assert!(to_mono(&[], 44100).is_err());
    }

    #[test]
    fn standard_framing_yields_1500_frames() {
        let cfg = FramingConfig::standard();
        assert_eq!(cfg.frames(CHUNK_SAMPLES), 1500);
    }

    #[test]
    fn framing_requires_window_twice_hop() {
        assert!(FramingConfig::new(300, 147, true).is_err());
        assert!(FramingConfig::new(294, 147, true).is_ok());
    }
}
