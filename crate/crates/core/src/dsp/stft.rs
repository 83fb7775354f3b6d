//! Hann-windowed power STFT with reflect center-padding.

use super::{FramingConfig, Waveform};
use crate::error::{Error, Result};
use realfft::RealFftPlanner;

/// Magnitude-squared STFT, row-major `[bins, frames]`.
#[derive(Debug, Clone)]
pub struct Spectrogram {
    pub bins: usize,
    pub frames: usize,
    pub data: Vec<f32>,
}

impl Spectrogram {
    pub fn get(&self, bin: usize, frame: usize) -> f32 {
        self.data[bin * self.frames + frame]
    }
}

/// Periodic Hann window.
fn hann(len: usize) -> Vec<f32> {
    (0..len)
        .map(|i| {
            let x = std::f64::consts::TAU * i as f64 / len as f64;
            (0.5 - 0.5 * x.cos()) as f32
        })
        .collect()
}

/// Reflect-pads by `pad` samples on both sides (no edge duplication).
fn reflect_pad(x: &[f32], pad: usize) -> Vec<f32> {
    assert!(
        x.len() > pad,
        "input of {} samples too short for reflect pad {}",
        x.len(),
        pad
    );
    let mut out = Vec::with_capacity(x.len() + 2 * pad);
    for i in (1..=pad).rev() {
        out.push(x[i]);
    }
    out.extend_from_slice(x);
    for i in 0..pad {
        out.push(x[x.len() - 2 - i]);
    }
    out
}

/// Power spectrogram of `w`.
///
/// Centered mode reflect-pads by half a window so frame `t` is centered on
/// sample `t * hop`; the frame count is `ceil(len / hop)` (exactly 1500 for
/// 5 s at 44.1 kHz with hop 147).
pub fn stft_power(w: &Waveform, cfg: &FramingConfig, fft_size: usize) -> Result<Spectrogram> {
    if w.is_empty() {
        return Err(Error::Data("stft of empty waveform".into()));
    }
    let win_len = cfg.window_len();
    if fft_size < win_len {
        return Err(Error::Config(format!(
            "fft size {} smaller than window {}",
            fft_size, win_len
        )));
    }
    let frames = cfg.frames(w.len());
    if frames == 0 {
        return Err(Error::Data("input shorter than one uncentered window".into()));
    }

    let padded: Vec<f32>;
    let signal: &[f32] = if cfg.centered() {
        padded = reflect_pad(w.samples(), win_len / 2);
        &padded
    } else {
        w.samples()
    };

    let window = hann(win_len);
    let bins = fft_size / 2 + 1;
    let mut planner = RealFftPlanner::<f32>::new();
    let r2c = planner.plan_fft_forward(fft_size);
    let mut buf = vec![0.0f32; fft_size];
    let mut spectrum = r2c.make_output_vec();

    let mut data = vec![0.0f32; bins * frames];
    for t in 0..frames {
        let start = t * cfg.hop();
        buf[..win_len]
            .iter_mut()
            .zip(signal[start..start + win_len].iter().zip(window.iter()))
            .for_each(|(b, (&s, &w))| *b = s * w);
        buf[win_len..].fill(0.0);
        r2c.process(&mut buf, &mut spectrum).expect("rfft failed");
        for (k, c) in spectrum.iter().enumerate() {
            data[k * frames + t] = c.norm_sqr();
        }
    }

    Ok(Spectrogram { bins, frames, data })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::CHUNK_SAMPLES;

    fn sine(freq: f64, sr: u32, n: usize, amp: f64, phase: f64) -> Waveform {
        let samples: Vec<f32> = (0..n)
            .map(|i| (amp * (std::f64::consts::TAU * freq * i as f64 / sr as f64 + phase).sin()) as f32)
            .collect();
        Waveform::new(samples, sr).unwrap()
    }

    #[test]
    fn zero_input_gives_zero_grid_of_expected_shape() {
        let w = Waveform::new(vec![0.0; CHUNK_SAMPLES], 44100).unwrap();
        let s = stft_power(&w, &FramingConfig::standard(), 512).unwrap();
        assert_eq!(s.bins, 257);
        assert_eq!(s.frames, 1500);
        assert!(s.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bin_exact_sine_concentrates_energy() {
        // Bin 58 of a 512-point fft at 44.1 kHz is 4996.0 Hz.
        let bin = 58;
        let freq = bin as f64 * 44100.0 / 512.0;
        let w = sine(freq, 44100, CHUNK_SAMPLES, 1.0, 0.3);
        let s = stft_power(&w, &FramingConfig::standard(), 512).unwrap();

        let total: f64 = s.data.iter().map(|&v| v as f64).sum();
        let mut per_bin = vec![0.0f64; s.bins];
        for k in 0..s.bins {
            per_bin[k] = s.data[k * s.frames..(k + 1) * s.frames]
                .iter()
                .map(|&v| v as f64)
                .sum();
        }
        let argmax = per_bin
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(argmax, bin);
        // Main lobe of the 294-tap Hann window spans a few 512-fft bins.
        let near: f64 = per_bin[bin - 4..=bin + 4].iter().sum();
        assert!(near / total > 0.99, "concentration {}", near / total);
    }

    #[test]
    fn parseval_energy_matches_within_one_percent() {
        // Non-centered frames so the windowed energy is exactly comparable.
        let cfg = FramingConfig::new(294, 147, false).unwrap();
        let w = sine(3123.0, 44100, 44100, 0.8, 1.1);
        let s = stft_power(&w, &cfg, 512).unwrap();

        let window = hann(294);
        let mut direct = 0.0f64;
        for t in 0..s.frames {
            for i in 0..294 {
                let v = (w.samples()[t * 147 + i] * window[i]) as f64;
                direct += v * v;
            }
        }
        // Sum over the half spectrum with interior bins doubled equals
        // N * time-domain energy.
        let mut spectral = 0.0f64;
        for k in 0..s.bins {
            let row: f64 = s.data[k * s.frames..(k + 1) * s.frames]
                .iter()
                .map(|&v| v as f64)
                .sum();
            let mult = if k == 0 || k == s.bins - 1 { 1.0 } else { 2.0 };
            spectral += mult * row;
        }
        spectral /= 512.0;
        assert!(
            (spectral - direct).abs() / direct < 0.01,
            "spectral {} vs direct {}",
            spectral,
            direct
        );
    }

    #[test]
    fn empty_input_errors() {
        let w = Waveform::new(vec![], 44100).unwrap();
        assert!(stft_power(&w, &FramingConfig::standard(), 512).is_err());
    }
}
