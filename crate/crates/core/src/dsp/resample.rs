//! Polyphase windowed-sinc downsampling to the working rate.

use super::{Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};

/// Modified Bessel function of the first kind, order zero (power series).
fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let half_sq = x * x / 4.0;
    for k in 1..64 {
        term *= half_sq / (k as f64 * k as f64);
        sum += term;
        if term < sum * 1e-14 {
            break;
        }
    }
    sum
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

const TAPS_PER_PHASE: usize = 64;
const KAISER_BETA: f64 = 12.0;

/// Downsamples to exactly 44.1 kHz with a Kaiser-windowed sinc polyphase
/// filter (64 taps per phase, beta 12, anti-alias cutoff at the new
/// Nyquist). Inputs already at 44.1 kHz pass through unchanged; lower
/// rates are rejected.
pub fn resample_to_44100(w: &Waveform) -> Result<Waveform> {
    let sr = w.sample_rate();
    if sr < SAMPLE_RATE {
        return Err(Error::Data(format!(
            "sample rate {} Hz below 44.1 kHz; only 44.1 kHz or higher input is supported",
            sr
        )));
    }
    if sr == SAMPLE_RATE {
        return Ok(w.clone());
    }

    let g = gcd(SAMPLE_RATE as u64, sr as u64);
    let up = (SAMPLE_RATE as u64 / g) as usize; // L
    let down = (sr as u64 / g) as usize; // M

    // Prototype lowpass at the upsampled rate sr * L.
    let taps = TAPS_PER_PHASE * up;
    let delay = (taps - 1) as f64 / 2.0;
    let cutoff = (SAMPLE_RATE as f64 / 2.0) / (sr as f64 * up as f64); // cycles/sample
    let i0_beta = bessel_i0(KAISER_BETA);
    let proto: Vec<f64> = (0..taps)
        .map(|i| {
            let t = i as f64 - delay;
            let sinc = if t == 0.0 {
                1.0
            } else {
                let x = std::f64::consts::PI * 2.0 * cutoff * t;
                x.sin() / x
            };
            let r = 2.0 * i as f64 / (taps - 1) as f64 - 1.0;
            let window = bessel_i0(KAISER_BETA * (1.0 - r * r).max(0.0).sqrt()) / i0_beta;
            2.0 * cutoff * sinc * window * up as f64
        })
        .collect();

    let x = w.samples();
    let in_len = x.len() as i64;
    let out_len = (x.len() * up) / down;
    let delay_i = (taps as i64 - 1) / 2;
    let mut out = Vec::with_capacity(out_len);
    for j in 0..out_len {
        // Center of output sample j on the upsampled grid, delay-compensated.
        let u = (j * down) as i64 + delay_i;
        let n_max = u / up as i64;
        let n_min = {
            let lo = u - (taps as i64 - 1);
            // ceil division for possibly negative numerator
            lo.div_euclid(up as i64) + if lo.rem_euclid(up as i64) != 0 { 1 } else { 0 }
        };
        let mut acc = 0.0f64;
        for n in n_min..=n_max {
            if n < 0 || n >= in_len {
                continue;
            }
            let k = (u - n * up as i64) as usize;
            acc += proto[k] * x[n as usize] as f64;
        }
        out.push(acc as f32);
    }

    Waveform::new(out, SAMPLE_RATE)
}

#[cfg(test)]
mod tests {
    use super::*;
    use realfft::RealFftPlanner;

    fn sine(freq: f64, sr: u32, seconds: f64) -> Waveform {
        let n = (sr as f64 * seconds) as usize;
        let samples: Vec<f32> = (0..n)
            .map(|i| (std::f64::consts::TAU * freq * i as f64 / sr as f64).sin() as f32)
            .collect();
        Waveform::new(samples, sr).unwrap()
    }

    #[test]
    fn passthrough_at_target_rate() {
        let w = sine(1000.0, 44100, 0.1);
        let out = resample_to_44100(&w).unwrap();
        assert_eq!(out.samples(), w.samples());
    }

    #[test]
    fn rejects_lower_rates() {
        let w = sine(1000.0, 22050, 0.1);
        assert!(resample_to_44100(&w).is_err());
    }

    #[test]
    fn halves_88200_with_spectral_peak_preserved() {
        let w = sine(5000.0, 88200, 5.0);
        let out = resample_to_44100(&w).unwrap();
        assert_eq!(out.sample_rate(), 44100);
        assert_eq!(out.len(), 220500);

        // FFT peak within one bin of 5 kHz.
        let fft_size = 65536;
        let mut planner = RealFftPlanner::<f64>::new();
        let r2c = planner.plan_fft_forward(fft_size);
        let mut buf = vec![0.0f64; fft_size];
        for (b, &s) in buf.iter_mut().zip(out.samples()[10000..].iter()) {
            *b = s as f64;
        }
        let mut spec = r2c.make_output_vec();
        r2c.process(&mut buf, &mut spec).unwrap();
        let mags: Vec<f64> = spec.iter().map(|c| c.norm()).collect();
        let argmax = mags
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        let bin_hz = 44100.0 / fft_size as f64;
        assert!((argmax as f64 * bin_hz - 5000.0).abs() <= bin_hz);

        // Amplitude within 1%: steady-state RMS of a unit sine is 1/sqrt(2).
        let mid = &out.samples()[20000..200000];
        let rms = (mid.iter().map(|&s| (s as f64).powi(2)).sum::<f64>() / mid.len() as f64).sqrt();
        assert!(
            (rms - std::f64::consts::FRAC_1_SQRT_2).abs() / std::f64::consts::FRAC_1_SQRT_2 < 0.01,
            "rms {}",
            rms
        );
    }

    #[test]
    fn rational_48k_conversion() {
        let w = sine(2000.0, 48000, 1.0);
        let out = resample_to_44100(&w).unwrap();
        assert_eq!(out.len(), 44100);
        let mid = &out.samples()[5000..40000];
        let rms = (mid.iter().map(|&s| (s as f64).powi(2)).sum::<f64>() / mid.len() as f64).sqrt();
        assert!((rms - std::f64::consts::FRAC_1_SQRT_2).abs() < 0.01, "rms {}", rms);
    }
}
