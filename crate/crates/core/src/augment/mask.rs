//! Spectral-domain frequency masking.

use crate::dsp::Waveform;
use crate::error::{Error, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use realfft::RealFftPlanner;

/// Erases a band of width `bw_fraction * Nyquist` around a uniformly random
/// center frequency, with raised-cosine edges of 2% of the band width, then
/// transforms back. The band is clipped to `[0, Nyquist]`.
pub fn frequency_mask(w: &Waveform, bw_fraction: f64, rng: &mut ChaCha8Rng) -> Result<Waveform> {
    if !(0.0..1.0).contains(&bw_fraction) || bw_fraction < 0.01 {
        return Err(Error::Config(format!(
            "mask bandwidth fraction must be in [0.01, 1), got {}",
            bw_fraction
        )));
    }
    if w.is_empty() {
        return Ok(w.clone());
    }
    let nyquist = w.sample_rate() as f64 / 2.0;
    let center = rng.gen_range(0.0..nyquist);
    let bw_hz = bw_fraction * nyquist;
    let lo = (center - bw_hz / 2.0).max(0.0);
    let hi = (center + bw_hz / 2.0).min(nyquist);
    mask_band(w, lo, hi)
}

/// Zeroes `[lo_hz, hi_hz]` with tapered edges.
pub fn mask_band(w: &Waveform, lo_hz: f64, hi_hz: f64) -> Result<Waveform> {
    let n = w.len();
    let mut planner = RealFftPlanner::<f64>::new();
    let r2c = planner.plan_fft_forward(n);
    let c2r = planner.plan_fft_inverse(n);

    let mut buf: Vec<f64> = w.samples().iter().map(|&s| s as f64).collect();
    let mut spec = r2c.make_output_vec();
    r2c.process(&mut buf, &mut spec).expect("rfft failed");

    let bin_hz = w.sample_rate() as f64 / n as f64;
    let taper_hz = 0.02 * (hi_hz - lo_hz);
    for (k, c) in spec.iter_mut().enumerate() {
        let f = k as f64 * bin_hz;
        let gain = band_gain(f, lo_hz, hi_hz, taper_hz);
        if gain != 1.0 {
            *c = *c * gain;
        }
    }
    spec[0].im = 0.0;
    let last = spec.len() - 1;
    spec[last].im = 0.0;

    let mut out = vec![0.0f64; n];
    c2r.process(&mut spec, &mut out).expect("irfft failed");
    let scale = 1.0 / n as f64;
    let samples: Vec<f32> = out.iter().map(|&v| (v * scale) as f32).collect();
    Waveform::new(samples, w.sample_rate())
}

/// 1 outside the band, 0 inside, raised-cosine within `taper` of the edges.
fn band_gain(f: f64, lo: f64, hi: f64, taper: f64) -> f64 {
    if f <= lo - taper || f >= hi + taper {
        return 1.0;
    }
    if f >= lo && f <= hi {
        return 0.0;
    }
    let x = if f < lo { (lo - f) / taper } else { (f - hi) / taper };
    // x in (0, 1): 0 at the band edge, 1 at the outer edge.
    0.5 - 0.5 * (std::f64::consts::PI * x).cos()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamFactory;

    fn band_energy(w: &Waveform, lo_hz: f64, hi_hz: f64) -> f64 {
        let n = w.len();
        let mut planner = RealFftPlanner::<f64>::new();
        let r2c = planner.plan_fft_forward(n);
        let mut buf: Vec<f64> = w.samples().iter().map(|&s| s as f64).collect();
        let mut spec = r2c.make_output_vec();
        r2c.process(&mut buf, &mut spec).unwrap();
        let bin_hz = w.sample_rate() as f64 / n as f64;
        spec.iter()
            .enumerate()
            .filter(|(k, _)| {
                let f = *k as f64 * bin_hz;
                f >= lo_hz && f <= hi_hz
            })
            .map(|(_, c)| c.norm_sqr())
            .sum()
    }

    fn white(n: usize, seed: u64) -> Waveform {
        let mut rng = StreamFactory::new(seed).stream("mask-test", 0);
        let samples: Vec<f32> = (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect();
        Waveform::new(samples, 44100).unwrap()
    }

    #[test]
    fn masked_band_energy_below_one_percent() {
        let w = white(65536, 7);
        let (lo, hi) = (5000.0, 8000.0);
        let before = band_energy(&w, lo, hi);
        let masked = mask_band(&w, lo, hi).unwrap();
        let after = band_energy(&masked, lo, hi);
        assert!(after / before < 0.01, "residual {}", after / before);
    }

    #[test]
    fn tone_outside_band_survives() {
        let n = 65536;
        let freq = 2000.0 * 44100.0 / 44100.0; // 2 kHz, well outside the band
        let samples: Vec<f32> = (0..n)
            .map(|i| (std::f64::consts::TAU * freq * i as f64 / 44100.0).sin() as f32 * 0.5)
            .collect();
        let w = Waveform::new(samples, 44100).unwrap();
        let masked = mask_band(&w, 10_000.0, 14_000.0).unwrap();
        let before = band_energy(&w, 1900.0, 2100.0);
        let after = band_energy(&masked, 1900.0, 2100.0);
        let amp_ratio = (after / before).sqrt();
        assert!((amp_ratio - 1.0).abs() < 0.01, "amplitude ratio {}", amp_ratio);
    }

    #[test]
    fn narrowest_mask_changes_little_total_energy() {
        let w = white(65536, 9);
        let mut rng = StreamFactory::new(11).stream("mask-test", 1);
        let masked = frequency_mask(&w, 0.01, &mut rng).unwrap();
        let e0: f64 = w.samples().iter().map(|&s| (s as f64).powi(2)).sum();
        let e1: f64 = masked.samples().iter().map(|&s| (s as f64).powi(2)).sum();
        assert!((e1 - e0).abs() / e0 < 0.03, "energy change {}", (e1 - e0).abs() / e0);
    }

    #[test]
    fn bandwidth_below_floor_rejected() {
        let w = white(1024, 1);
        let mut rng = StreamFactory::new(1).stream("mask-test", 2);
        assert!(frequency_mask(&w, 0.005, &mut rng).is_err());
    }
}
