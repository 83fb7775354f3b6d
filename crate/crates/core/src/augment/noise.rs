//! Colored-noise injection at a requested signal-to-noise ratio.

use crate::dsp::Waveform;
use crate::error::Result;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use realfft::RealFftPlanner;

/// Unit-variance Gaussian samples (Box-Muller).
fn gaussian_noise(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut out = Vec::with_capacity(n + 1);
    while out.len() < n {
        let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = rng.gen();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        out.push(r * theta.cos());
        out.push(r * theta.sin());
    }
    out.truncate(n);
    out
}

/// Shapes white noise to a power spectral density proportional to
/// `f^-decay` (`decay` 1 is pink-like, -2 tilts toward high frequencies).
/// The DC gain is copied from the first nonzero bin.
fn shape_spectrum(white: &[f64], decay: f64) -> Vec<f64> {
    if decay == 0.0 {
        return white.to_vec();
    }
    let n = white.len();
    let mut planner = RealFftPlanner::<f64>::new();
    let r2c = planner.plan_fft_forward(n);
    let c2r = planner.plan_fft_inverse(n);
    let mut buf = white.to_vec();
    let mut spec = r2c.make_output_vec();
    r2c.process(&mut buf, &mut spec).expect("rfft failed");

    // Amplitude gain f^(-decay/2) gives the requested power-law PSD.
    let exp = -decay / 2.0;
    for (k, c) in spec.iter_mut().enumerate() {
        let gain = if k == 0 { 1.0f64 } else { (k as f64).powf(exp) };
        *c = *c * gain;
    }
    spec[0].im = 0.0;
    let gain1 = 1.0f64.powf(exp);
    spec[0] = rustfft::num_complex::Complex::new(spec[0].re * gain1, 0.0);
    let last = spec.len() - 1;
    spec[last].im = 0.0;

    let mut out = vec![0.0f64; n];
    c2r.process(&mut spec, &mut out).expect("irfft failed");
    let scale = 1.0 / n as f64;
    for v in &mut out {
        *v *= scale;
    }
    out
}

/// Adds synthesized noise so that `10 log10(P_signal / P_noise)` equals
/// `snr_db`. Silent inputs are returned unchanged with a warning (the SNR
/// is undefined).
pub fn add_colored_noise(
    w: &Waveform,
    snr_db: f64,
    decay: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Waveform> {
    let signal_power = {
        let rms = w.rms();
        rms * rms
    };
    if signal_power == 0.0 {
        log::warn!("add_colored_noise: silent input, skipping");
        return Ok(w.clone());
    }

    let white = gaussian_noise(w.len(), rng);
    let shaped = shape_spectrum(&white, decay);
    let noise_power = shaped.iter().map(|&x| x * x).sum::<f64>() / shaped.len() as f64;
    let target_power = signal_power / 10f64.powf(snr_db / 10.0);
    let scale = (target_power / noise_power).sqrt();

    let samples: Vec<f32> = w
        .samples()
        .iter()
        .zip(shaped.iter())
        .map(|(&s, &n)| s + (n * scale) as f32)
        .collect();
    Waveform::new(samples, w.sample_rate())
}
