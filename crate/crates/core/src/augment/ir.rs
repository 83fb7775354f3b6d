//! Impulse-response convolution with delay compensation and dry/wet mixing.

use crate::dsp::Waveform;
use crate::error::{Error, Result};
use realfft::RealFftPlanner;

/// Convolves `w` with `ir` (FFT convolution in f64), aligns the wet signal
/// so the IR's peak-magnitude tap lands at lag 0, normalizes the wet RMS to
/// the dry RMS, and mixes `(1 - mix) * dry + mix * wet`, truncated to the
/// input length. `mix == 0` returns the input bit-identically.
pub fn apply_impulse_response(w: &Waveform, ir: &Waveform, mix: f64) -> Result<Waveform> {
    if ir.is_empty() {
        return Err(Error::Data("empty impulse response".into()));
    }
    if ir.sample_rate() != w.sample_rate() {
        return Err(Error::Data(format!(
            "impulse response rate {} does not match signal rate {}",
            ir.sample_rate(),
            w.sample_rate()
        )));
    }
    if mix == 0.0 {
        return Ok(w.clone());
    }

    let n = w.len();
    let full = n + ir.len() - 1;
    let fft_size = full.next_power_of_two();
    let mut planner = RealFftPlanner::<f64>::new();
    let r2c = planner.plan_fft_forward(fft_size);
    let c2r = planner.plan_fft_inverse(fft_size);

    let spectrum_of = |x: &[f32]| {
        let mut buf = vec![0.0f64; fft_size];
        for (b, &s) in buf.iter_mut().zip(x.iter()) {
            *b = s as f64;
        }
        let mut spec = r2c.make_output_vec();
        r2c.process(&mut buf, &mut spec).expect("rfft failed");
        spec
    };

    let xs = spectrum_of(w.samples());
    let is = spectrum_of(ir.samples());
    let mut prod: Vec<_> = xs.iter().zip(is.iter()).map(|(a, b)| a * b).collect();
    prod[0].im = 0.0;
    let last = prod.len() - 1;
    prod[last].im = 0.0;
    let mut wet_full = vec![0.0f64; fft_size];
    c2r.process(&mut prod, &mut wet_full).expect("irfft failed");
    let scale = 1.0 / fft_size as f64;

    // Delay compensation: start the wet signal at the IR's dominant tap.
    let peak_tap = ir
        .samples()
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
        .map(|(i, _)| i)
        .unwrap_or(0);
    let mut wet: Vec<f64> = wet_full[peak_tap..peak_tap + n].iter().map(|&v| v * scale).collect();

    let dry_rms = w.rms();
    let wet_rms = (wet.iter().map(|&v| v * v).sum::<f64>() / wet.len() as f64).sqrt();
    if wet_rms > 0.0 && dry_rms > 0.0 {
        let g = dry_rms / wet_rms;
        for v in &mut wet {
            *v *= g;
        }
    }

    let samples: Vec<f32> = w
        .samples()
        .iter()
        .zip(wet.iter())
        .map(|(&d, &v)| ((1.0 - mix) * d as f64 + mix * v) as f32)
        .collect();
    Waveform::new(samples, w.sample_rate())
}
