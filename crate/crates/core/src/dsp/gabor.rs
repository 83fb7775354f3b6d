//! Gabor and Gaussian kernel synthesis (reference, non-differentiable).
//!
//! The trainable frontend rebuilds these same kernels from parameter
//! tensors; this module is the plain-`f64` construction used for
//! initialization and as the oracle the differentiable path is tested
//! against.

/// Symmetric time support `t = i - (klen - 1) / 2` (half-integer positions
/// for even lengths).
pub(crate) fn time_grid(klen: usize) -> Vec<f64> {
    let center = (klen as f64 - 1.0) / 2.0;
    (0..klen).map(|i| i as f64 - center).collect()
}

/// Gabor cosine/sine kernel pairs.
///
/// `kernel_n(t) = exp(-t^2 / (2 sigma_n^2)) / (sqrt(2 pi) sigma_n) * {cos, sin}(2 pi f_n t / sample_rate)`
/// with `t` in samples and `sigma` in samples.
pub fn gabor_kernels(
    centers_hz: &[f64],
    sigmas: &[f64],
    klen: usize,
    sample_rate: u32,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    assert_eq!(centers_hz.len(), sigmas.len());
    let grid = time_grid(klen);
    let mut cos_kernels = Vec::with_capacity(centers_hz.len());
    let mut sin_kernels = Vec::with_capacity(centers_hz.len());
    for (&f, &sigma) in centers_hz.iter().zip(sigmas.iter()) {
        assert!(sigma > 0.0, "gabor sigma must be positive, got {}", sigma);
        let amp = 1.0 / ((2.0 * std::f64::consts::PI).sqrt() * sigma);
        let omega = std::f64::consts::TAU * f / sample_rate as f64;
        let mut ck = Vec::with_capacity(klen);
        let mut sk = Vec::with_capacity(klen);
        for &t in &grid {
            let env = amp * (-t * t / (2.0 * sigma * sigma)).exp();
            ck.push(env * (omega * t).cos());
            sk.push(env * (omega * t).sin());
        }
        cos_kernels.push(ck);
        sin_kernels.push(sk);
    }
    (cos_kernels, sin_kernels)
}

/// Gaussian lowpass kernel of standard deviation `sigma_fraction * klen / 2`,
/// centered and sum-normalized to 1 (preserves DC).
pub fn gaussian_lowpass_kernel(sigma_fraction: f64, klen: usize) -> Vec<f64> {
    assert!(
        sigma_fraction > 0.0 && sigma_fraction <= 1.0,
        "sigma fraction must be in (0, 1], got {}",
        sigma_fraction
    );
    let sigma = sigma_fraction * klen as f64 / 2.0;
    let mut kernel: Vec<f64> = time_grid(klen)
        .iter()
        .map(|&t| (-t * t / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = kernel.iter().sum();
    for v in &mut kernel {
        *v /= sum;
    }
    kernel
}

#[cfg(test)]
mod tests {
    use super::*;
    use realfft::RealFftPlanner;

    fn magnitude_spectrum(kernel: &[f64], fft_size: usize) -> Vec<f64> {
        let mut planner = RealFftPlanner::<f64>::new();
        let r2c = planner.plan_fft_forward(fft_size);
        let mut buf = vec![0.0f64; fft_size];
        buf[..kernel.len()].copy_from_slice(kernel);
        let mut spec = r2c.make_output_vec();
        r2c.process(&mut buf, &mut spec).unwrap();
        spec.iter().map(|c| c.norm()).collect()
    }

    #[test]
    fn zero_center_is_pure_gaussian_and_zero_sine() {
        let (cos_k, sin_k) = gabor_kernels(&[0.0], &[20.0], 294, 44100);
        assert!(sin_k[0].iter().all(|&v| v == 0.0));
        // Cosine kernel: positive symmetric bell.
        assert!(cos_k[0].iter().all(|&v| v > 0.0));
        for i in 0..294 {
            assert!((cos_k[0][i] - cos_k[0][293 - i]).abs() < 1e-15);
        }
    }

    #[test]
    fn frequency_response_peaks_at_requested_center() {
        let fft_size = 8192;
        let bin_hz = 44100.0 / fft_size as f64;
        for center in [1000.0, 5000.0, 15000.0] {
            let (cos_k, _) = gabor_kernels(&[center], &[30.0], 294, 44100);
            let mag = magnitude_spectrum(&cos_k[0], fft_size);
            let argmax = mag
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            let peak_hz = argmax as f64 * bin_hz;
            assert!(
                (peak_hz - center).abs() <= bin_hz,
                "center {} peaked at {}",
                center,
                peak_hz
            );
        }
    }

    #[test]
    fn larger_sigma_narrows_bandwidth() {
        let fft_size = 16384;
        let mut widths = Vec::new();
        for sigma in [8.0, 16.0, 32.0, 64.0] {
            let (cos_k, _) = gabor_kernels(&[8000.0], &[sigma], 294, 44100);
            let mag = magnitude_spectrum(&cos_k[0], fft_size);
            let peak = mag.iter().cloned().fold(0.0, f64::max);
            let half = peak / 2f64.sqrt(); // -3 dB
            let above = mag.iter().filter(|&&m| m > half).count();
            widths.push(above);
        }
        for w in widths.windows(2) {
            assert!(w[1] < w[0], "bandwidths not decreasing: {:?}", widths);
        }
    }

    #[test]
    fn gaussian_kernel_is_symmetric() {
        let k = gaussian_lowpass_kernel(0.4, 294);
        for i in 0..294 {
            assert!((k[i] - k[293 - i]).abs() < 1e-15);
        }
    }

    #[test]
    fn small_sigma_approaches_impulse() {
        // Odd length puts a single tap at the exact center.
        let k = gaussian_lowpass_kernel(0.001, 295);
        assert!(k[147] > 0.99, "center mass {}", k[147]);
    }

    #[test]
    fn sum_normalized_preserves_dc() {
        let k = gaussian_lowpass_kernel(0.4, 294);
        let sum: f64 = k.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        // Convolving a constant signal with a sum-1 kernel leaves it
        // unchanged (interior samples).
        let signal = vec![0.7f64; 600];
        let mut out = 0.0;
        for (i, &kv) in k.iter().enumerate() {
            out += kv * signal[150 + i];
        }
        assert!((out - 0.7).abs() < 1e-6);
    }

    #[test]
    #[should_panic(expected = "sigma fraction")]
    fn rejects_non_positive_sigma_fraction() {
        let _ = gaussian_lowpass_kernel(0.0, 294);
    }
}
