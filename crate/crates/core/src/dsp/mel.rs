//! Mel scale and triangular filterbank construction.

use super::Spectrogram;
use crate::error::{Error, Result};

/// `mel = 2595 * log10(1 + f / 700)`.
pub fn hz_to_mel(f: f64) -> f64 {
    assert!(f >= 0.0, "hz_to_mel: negative frequency {}", f);
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    assert!(m >= 0.0, "mel_to_hz: negative mel {}", m);
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filters spaced uniformly in mel, peak-normalized to 1.
///
/// Filter `i` rises linearly (in Hz) from `grid[i]` to its center
/// `grid[i+1]` and falls to `grid[i+2]`, where `grid` holds `n_filters + 2`
/// points uniform in mel between `f_min` and `f_max`.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    /// Hz positions of the mel-uniform grid (`n_filters + 2` points).
    grid_hz: Vec<f64>,
    f_min: f64,
    f_max: f64,
    /// Sparse per-filter `(bin, weight)` rows sampled on the rfft bin grid.
    bin_weights: Vec<Vec<(usize, f32)>>,
    fft_size: usize,
    sample_rate: u32,
}

/// Builds a peak-1 triangular mel filterbank over rfft bins.
pub fn build_mel_filterbank(
    n_filters: usize,
    fft_size: usize,
    sample_rate: u32,
    f_min: f64,
    f_max: f64,
) -> Result<MelFilterbank> {
    if n_filters < 2 {
        return Err(Error::Config("mel filterbank needs at least 2 filters".into()));
    }
    let nyquist = sample_rate as f64 / 2.0;
    if f_max > nyquist {
        return Err(Error::Config(format!(
            "mel f_max {} exceeds Nyquist {}",
            f_max, nyquist
        )));
    }
    if f_min < 0.0 || f_min >= f_max {
        return Err(Error::Config("mel range requires 0 <= f_min < f_max".into()));
    }

    let mel_lo = hz_to_mel(f_min);
    let mel_hi = hz_to_mel(f_max);
    let grid_hz: Vec<f64> = (0..n_filters + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (n_filters + 1) as f64))
        .collect();

    let bank = MelFilterbank {
        grid_hz,
        f_min,
        f_max,
        bin_weights: Vec::new(),
        fft_size,
        sample_rate,
    };

    let bins = fft_size / 2 + 1;
    let bin_hz = sample_rate as f64 / fft_size as f64;
    let mut bin_weights = Vec::with_capacity(n_filters);
    for f in 0..n_filters {
        let mut row = Vec::new();
        for k in 0..bins {
            let w = bank.weight(f, k as f64 * bin_hz);
            if w > 0.0 {
                row.push((k, w as f32));
            }
        }
        bin_weights.push(row);
    }

    Ok(MelFilterbank { bin_weights, ..bank })
}

impl MelFilterbank {
    pub fn n_filters(&self) -> usize {
        self.grid_hz.len() - 2
    }

    pub fn f_min(&self) -> f64 {
        self.f_min
    }

    pub fn f_max(&self) -> f64 {
        self.f_max
    }

    pub fn fft_size(&self) -> usize {
        self.fft_size
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    /// Center frequency (triangle peak) of filter `i`, in Hz.
    pub fn center_hz(&self, i: usize) -> f64 {
        self.grid_hz[i + 1]
    }

    pub fn centers_hz(&self) -> Vec<f64> {
        (0..self.n_filters()).map(|i| self.center_hz(i)).collect()
    }

    /// Half-maximum width of triangle `i`: `(right_foot - left_foot) / 2`.
    pub fn fwhm_hz(&self, i: usize) -> f64 {
        (self.grid_hz[i + 2] - self.grid_hz[i]) / 2.0
    }

    /// Continuous triangle evaluation at an arbitrary frequency.
    pub fn weight(&self, filter: usize, hz: f64) -> f64 {
        let l = self.grid_hz[filter];
        let c = self.grid_hz[filter + 1];
        let r = self.grid_hz[filter + 2];
        if hz <= l || hz >= r {
            0.0
        } else if hz <= c {
            (hz - l) / (c - l)
        } else {
            (r - hz) / (r - c)
        }
    }

    /// Pools a power spectrogram through the filterbank:
    /// `[bins, frames] -> [n_filters, frames]` (row-major).
    pub fn apply(&self, spec: &Spectrogram) -> Vec<f32> {
        assert_eq!(
            spec.bins,
            self.fft_size / 2 + 1,
            "spectrogram bin count does not match filterbank fft size"
        );
        let frames = spec.frames;
        let mut out = vec![0.0f32; self.n_filters() * frames];
        for (f, row) in self.bin_weights.iter().enumerate() {
            let orow = &mut out[f * frames..(f + 1) * frames];
            for &(bin, w) in row {
                let srow = &spec.data[bin * frames..(bin + 1) * frames];
                for (o, &s) in orow.iter_mut().zip(srow.iter()) {
                    *o += w * s;
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn mel_of_zero_is_zero() {
        assert_eq!(hz_to_mel(0.0), 0.0);
    }

    #[test]
    fn mel_of_700_closed_form() {
        // 2595 * log10(2)
        assert_relative_eq!(hz_to_mel(700.0), 2595.0 * 2f64.log10(), epsilon = 1e-9);
        assert_relative_eq!(hz_to_mel(700.0), 781.17, epsilon = 0.01);
    }

    #[test]
    fn mel_hz_round_trip() {
        for x in [100.0, 1000.0, 22050.0] {
            assert_relative_eq!(mel_to_hz(hz_to_mel(x)), x, epsilon = 1e-9);
        }
    }

    #[test]
    fn mel_scale_strictly_monotone() {
        let mut prev = -1.0;
        for i in 0..1000 {
            let m = hz_to_mel(i as f64 * 22.05);
            assert!(m > prev);
            prev = m;
        }
    }

    #[test]
    fn centers_increase_within_range() {
        let fb = build_mel_filterbank(64, 512, 44100, 0.0, 22050.0).unwrap();
        let centers = fb.centers_hz();
        assert_eq!(centers.len(), 64);
        assert!(centers[0] > 0.0);
        assert!(*centers.last().unwrap() < 22050.0);
        for w in centers.windows(2) {
            assert!(w[0] < w[1]);
        }
    }

    #[test]
    fn partition_of_unity_on_interior_grid() {
        let fb = build_mel_filterbank(64, 512, 44100, 0.0, 22050.0).unwrap();
        // Any frequency between the first and last center is covered by
        // exactly two triangles summing to 1.
        let lo = fb.center_hz(0);
        let hi = fb.center_hz(63);
        for i in 0..=1000 {
            let hz = lo + (hi - lo) * i as f64 / 1000.0;
            let total: f64 = (0..64).map(|f| fb.weight(f, hz)).sum();
            assert_relative_eq!(total, 1.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn two_filter_degenerate_bank() {
        let fb = build_mel_filterbank(2, 512, 44100, 0.0, 22050.0).unwrap();
        assert_eq!(fb.n_filters(), 2);
        assert!(fb.center_hz(0) < fb.center_hz(1));
    }

    #[test]
    fn rejects_f_max_above_nyquist() {
        assert!(build_mel_filterbank(64, 512, 44100, 0.0, 23000.0).is_err());
    }
}
