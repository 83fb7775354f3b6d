//! Fixed mel-spectrogram frontend.

use super::{FeatureMap, F_MAX, F_MIN, N_CHANNELS};
use crate::dsp::{build_mel_filterbank, stft_power, FramingConfig, MelFilterbank, Waveform};
use crate::dsp::{CHUNK_SAMPLES, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

const FFT_SIZE: usize = 512;
const LOG_FLOOR: f64 = 1e-10;

/// STFT -> mel filterbank -> `ln(eps + x)`.
pub struct MelFrontend {
    bank: MelFilterbank,
    framing: FramingConfig,
    /// `Some(n)` enforces an exact input length (the 5 s pipeline
    /// contract); `None` accepts any length.
    expected_samples: Option<usize>,
}

impl MelFrontend {
    /// The standard configuration: strict 220500-sample inputs producing
    /// `[64, 1500]` maps.
    pub fn new() -> Result<Self> {
        Ok(MelFrontend {
            bank: build_mel_filterbank(N_CHANNELS, FFT_SIZE, SAMPLE_RATE, F_MIN, F_MAX)?,
            framing: FramingConfig::standard(),
            expected_samples: Some(CHUNK_SAMPLES),
        })
    }

    /// Accepts any input length (frame count follows `ceil(len / hop)`).
    pub fn relaxed() -> Result<Self> {
        Ok(MelFrontend { expected_samples: None, ..Self::new()? })
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.bank
    }

    pub fn forward<T: Scalar>(&self, w: &Waveform) -> Result<FeatureMap<T>> {
        if w.sample_rate() != SAMPLE_RATE {
            return Err(Error::Data(format!(
                "mel frontend expects {} Hz input, got {}",
                SAMPLE_RATE,
                w.sample_rate()
            )));
        }
        if let Some(n) = self.expected_samples {
            if w.len() != n {
                return Err(Error::Data(format!(
                    "mel frontend expects exactly {} samples, got {}",
                    n,
                    w.len()
                )));
            }
        }
        let spec = stft_power(w, &self.framing, FFT_SIZE)?;
        let pooled = self.bank.apply(&spec);
        let frames = spec.frames;
        let values: Vec<T> = pooled
            .iter()
            .map(|&x| T::of((LOG_FLOOR + x as f64).ln()))
            .collect();
        let tensor = Tensor::from_vec(&[self.bank.n_filters(), frames], values);
        Ok(FeatureMap::new(tensor, self.bank.centers_hz()))
    }
}
