//! Audio augmentation: colored noise at randomized SNR, impulse-response
//! convolution with delay compensation, and frequency masking.
//!
//! Two pipelines mirror the two dataset scales: an offline pipeline that
//! expands the training set on disk (mask -> white noise -> IR, ten
//! generations per chunk) and an online per-batch pipeline (colored noise
//! and IR, randomized per example).

mod ir;
mod mask;
mod noise;
mod offline;

pub use ir::apply_impulse_response;
pub use mask::frequency_mask;
pub use noise::add_colored_noise;
pub use offline::generate_offline;

use crate::dsp::{resample_to_44100, to_mono, Waveform};
use crate::error::{Error, Result};
use crate::rng::StreamFactory;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::path::Path;

/// Number of impulse responses the configured bank is expected to hold.
pub const EXPECTED_IR_COUNT: usize = 11;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AugmentMode {
    Offline,
    Online,
}

/// Augmentation parameters plus the loaded impulse-response bank.
#[derive(Debug, Clone)]
pub struct AugmentConfig {
    pub mode: AugmentMode,
    /// Probability of the noise stage (online); the offline pipeline applies
    /// noise to every file.
    pub noise_prob: f64,
    pub snr_range_db: (f64, f64),
    /// Spectral power decay exponent range (PSD proportional to
    /// `f^-decay`): 1 is pink-like, negative tilts upward.
    pub decay_range: (f64, f64),
    pub ir_prob: f64,
    pub ir_bank: Vec<Waveform>,
    pub mask_prob: f64,
    /// Masked bandwidth as a fraction of Nyquist.
    pub mask_bw_range: (f64, f64),
    pub offline_generations: usize,
}

impl AugmentConfig {
    /// The small-corpus offline pipeline: mask 50% at 0.06-0.22 bandwidth,
    /// white noise on every file at 25-80 dB SNR, IR 70%, ten generations.
    pub fn offline_defaults() -> Self {
        AugmentConfig {
            mode: AugmentMode::Offline,
            noise_prob: 1.0,
            snr_range_db: (25.0, 80.0),
            decay_range: (0.0, 0.0),
            ir_prob: 0.7,
            ir_bank: Vec::new(),
            mask_prob: 0.5,
            mask_bw_range: (0.06, 0.22),
            offline_generations: 10,
        }
    }

    /// The large-corpus online pipeline: colored noise (decay -2..1.5) at
    /// 25-40 dB SNR with 90% probability, IR 70%.
    pub fn online_defaults() -> Self {
        AugmentConfig {
            mode: AugmentMode::Online,
            noise_prob: 0.9,
            snr_range_db: (25.0, 40.0),
            decay_range: (-2.0, 1.5),
            ir_prob: 0.7,
            ir_bank: Vec::new(),
            mask_prob: 0.0,
            mask_bw_range: (0.06, 0.22),
            offline_generations: 0,
        }
    }

    /// Disables every stage (probability zero everywhere).
    pub fn disabled() -> Self {
        AugmentConfig {
            noise_prob: 0.0,
            ir_prob: 0.0,
            mask_prob: 0.0,
            ..Self::online_defaults()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("noise_prob", self.noise_prob),
            ("ir_prob", self.ir_prob),
            ("mask_prob", self.mask_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{} must be in [0, 1], got {}", name, p)));
            }
        }
        if self.snr_range_db.0 > self.snr_range_db.1 {
            return Err(Error::Config("snr range low > high".into()));
        }
        if self.decay_range.0 > self.decay_range.1 {
            return Err(Error::Config("decay range low > high".into()));
        }
        if self.mask_bw_range.0 < 0.01 && self.mask_prob > 0.0 {
            return Err(Error::Config("mask bandwidth floor is 0.01".into()));
        }
        Ok(())
    }
}

/// Loads and normalizes an impulse-response bank from a directory of WAVs
/// (any rate >= 44.1 kHz; resampled on load). A bank smaller than the
/// expected eleven is a warning, not an error.
pub fn load_ir_bank(dir: &Path) -> Result<Vec<Waveform>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .map(|e| e.eq_ignore_ascii_case("wav"))
                .unwrap_or(false)
        })
        .collect();
    paths.sort();
    let mut bank = Vec::new();
    for p in paths {
        let decoded = crate::dataset::read_wav(&p)?;
        let mono = to_mono(&decoded.channels, decoded.sample_rate)?;
        bank.push(resample_to_44100(&mono)?);
    }
    if bank.len() != EXPECTED_IR_COUNT {
        log::warn!(
            "impulse-response bank at {} holds {} files, expected {}",
            dir.display(),
            bank.len(),
            EXPECTED_IR_COUNT
        );
    }
    Ok(bank)
}

/// What the per-example pipeline actually applied.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AugmentOutcome {
    pub noise: bool,
    pub ir: bool,
    pub mask: bool,
    pub rescaled: bool,
}

/// Scales the example back to peak 0.999 if augmentation pushed any sample
/// beyond full scale.
pub fn peak_safety(w: Waveform) -> (Waveform, bool) {
    let peak = w.samples().iter().fold(0.0f32, |m, &s| m.max(s.abs()));
    if peak <= 1.0 {
        return (w, false);
    }
    log::info!("augmented example peaked at {:.3}; rescaling to 0.999", peak);
    let scale = 0.999 / peak;
    let samples = w.samples().iter().map(|&s| s * scale).collect();
    (
        Waveform::new(samples, w.sample_rate()).expect("rescale keeps samples finite"),
        true,
    )
}

/// The online per-example chain: noise with `noise_prob`, then an IR drawn
/// from the bank with `ir_prob` at a uniform random mix.
pub fn augment_example(
    w: &Waveform,
    cfg: &AugmentConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(Waveform, AugmentOutcome)> {
    let mut out = w.clone();
    let mut outcome = AugmentOutcome::default();

    if cfg.noise_prob > 0.0 && rng.gen::<f64>() < cfg.noise_prob {
        let snr = rng.gen_range(cfg.snr_range_db.0..=cfg.snr_range_db.1);
        let decay = rng.gen_range(cfg.decay_range.0..=cfg.decay_range.1);
        out = add_colored_noise(&out, snr, decay, rng)?;
        outcome.noise = true;
    }
    if cfg.ir_prob > 0.0 && !cfg.ir_bank.is_empty() && rng.gen::<f64>() < cfg.ir_prob {
        let idx = rng.gen_range(0..cfg.ir_bank.len());
        let mix = rng.gen::<f64>();
        out = apply_impulse_response(&out, &cfg.ir_bank[idx], mix)?;
        outcome.ir = true;
    }

    let (out, rescaled) = peak_safety(out);
    outcome.rescaled = rescaled;
    Ok((out, outcome))
}

/// Augments a batch with one independent stream per example
/// (`stream index = base + example index`), so results are reproducible
/// regardless of evaluation order.
pub fn augment_batch(
    batch: &[Waveform],
    cfg: &AugmentConfig,
    streams: &StreamFactory,
    base: u64,
) -> Result<Vec<Waveform>> {
    cfg.validate()?;
    batch
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let mut rng = streams.stream("augment", base + i as u64);
            augment_example(w, cfg, &mut rng).map(|(out, _)| out)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, n: usize) -> Waveform {
        let samples: Vec<f32> = (0..n)
            .map(|i| (std::f64::consts::TAU * freq * i as f64 / 44100.0).sin() as f32 * 0.5)
            .collect();
        Waveform::new(samples, 44100).unwrap()
    }

    #[test]
    fn all_probabilities_zero_is_identity() {
        let cfg = AugmentConfig::disabled();
        let streams = StreamFactory::new(3);
        let batch = vec![tone(1000.0, 4096), tone(2000.0, 4096)];
        let out = augment_batch(&batch, &cfg, &streams, 0).unwrap();
        for (a, b) in out.iter().zip(batch.iter()) {
            assert_eq!(a.samples(), b.samples());
        }
    }

    #[test]
    fn same_seed_bit_identical() {
        let mut cfg = AugmentConfig::online_defaults();
        cfg.ir_bank = vec![tone(800.0, 512)];
        let streams = StreamFactory::new(17);
        let batch = vec![tone(1000.0, 8192), tone(3000.0, 8192), tone(9000.0, 8192)];
        let a = augment_batch(&batch, &cfg, &streams, 100).unwrap();
        let b = augment_batch(&batch, &cfg, &streams, 100).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            let xb: Vec<u32> = x.samples().iter().map(|s| s.to_bits()).collect();
            let yb: Vec<u32> = y.samples().iter().map(|s| s.to_bits()).collect();
            assert_eq!(xb, yb);
        }
    }

    #[test]
    fn application_rates_approach_probabilities() {
        let mut cfg = AugmentConfig::online_defaults();
        cfg.ir_bank = vec![tone(500.0, 64)];
        let streams = StreamFactory::new(23);
        let w = tone(2000.0, 256);
        let trials = 10_000;
        let mut noise = 0usize;
        let mut ir = 0usize;
        for i in 0..trials {
            let mut rng = streams.stream("augment", i as u64);
            let (_, outcome) = augment_example(&w, &cfg, &mut rng).unwrap();
            noise += outcome.noise as usize;
            ir += outcome.ir as usize;
        }
        let noise_rate = noise as f64 / trials as f64;
        let ir_rate = ir as f64 / trials as f64;
        assert!((noise_rate - 0.9).abs() < 0.02, "noise rate {}", noise_rate);
        assert!((ir_rate - 0.7).abs() < 0.02, "ir rate {}", ir_rate);
    }

    #[test]
    fn peak_safety_rescales_only_clipped() {
        let quiet = Waveform::new(vec![0.5, -0.5], 44100).unwrap();
        let (same, rescaled) = peak_safety(quiet.clone());
        assert!(!rescaled);
        assert_eq!(same.samples(), quiet.samples());

        let loud = Waveform::new(vec![1.5, -0.75], 44100).unwrap();
        let (fixed, rescaled) = peak_safety(loud);
        assert!(rescaled);
        assert!((fixed.samples()[0] - 0.999).abs() < 1e-6);
    }

    #[test]
    fn invalid_config_rejected() {
        let mut cfg = AugmentConfig::online_defaults();
        cfg.noise_prob = 1.5;
        assert!(cfg.validate().is_err());
        let mut cfg = AugmentConfig::online_defaults();
        cfg.snr_range_db = (40.0, 25.0);
        assert!(cfg.validate().is_err());
    }
}
