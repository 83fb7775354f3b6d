//! Offline training-set expansion: write augmented copies of every
//! training chunk to disk.

use super::{add_colored_noise, apply_impulse_response, frequency_mask, peak_safety, AugmentConfig};
use crate::dataset::{write_wav_f32, AudioStore, DatasetManifest, Split};
use crate::error::{Error, Result};
use crate::rng::StreamFactory;
use rand::Rng;
use std::path::{Path, PathBuf};

/// Runs the offline pipeline (frequency mask at `mask_prob`, noise always,
/// impulse response at `ir_prob`, then peak safety) `offline_generations`
/// times per training chunk. Filenames encode chunk identity, generation
/// index and master seed; regeneration with the same seed is byte-identical.
pub fn generate_offline(
    manifest: &DatasetManifest,
    store: &AudioStore,
    cfg: &AugmentConfig,
    out_dir: &Path,
    streams: &StreamFactory,
) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    if cfg.offline_generations == 0 {
        return Err(Error::Config("offline_generations must be positive".into()));
    }
    std::fs::create_dir_all(out_dir)
        .map_err(|e| Error::Data(format!("cannot create {}: {}", out_dir.display(), e)))?;

    let mut written = Vec::new();
    let mut chunk_counter = 0u64;
    for entry in manifest.entries_in(Split::Train) {
        for (ci, chunk) in entry.chunks.iter().enumerate() {
            let base = store.load_chunk(entry, chunk)?;
            for gen in 0..cfg.offline_generations {
                let mut rng = streams.stream("offline", chunk_counter * 1024 + gen as u64);
                let mut out = base.clone();
                if cfg.mask_prob > 0.0 && rng.gen::<f64>() < cfg.mask_prob {
                    let bw = rng.gen_range(cfg.mask_bw_range.0..=cfg.mask_bw_range.1);
                    out = frequency_mask(&out, bw, &mut rng)?;
                }
                if cfg.noise_prob > 0.0 && rng.gen::<f64>() < cfg.noise_prob {
                    let snr = rng.gen_range(cfg.snr_range_db.0..=cfg.snr_range_db.1);
                    let decay = if cfg.decay_range.0 == cfg.decay_range.1 {
                        cfg.decay_range.0
                    } else {
                        rng.gen_range(cfg.decay_range.0..=cfg.decay_range.1)
                    };
                    out = add_colored_noise(&out, snr, decay, &mut rng)?;
                }
                if cfg.ir_prob > 0.0 && !cfg.ir_bank.is_empty() && rng.gen::<f64>() < cfg.ir_prob {
                    let idx = rng.gen_range(0..cfg.ir_bank.len());
                    let mix = rng.gen::<f64>();
                    out = apply_impulse_response(&out, &cfg.ir_bank[idx], mix)?;
                }
                let (out, _) = peak_safety(out);

                let safe_id = entry.id.replace(['/', '\\'], "_");
                let name = format!(
                    "{}_c{:03}_aug{}_seed{}.wav",
                    safe_id,
                    ci,
                    gen,
                    streams.master_seed()
                );
                let path = out_dir.join(name);
                write_wav_f32(&path, &out)?;
                written.push(path);
            }
            chunk_counter += 1;
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{
        assign_splits, ingest, read_wav, IngestOptions, SplitScheme,
    };
    use crate::dsp::{Waveform, CHUNK_SAMPLES};

    fn fixture_corpus(dir: &Path) {
        std::fs::create_dir(dir.join("sp")).unwrap();
        for (i, dur) in [5.0f64, 5.0, 5.0].iter().enumerate() {
            let n = (44100.0 * dur) as usize;
            let samples: Vec<f32> = (0..n)
                .map(|j| {
                    (std::f64::consts::TAU * (1000.0 + 500.0 * i as f64) * j as f64 / 44100.0)
                        .sin() as f32
                        * 0.4
                })
                .collect();
            write_wav_f32(
                &dir.join(format!("sp/r{}.wav", i)),
                &Waveform::new(samples, 44100).unwrap(),
            )
            .unwrap();
        }
    }

    #[test]
    fn three_chunks_ten_generations_thirty_files() {
        let dir = tempfile::tempdir().unwrap();
        fixture_corpus(dir.path());
        let (mut manifest, _) = ingest(dir.path(), &IngestOptions::default()).unwrap();
        manifest.compute_chunks();
        // All three files to train for this fixture.
        for e in &mut manifest.entries {
            e.split = Split::Train;
        }
        let _ = assign_splits; // pattern split unused in this fixture
        let _ = SplitScheme::Pattern;

        let store = AudioStore::new(dir.path());
        let mut cfg = AugmentConfig::offline_defaults();
        cfg.ir_bank = vec![Waveform::new(vec![1.0, 0.2, 0.04], 44100).unwrap()];
        let out_dir = dir.path().join("aug");
        let streams = StreamFactory::new(42);
        let files = generate_offline(&manifest, &store, &cfg, &out_dir, &streams).unwrap();
        assert_eq!(files.len(), 30);

        // Every output is exactly 5 s mono at 44.1 kHz.
        for f in &files {
            let d = read_wav(f).unwrap();
            assert_eq!(d.sample_rate, 44100);
            assert_eq!(d.channels.len(), 1);
            assert_eq!(d.channels[0].len(), CHUNK_SAMPLES);
        }
        assert!(files[0].to_string_lossy().contains("_aug0_seed42"));
    }

    #[test]
    fn regeneration_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        fixture_corpus(dir.path());
        let (mut manifest, _) = ingest(dir.path(), &IngestOptions::default()).unwrap();
        manifest.compute_chunks();
        for e in &mut manifest.entries {
            e.split = Split::Train;
        }
        let store = AudioStore::new(dir.path());
        let mut cfg = AugmentConfig::offline_defaults();
        cfg.offline_generations = 2;
        cfg.ir_bank = vec![Waveform::new(vec![1.0, 0.3], 44100).unwrap()];
        let streams = StreamFactory::new(7);

        let d1 = dir.path().join("a1");
        let d2 = dir.path().join("a2");
        let f1 = generate_offline(&manifest, &store, &cfg, &d1, &streams).unwrap();
        let f2 = generate_offline(&manifest, &store, &cfg, &d2, &streams).unwrap();
        assert_eq!(f1.len(), f2.len());
        for (a, b) in f1.iter().zip(f2.iter()) {
            assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
        }
    }
}
