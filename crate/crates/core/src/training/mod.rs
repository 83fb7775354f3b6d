//! Training loop with per-epoch validation, early stopping (save on strict
//! validation-loss improvement, stop after a fixed number of non-improving
//! epochs, restore the best state) and checkpointing.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta};

use crate::augment::{augment_batch, AugmentConfig};
use crate::backend::{build_model, Model, ModelConfig};
use crate::dataset::{AudioStore, DatasetManifest, Split};
use crate::error::{Error, Result};
use crate::frontend::{leaf_init, Frontend, FrontendKind, LeafFrontend, LeafParams, F_MAX, F_MIN, N_CHANNELS};
use crate::rng::StreamFactory;
use crate::tensor::{softmax_cross_entropy, Adam, AdamConfig, Mode, Tensor};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::Path;
use std::time::Instant;

/// Serializable augmentation settings (the runtime `AugmentConfig` holds
/// the loaded impulse-response bank and is resolved from these).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentSettings {
    pub enabled: bool,
    /// `true`: per-batch online pipeline; `false`: offline generation
    /// defaults.
    pub online: bool,
    pub noise_prob: f64,
    pub snr_range_db: (f64, f64),
    pub decay_range: (f64, f64),
    pub ir_prob: f64,
    pub mask_prob: f64,
    pub mask_bw_range: (f64, f64),
    pub offline_generations: usize,
    /// Directory of impulse-response WAVs; empty bank disables the IR stage.
    pub ir_dir: Option<String>,
}

impl Default for AugmentSettings {
    fn default() -> Self {
        let base = AugmentConfig::online_defaults();
        AugmentSettings {
            enabled: false,
            online: true,
            noise_prob: base.noise_prob,
            snr_range_db: base.snr_range_db,
            decay_range: base.decay_range,
            ir_prob: base.ir_prob,
            mask_prob: base.mask_prob,
            mask_bw_range: base.mask_bw_range,
            offline_generations: 10,
            ir_dir: None,
        }
    }
}

impl AugmentSettings {
    pub fn resolve(&self) -> Result<AugmentConfig> {
        let mut cfg = if self.online {
            AugmentConfig::online_defaults()
        } else {
            AugmentConfig::offline_defaults()
        };
        cfg.noise_prob = self.noise_prob;
        cfg.snr_range_db = self.snr_range_db;
        cfg.decay_range = self.decay_range;
        cfg.ir_prob = self.ir_prob;
        cfg.mask_prob = self.mask_prob;
        cfg.mask_bw_range = self.mask_bw_range;
        cfg.offline_generations = self.offline_generations;
        if let Some(dir) = &self.ir_dir {
            cfg.ir_bank = crate::augment::load_ir_bank(Path::new(dir))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Run configuration; the checkpoint stores a snapshot of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub lr: f64,
    pub l2_lambda: f64,
    pub dropout: f64,
    pub frontend: FrontendKind,
    pub n_conv_layers: usize,
    pub seed: u64,
    pub augment: AugmentSettings,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::defaults(FrontendKind::Mel)
    }
}

impl TrainConfig {
    pub fn defaults(frontend: FrontendKind) -> Self {
        TrainConfig {
            batch_size: 14,
            max_epochs: 200,
            patience: 8,
            lr: 1e-3,
            l2_lambda: 1e-3,
            dropout: 0.4,
            frontend,
            n_conv_layers: 4,
            seed: 0,
            augment: AugmentSettings::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if self.patience < 1 {
            return Err(Error::Config("patience must be >= 1".into()));
        }
        if self.max_epochs < 1 {
            return Err(Error::Config("max epochs must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must be in [0, 1)".into()));
        }
        if !(self.n_conv_layers == 4 || self.n_conv_layers == 5) {
            return Err(Error::Config("n_conv_layers must be 4 or 5".into()));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            l2: self.l2_lambda,
            ..AdamConfig::default()
        }
    }
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub seconds: f64,
}

/// `epoch,train_loss,val_loss,val_acc,seconds` CSV.
pub fn write_epoch_csv(epochs: &[EpochLog], path: &Path) -> Result<()> {
    let mut out = String::from("epoch,train_loss,val_loss,val_acc,seconds\n");
    for e in epochs {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{:.3}\n",
            e.epoch, e.train_loss, e.val_loss, e.val_acc, e.seconds
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    /// Strictly lower validation loss: save this state.
    Improved,
    Continue,
    /// `patience` consecutive epochs without improvement.
    Stop,
}

/// Early-stopping bookkeeping: strictly-lower-is-better, fixed patience.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<(usize, f64)>,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping { patience, best: None, stale: 0 }
    }

    /// Seeds the tracker from a resumed checkpoint.
    pub fn prime(&mut self, best_epoch: usize, best_loss: f64) {
        self.best = Some((best_epoch, best_loss));
        self.stale = 0;
    }

    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> StopDecision {
        match self.best {
            Some((_, best)) if val_loss >= best => {
                self.stale += 1;
                if self.stale >= self.patience {
                    StopDecision::Stop
                } else {
                    StopDecision::Continue
                }
            }
            _ => {
                self.best = Some((epoch, val_loss));
                self.stale = 0;
                StopDecision::Improved
            }
        }
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best.map(|(e, _)| e)
    }

    pub fn best_loss(&self) -> Option<f64> {
        self.best.map(|(_, l)| l)
    }
}

#[derive(Debug)]
pub struct TrainOutput {
    /// State of the best-validation epoch.
    pub best: Checkpoint,
    pub epochs: Vec<EpochLog>,
    pub stopped_early: bool,
}

struct Trainer {
    cfg: TrainConfig,
    labels: Vec<String>,
    label_index: HashMap<String, usize>,
    frontend: Frontend<f32>,
    model: Model<f32>,
    /// Optimized tensors: trainable frontend groups then model parameters.
    params: Vec<(String, Tensor<f32>)>,
    adam: Adam<f32>,
    streams: StreamFactory,
    augment: Option<AugmentConfig>,
}

impl Trainer {
    fn new(cfg: &TrainConfig, manifest: &DatasetManifest) -> Result<Self> {
        cfg.validate()?;
        let labels = manifest.labels();
        if labels.len() < 2 {
            return Err(Error::Data("need at least two classes to train".into()));
        }
        let label_index: HashMap<String, usize> =
            labels.iter().enumerate().map(|(i, l)| (l.clone(), i)).collect();
        let streams = StreamFactory::new(cfg.seed);

        let frontend = Frontend::<f32>::build(cfg.frontend)?;
        let mcfg = ModelConfig::new(cfg.n_conv_layers, cfg.dropout, labels.len())?;
        let model = build_model(&mcfg, &mut streams.stream("init", 0))?;

        let mut params: Vec<(String, Tensor<f32>)> = Vec::new();
        if let Frontend::Leaf(leaf) = &frontend {
            for (name, t) in leaf.named_params() {
                if t.requires_grad() {
                    params.push((name, t));
                }
            }
        }
        params.extend(model.named_params());

        let tensors: Vec<Tensor<f32>> = params.iter().map(|(_, t)| t.clone()).collect();
        let adam = Adam::new(&tensors, cfg.adam());
        let augment = if cfg.augment.enabled {
            Some(cfg.augment.resolve()?)
        } else {
            None
        };
        Ok(Trainer {
            cfg: cfg.clone(),
            labels,
            label_index,
            frontend,
            model,
            params,
            adam,
            streams,
            augment,
        })
    }

    fn param_tensors(&self) -> Vec<Tensor<f32>> {
        self.params.iter().map(|(_, t)| t.clone()).collect()
    }

    /// Deep-copies the current state into a checkpoint.
    fn snapshot(&self, epoch: usize, val_loss: f64, val_acc: f64, next_epoch: usize) -> Checkpoint {
        let mut tensors: Vec<(String, Vec<usize>, Vec<f32>)> = Vec::new();
        if let Frontend::Leaf(leaf) = &self.frontend {
            for (name, t) in leaf.named_params() {
                tensors.push((name, t.shape().to_vec(), t.to_vec()));
            }
        }
        for (name, t) in self.model.named_params() {
            tensors.push((name, t.shape().to_vec(), t.to_vec()));
        }
        for (name, values) in self.model.named_buffers() {
            let n = values.len();
            tensors.push((name, vec![n], values));
        }
        for ((name, _), state) in self.params.iter().zip(self.adam.states()) {
            tensors.push((format!("adam.m.{}", name), vec![state.m.len()], state.m.clone()));
            tensors.push((format!("adam.v.{}", name), vec![state.v.len()], state.v.clone()));
        }
        Checkpoint {
            meta: CheckpointMeta {
                config: self.cfg.clone(),
                labels: self.labels.clone(),
                epoch,
                best_val_loss: val_loss,
                best_val_acc: val_acc,
                rng_seed: self.cfg.seed,
                next_epoch,
                adam_step: self.adam.step_count(),
                leaf_epsilon: 1e-6,
            },
            tensors,
        }
    }

    /// Restores parameter values, batchnorm buffers and optimizer moments
    /// from a checkpoint produced by a compatible configuration.
    fn restore(&mut self, ckpt: &Checkpoint) -> Result<()> {
        if ckpt.meta.labels != self.labels {
            return Err(Error::Label(format!(
                "checkpoint has {} labels, manifest has {}",
                ckpt.meta.labels.len(),
                self.labels.len()
            )));
        }
        let mut all: Vec<(String, Tensor<f32>)> = Vec::new();
        if let Frontend::Leaf(leaf) = &self.frontend {
            all.extend(leaf.named_params());
        }
        all.extend(self.model.named_params());
        for (name, tensor) in &all {
            let (shape, values) = ckpt
                .tensor(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {}", name)))?;
            if shape != tensor.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {} has shape {:?} in checkpoint but {:?} in model",
                    name,
                    shape,
                    tensor.shape()
                )));
            }
            tensor.values_mut().copy_from_slice(values);
        }
        for (name, _) in self.model.named_buffers() {
            let (_, values) = ckpt
                .tensor(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing buffer {}", name)))?;
            self.model.set_buffer(&name, values.to_vec())?;
        }
        let mut states = Vec::with_capacity(self.params.len());
        for (name, _) in &self.params {
            let m = ckpt
                .tensor(&format!("adam.m.{}", name))
                .ok_or_else(|| Error::Checkpoint(format!("missing optimizer moment for {}", name)))?
                .1
                .to_vec();
            let v = ckpt.tensor(&format!("adam.v.{}", name)).unwrap().1.to_vec();
            states.push(crate::tensor::AdamState { m, v });
        }
        self.adam.restore(states, ckpt.meta.adam_step);
        Ok(())
    }

    fn batch_tensors(
        &self,
        refs: &[(usize, usize)],
        manifest: &DatasetManifest,
        store: &AudioStore,
        augment_base: Option<u64>,
    ) -> Result<(Tensor<f32>, Vec<usize>)> {
        let mut waves = Vec::with_capacity(refs.len());
        let mut labels = Vec::with_capacity(refs.len());
        for &(ei, ci) in refs {
            let entry = &manifest.entries[ei];
            waves.push(store.load_chunk(entry, &entry.chunks[ci])?);
            labels.push(self.label_index[&entry.label]);
        }
        if let (Some(base), Some(acfg)) = (augment_base, self.augment.as_ref()) {
            waves = augment_batch(&waves, acfg, &self.streams, base)?;
        }
        let maps: Result<Vec<Tensor<f32>>> = waves
            .iter()
            .map(|w| self.frontend.forward(w).map(|m| m.values().clone()))
            .collect();
        let maps = maps?;
        let stacked = Tensor::stack(&maps);
        let (b, c, f) = (stacked.shape()[0], stacked.shape()[1], stacked.shape()[2]);
        Ok((stacked.reshape(&[b, 1, c, f]), labels))
    }
}

/// Mean loss and chunk-level accuracy over one subset, eval mode, no
/// augmentation, no parameter mutation.
pub fn validate(
    model: &Model<f32>,
    frontend: &Frontend<f32>,
    manifest: &DatasetManifest,
    store: &AudioStore,
    split: Split,
    batch_size: usize,
) -> Result<(f64, f64)> {
    let refs = manifest.chunk_refs(split);
    if refs.is_empty() {
        return Err(Error::Data(format!("no chunks in {:?} split", split)));
    }
    let labels = manifest.labels();
    let label_index: HashMap<String, usize> =
        labels.iter().enumerate().map(|(i, l)| (l.clone(), i)).collect();
    let mut rng = StreamFactory::new(0).stream("eval-unused", 0);

    let mut loss_sum = 0.0f64;
    let mut correct = 0usize;
    for batch in refs.chunks(batch_size.max(1)) {
        let mut maps = Vec::with_capacity(batch.len());
        let mut batch_labels = Vec::with_capacity(batch.len());
        for &(ei, ci) in batch {
            let entry = &manifest.entries[ei];
            let w = store.load_chunk(entry, &entry.chunks[ci])?;
            maps.push(frontend.forward(&w)?.values().clone());
            batch_labels.push(label_index[&entry.label]);
        }
        let stacked = Tensor::stack(&maps);
        let (b, c, f) = (stacked.shape()[0], stacked.shape()[1], stacked.shape()[2]);
        let x = stacked.reshape(&[b, 1, c, f]);
        let logits = model.forward(&x, Mode::Eval, &mut rng)?;
        let loss = softmax_cross_entropy(&logits, &batch_labels);
        loss_sum += loss.item() as f64 * batch.len() as f64;
        correct += count_correct(&logits, &batch_labels);
    }
    Ok((loss_sum / refs.len() as f64, correct as f64 / refs.len() as f64))
}

fn count_correct(logits: &Tensor<f32>, labels: &[usize]) -> usize {
    let (b, c) = (logits.shape()[0], logits.shape()[1]);
    let v = logits.values();
    let mut correct = 0;
    for (bi, &label) in labels.iter().enumerate().take(b) {
        let row = &v[bi * c..(bi + 1) * c];
        let argmax = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        if argmax == label {
            correct += 1;
        }
    }
    correct
}

/// Runs the full training protocol and returns the best checkpoint plus
/// the epoch log. With `resume`, continues from the checkpoint's next
/// epoch under the current config's epoch budget.
pub fn train(
    cfg: &TrainConfig,
    manifest: &DatasetManifest,
    store: &AudioStore,
    resume: Option<&Checkpoint>,
) -> Result<TrainOutput> {
    let mut trainer = Trainer::new(cfg, manifest)?;
    let train_refs = manifest.chunk_refs(Split::Train);
    if train_refs.is_empty() {
        return Err(Error::Data("empty train split".into()));
    }
    if manifest.chunk_refs(Split::Val).is_empty() {
        return Err(Error::Data("empty val split".into()));
    }

    let mut early = EarlyStopping::new(cfg.patience);
    let mut start_epoch = 1usize;
    let mut best: Option<Checkpoint> = None;
    if let Some(ckpt) = resume {
        trainer.restore(ckpt)?;
        early.prime(ckpt.meta.epoch, ckpt.meta.best_val_loss);
        start_epoch = ckpt.meta.next_epoch;
        best = Some(ckpt.clone());
    }

    let mut epochs: Vec<EpochLog> = Vec::new();
    let mut stopped_early = false;
    let mut global_step = trainer.adam.step_count();

    for epoch in start_epoch..=cfg.max_epochs {
        let t0 = Instant::now();
        let mut order = train_refs.clone();
        shuffle(&mut order, &mut trainer.streams.stream("shuffle", epoch as u64));

        let mut loss_sum = 0.0f64;
        let mut correct = 0usize;
        let mut example_base = 0u64;
        for batch in order.chunks(cfg.batch_size) {
            let augment_base = trainer
                .augment
                .as_ref()
                .map(|_| (epoch as u64) * 10_000_000 + example_base);
            let (x, labels) = trainer.batch_tensors(batch, manifest, store, augment_base)?;
            let mut drop_rng = trainer.streams.stream("dropout", global_step);
            let logits = trainer.model.forward(&x, Mode::Train, &mut drop_rng)?;
            let loss = trainer.model.loss(&logits, &labels);
            let loss_value = loss.item() as f64;
            if !loss_value.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite training loss at epoch {} step {}",
                    epoch, global_step
                )));
            }
            let tensors = trainer.param_tensors();
            for p in &tensors {
                p.zero_grad();
            }
            loss.backward();
            trainer.adam.step(&tensors);
            trainer.frontend.clamp_params();

            loss_sum += loss_value * labels.len() as f64;
            correct += count_correct(&logits, &labels);
            global_step += 1;
            example_base += batch.len() as u64;
        }

        let (val_loss, val_acc) = validate(
            &trainer.model,
            &trainer.frontend,
            manifest,
            store,
            Split::Val,
            cfg.batch_size,
        )?;
        let n_train = order.len() as f64;
        epochs.push(EpochLog {
            epoch,
            train_loss: loss_sum / n_train,
            train_acc: correct as f64 / n_train,
            val_loss,
            val_acc,
            seconds: t0.elapsed().as_secs_f64(),
        });

        match early.observe(epoch, val_loss) {
            StopDecision::Improved => {
                best = Some(trainer.snapshot(epoch, val_loss, val_acc, epoch + 1));
            }
            StopDecision::Continue => {}
            StopDecision::Stop => {
                stopped_early = true;
                break;
            }
        }
    }

    let best = best.expect("at least one epoch ran, so a best checkpoint exists");
    Ok(TrainOutput { best, epochs, stopped_early })
}

/// Fisher-Yates with an explicit stream.
fn shuffle<T>(items: &mut [T], rng: &mut rand_chacha::ChaCha8Rng) {
    use rand::Rng;
    for i in (1..items.len()).rev() {
        let j = rng.gen_range(0..=i);
        items.swap(i, j);
    }
}

/// Rebuilds the model and frontend a checkpoint describes (for evaluation
/// or analysis).
pub fn restore_model_and_frontend(ckpt: &Checkpoint) -> Result<(Model<f32>, Frontend<f32>)> {
    let cfg = &ckpt.meta.config;
    let mcfg = ModelConfig::new(cfg.n_conv_layers, cfg.dropout, ckpt.n_classes())?;
    let streams = StreamFactory::new(ckpt.meta.rng_seed);
    let model = build_model::<f32>(&mcfg, &mut streams.stream("init", 0))?;

    for (name, tensor) in model.named_params() {
        let (shape, values) = ckpt
            .tensor(&name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {}", name)))?;
        if shape != tensor.shape() {
            return Err(Error::Checkpoint(format!(
                "tensor {} has shape {:?} in checkpoint but {:?} in model",
                name,
                shape,
                tensor.shape()
            )));
        }
        tensor.values_mut().copy_from_slice(values);
    }
    for (name, _) in model.named_buffers() {
        let values = ckpt
            .tensor(&name)
            .ok_or_else(|| Error::Checkpoint(format!("missing buffer {}", name)))?
            .1
            .to_vec();
        model.set_buffer(&name, values)?;
    }

    let frontend = match cfg.frontend {
        FrontendKind::Mel => Frontend::Mel(crate::frontend::MelFrontend::new()?),
        kind => {
            let params = leaf_params_from_checkpoint(ckpt, kind)?;
            Frontend::Leaf(LeafFrontend::from_params(&params)?)
        }
    };
    Ok((model, frontend))
}

/// Reads the frontend parameter tensors out of a checkpoint.
pub fn leaf_params_from_checkpoint(ckpt: &Checkpoint, kind: FrontendKind) -> Result<LeafParams> {
    let grab = |name: &str| -> Result<Vec<f32>> {
        Ok(ckpt
            .tensor(&format!("frontend.{}", name))
            .ok_or_else(|| Error::Mode(format!("checkpoint has no learnable frontend ({} missing)", name)))?
            .1
            .to_vec())
    };
    let mut params = leaf_init(N_CHANNELS, F_MIN, F_MAX);
    params.center_freqs = grab("center_freqs")?;
    params.kernel_sigmas = grab("kernel_sigmas")?;
    params.pool_sigmas = grab("pool_sigmas")?;
    params.pcen_alpha = grab("pcen_alpha")?;
    params.pcen_delta = grab("pcen_delta")?;
    params.pcen_root = grab("pcen_root")?;
    params.pcen_smooth = grab("pcen_smooth")?;
    params.epsilon = ckpt.meta.leaf_epsilon;
    params.set_ablation(kind);
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{assign_splits, ingest, write_wav_f32, IngestOptions, SplitScheme};
    use crate::dsp::Waveform;
    use std::path::Path;

    #[test]
    fn early_stopping_follows_scripted_sequence() {
        // val losses: 1.0, 0.9, then eight epochs >= 0.9
        let mut es = EarlyStopping::new(8);
        assert_eq!(es.observe(1, 1.0), StopDecision::Improved);
        assert_eq!(es.observe(2, 0.9), StopDecision::Improved);
        for epoch in 3..=9 {
            assert_eq!(es.observe(epoch, 0.9), StopDecision::Continue, "epoch {}", epoch);
        }
        assert_eq!(es.observe(10, 0.95), StopDecision::Stop);
        assert_eq!(es.best_epoch(), Some(2));
    }

    #[test]
    fn strictly_decreasing_never_stops() {
        let mut es = EarlyStopping::new(8);
        for epoch in 1..=50 {
            let loss = 1.0 / epoch as f64;
            assert_eq!(es.observe(epoch, loss), StopDecision::Improved);
        }
        assert_eq!(es.best_epoch(), Some(50));
    }

    #[test]
    fn equal_loss_is_not_improvement() {
        let mut es = EarlyStopping::new(2);
        assert_eq!(es.observe(1, 0.5), StopDecision::Improved);
        assert_eq!(es.observe(2, 0.5), StopDecision::Continue);
        assert_eq!(es.observe(3, 0.5), StopDecision::Stop);
        assert_eq!(es.best_epoch(), Some(1));
    }

    #[test]
    fn stop_epoch_minus_patience_is_best_epoch() {
        for patience in [3usize, 8] {
            let mut es = EarlyStopping::new(patience);
            let mut stop_epoch = None;
            for epoch in 1..=100 {
                let loss = if epoch <= 5 { 1.0 / epoch as f64 } else { 1.0 };
                if es.observe(epoch, loss) == StopDecision::Stop {
                    stop_epoch = Some(epoch);
                    break;
                }
            }
            assert_eq!(stop_epoch.unwrap() - patience, es.best_epoch().unwrap());
        }
    }

    /// Two easily separable classes: distinct carriers and pulse rates.
    pub(crate) fn toy_corpus(dir: &Path, per_class: usize, seconds: f64) {
        for (label, carrier, pulse_hz) in [("low", 3000.0, 4.0), ("high", 9000.0, 9.0)] {
            std::fs::create_dir_all(dir.join(label)).unwrap();
            for i in 0..per_class {
                let n = (44100.0 * seconds) as usize;
                let phase = i as f64 * 0.37;
                let samples: Vec<f32> = (0..n)
                    .map(|j| {
                        let t = j as f64 / 44100.0;
                        let gate = ((std::f64::consts::TAU * pulse_hz * t + phase).sin() > 0.0) as i32 as f64;
                        ((std::f64::consts::TAU * carrier * t + phase).sin() * gate * 0.5) as f32
                    })
                    .collect();
                write_wav_f32(
                    &dir.join(label).join(format!("r{}.wav", i)),
                    &Waveform::new(samples, 44100).unwrap(),
                )
                .unwrap();
            }
        }
    }

    fn tiny_manifest(dir: &Path) -> (crate::dataset::DatasetManifest, AudioStore) {
        toy_corpus(dir, 4, 5.0);
        let (mut manifest, _) = ingest(dir, &IngestOptions::default()).unwrap();
        assign_splits(&mut manifest, SplitScheme::Pattern);
        manifest.compute_chunks();
        (manifest, AudioStore::new(dir))
    }

    fn fast_cfg() -> TrainConfig {
        TrainConfig {
            max_epochs: 2,
            batch_size: 4,
            seed: 11,
            ..TrainConfig::defaults(FrontendKind::Mel)
        }
    }

    #[test]
    fn identical_seeds_identical_logs() {
        let dir = tempfile::tempdir().unwrap();
        let (manifest, store) = tiny_manifest(dir.path());
        let a = train(&fast_cfg(), &manifest, &store, None).unwrap();
        let b = train(&fast_cfg(), &manifest, &store, None).unwrap();
        let strip = |logs: &[EpochLog]| -> Vec<(usize, u64, u64, u64, u64)> {
            logs.iter()
                .map(|e| {
                    (
                        e.epoch,
                        e.train_loss.to_bits(),
                        e.train_acc.to_bits(),
                        e.val_loss.to_bits(),
                        e.val_acc.to_bits(),
                    )
                })
                .collect()
        };
        assert_eq!(strip(&a.epochs), strip(&b.epochs));
    }

    #[test]
    fn dropout_and_l2_change_the_trajectory() {
        let dir = tempfile::tempdir().unwrap();
        let (manifest, store) = tiny_manifest(dir.path());
        let with = train(&fast_cfg(), &manifest, &store, None).unwrap();
        let without = train(
            &TrainConfig { dropout: 0.0, l2_lambda: 0.0, ..fast_cfg() },
            &manifest,
            &store,
            None,
        )
        .unwrap();
        let delta = (with.epochs[1].train_loss - without.epochs[1].train_loss).abs();
        assert!(delta > 1e-6, "regularization had no measurable effect: {}", delta);
    }

    #[test]
    fn resume_continues_epoch_numbering() {
        let dir = tempfile::tempdir().unwrap();
        let (manifest, store) = tiny_manifest(dir.path());
        let first = train(&fast_cfg(), &manifest, &store, None).unwrap();
        let resumed = train(
            &TrainConfig { max_epochs: 3, ..fast_cfg() },
            &manifest,
            &store,
            Some(&first.best),
        )
        .unwrap();
        assert_eq!(resumed.epochs.first().map(|e| e.epoch), Some(first.best.meta.epoch + 1));
    }

    #[test]
    fn checkpoint_label_mismatch_is_explicit() {
        let dir = tempfile::tempdir().unwrap();
        let (manifest, store) = tiny_manifest(dir.path());
        let out = train(&fast_cfg(), &manifest, &store, None).unwrap();

        // A manifest with a third class cannot accept the 2-class checkpoint.
        let dir2 = tempfile::tempdir().unwrap();
        toy_corpus(dir2.path(), 4, 5.0);
        std::fs::create_dir_all(dir2.path().join("third")).unwrap();
        let extra: Vec<f32> = (0..220_500)
            .map(|j| ((j as f64 * 0.913).sin() * 0.2) as f32)
            .collect();
        write_wav_f32(
            &dir2.path().join("third/r0.wav"),
            &Waveform::new(extra, 44100).unwrap(),
        )
        .unwrap();
        let (mut m2, _) = ingest(dir2.path(), &IngestOptions::default()).unwrap();
        assign_splits(&mut m2, SplitScheme::Pattern);
        m2.compute_chunks();
        let store2 = AudioStore::new(dir2.path());
        let err = train(&fast_cfg(), &m2, &store2, Some(&out.best)).unwrap_err();
        assert!(matches!(err, Error::Label(_)), "{:?}", err);
        drop(store);
    }

    #[test]
    fn frozen_ablation_groups_stay_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        toy_corpus(dir.path(), 3, 1.26);
        let (mut manifest, _) = ingest(dir.path(), &IngestOptions::default()).unwrap();
        assign_splits(&mut manifest, SplitScheme::Pattern);
        manifest.compute_chunks();
        let store = AudioStore::new(dir.path());

        let init = leaf_init(N_CHANNELS, F_MIN, F_MAX);
        let cfg = TrainConfig {
            max_epochs: 1,
            batch_size: 4,
            frontend: FrontendKind::LeafPcen,
            seed: 3,
            ..TrainConfig::defaults(FrontendKind::LeafPcen)
        };
        let out = train(&cfg, &manifest, &store, None).unwrap();
        let trained = leaf_params_from_checkpoint(&out.best, FrontendKind::LeafPcen).unwrap();
        // Filterbank and pooling frozen at init; PCEN params moved.
        assert_eq!(trained.center_freqs, init.center_freqs);
        assert_eq!(trained.kernel_sigmas, init.kernel_sigmas);
        assert_eq!(trained.pool_sigmas, init.pool_sigmas);
        assert_ne!(trained.pcen_alpha, init.pcen_alpha);
    }

    #[test]
    fn epoch_csv_format() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.csv");
        let rows = vec![EpochLog {
            epoch: 1,
            train_loss: 0.5,
            train_acc: 0.75,
            val_loss: 0.6,
            val_acc: 0.7,
            seconds: 1.25,
        }];
        write_epoch_csv(&rows, &path).unwrap();
        let content = std::fs::read_to_string(&path).unwrap();
        assert_eq!(
            content,
            "epoch,train_loss,val_loss,val_acc,seconds\n1,0.500000,0.600000,0.700000,1.250\n"
        );
    }
}
