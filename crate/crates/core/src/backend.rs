//! The convolutional classifier: 4 (optionally 5) conv blocks, each
//! conv -> ReLU -> batchnorm, then adaptive average pooling, flatten,
//! dropout and a linear head.

use crate::error::{Error, Result};
use crate::tensor::{conv2d, softmax_cross_entropy, BatchNorm2d, Mode, Scalar, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Classifier architecture parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// 4 for the main model, 5 for the enlarged variant.
    pub n_conv_layers: usize,
    pub dropout_rate: f64,
    pub n_classes: usize,
    /// Output channels per conv layer.
    pub channel_plan: Vec<usize>,
}

impl ModelConfig {
    pub fn new(n_conv_layers: usize, dropout_rate: f64, n_classes: usize) -> Result<Self> {
        let cfg = ModelConfig {
            n_conv_layers,
            dropout_rate,
            n_classes,
            channel_plan: Self::default_plan(n_conv_layers),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// 8-16-32-64(-128), doubling per layer.
    pub fn default_plan(n_conv_layers: usize) -> Vec<usize> {
        (0..n_conv_layers).map(|i| 8 << i).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.n_conv_layers == 4 || self.n_conv_layers == 5) {
            return Err(Error::Config(format!(
                "n_conv_layers must be 4 or 5, got {}",
                self.n_conv_layers
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config("dropout rate must be in [0, 1)".into()));
        }
        if self.n_classes < 2 {
            return Err(Error::Config("need at least 2 classes".into()));
        }
        if self.channel_plan.len() != self.n_conv_layers {
            return Err(Error::Config(format!(
                "channel plan has {} entries for {} layers",
                self.channel_plan.len(),
                self.n_conv_layers
            )));
        }
        if self.channel_plan.iter().any(|&c| c == 0) {
            return Err(Error::Config("channel plan entries must be positive".into()));
        }
        Ok(())
    }

    /// `(kernel, stride, padding)` of layer `i`: 5x5/2/2 first, 3x3/2/1 after.
    pub fn layer_geometry(i: usize) -> (usize, usize, usize) {
        if i == 0 {
            (5, 2, 2)
        } else {
            (3, 2, 1)
        }
    }
}

struct ConvBlock<T: Scalar> {
    weight: Tensor<T>,
    bias: Tensor<T>,
    bn: BatchNorm2d<T>,
    stride: usize,
    padding: usize,
}

/// The classifier with all parameters as graph leaves.
pub struct Model<T: Scalar> {
    cfg: ModelConfig,
    blocks: Vec<ConvBlock<T>>,
    head_weight: Tensor<T>,
    head_bias: Tensor<T>,
}

/// Kaiming-uniform fan-in initialization.
fn kaiming_uniform<T: Scalar>(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor<T> {
    let bound = (6.0 / fan_in as f64).sqrt();
    let values: Vec<T> = (0..shape.iter().product())
        .map(|_| T::of(rng.gen_range(-bound..bound)))
        .collect();
    Tensor::param(shape, values)
}

/// Builds the classifier; identical seeds produce bit-identical weights.
pub fn build_model<T: Scalar>(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<Model<T>> {
    cfg.validate()?;
    let mut blocks = Vec::with_capacity(cfg.n_conv_layers);
    let mut in_ch = 1usize;
    for (i, &out_ch) in cfg.channel_plan.iter().enumerate() {
        let (k, stride, padding) = ModelConfig::layer_geometry(i);
        let fan_in = in_ch * k * k;
        blocks.push(ConvBlock {
            weight: kaiming_uniform(&[out_ch, in_ch, k, k], fan_in, rng),
            bias: Tensor::param(&[out_ch], vec![T::zero(); out_ch]),
            bn: BatchNorm2d::new(out_ch),
            stride,
            padding,
        });
        in_ch = out_ch;
    }
    let feat = *cfg.channel_plan.last().unwrap();
    Ok(Model {
        cfg: cfg.clone(),
        blocks,
        head_weight: kaiming_uniform(&[feat, cfg.n_classes], feat, rng),
        head_bias: Tensor::param(&[cfg.n_classes], vec![T::zero(); cfg.n_classes]),
    })
}

impl<T: Scalar> Model<T> {
    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    /// Logits for a `[batch, 1, channels, frames]` feature-map batch.
    /// Dropout draws from `rng` in train mode only.
    pub fn forward(&self, x: &Tensor<T>, mode: Mode, rng: &mut ChaCha8Rng) -> Result<Tensor<T>> {
        assert_eq!(x.shape().len(), 4, "model input must be [B, 1, H, W]");
        assert_eq!(x.shape()[1], 1, "model expects a single input plane");
        let mut h = x.clone();
        for block in &self.blocks {
            let c = conv2d(&h, &block.weight, block.stride, block.padding);
            let c = c.add(&block.bias.reshape(&[1, block.bias.len(), 1, 1]));
            h = block.bn.forward(&c.relu(), mode)?;
        }
        let feat = h.adaptive_avg_pool_to_1x1();
        let flat = feat.reshape(&[feat.shape()[0], feat.shape()[1]]);
        let dropped = flat.dropout(self.cfg.dropout_rate, mode, rng);
        Ok(dropped
            .matmul(&self.head_weight)
            .add(&self.head_bias))
    }

    /// Mean cross-entropy over a batch.
    pub fn loss(&self, logits: &Tensor<T>, labels: &[usize]) -> Tensor<T> {
        softmax_cross_entropy(logits, labels)
    }

    /// `(name, tensor)` pairs of all trainable parameters, checkpoint order.
    pub fn named_params(&self) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            out.push((format!("backend.conv{}.weight", i), b.weight.clone()));
            out.push((format!("backend.conv{}.bias", i), b.bias.clone()));
            out.push((format!("backend.bn{}.gamma", i), b.bn.gamma().clone()));
            out.push((format!("backend.bn{}.beta", i), b.bn.beta().clone()));
        }
        out.push(("backend.head.weight".into(), self.head_weight.clone()));
        out.push(("backend.head.bias".into(), self.head_bias.clone()));
        out
    }

    /// Batchnorm running statistics, named for checkpointing.
    pub fn named_buffers(&self) -> Vec<(String, Vec<T>)> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            let (mean, var) = b.bn.running_stats();
            out.push((format!("backend.bn{}.running_mean", i), mean));
            out.push((format!("backend.bn{}.running_var", i), var));
        }
        out
    }

    pub fn set_buffer(&self, name: &str, values: Vec<T>) -> Result<()> {
        for (i, b) in self.blocks.iter().enumerate() {
            if name == format!("backend.bn{}.running_mean", i) {
                let (_, var) = b.bn.running_stats();
                b.bn.set_running_stats(values, var);
                return Ok(());
            }
            if name == format!("backend.bn{}.running_var", i) {
                let (mean, _) = b.bn.running_stats();
                b.bn.set_running_stats(mean, values);
                return Ok(());
            }
        }
        Err(Error::Checkpoint(format!("unknown buffer {}", name)))
    }
}

/// Total element count of all `requires_grad` tensors.
pub fn count_parameters<T: Scalar>(tensors: &[Tensor<T>]) -> usize {
    tensors.iter().filter(|t| t.requires_grad()).map(|t| t.len()).sum()
}
