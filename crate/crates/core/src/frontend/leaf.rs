//! Trainable Gabor-filterbank frontend: learnable filters, per-channel
//! Gaussian lowpass pooling and trainable PCEN compression.
//!
//! The forward pass is gradient-checkpointed: the recorded graph holds one
//! node per waveform whose backward closure recomputes the internal graph
//! (kernel synthesis, two stride-1 convolutions, squared modulus, pooling,
//! PCEN) and routes the vector-Jacobian product into the parameter tensors.
//! Without this, a batch of stride-1 convolution intermediates at 220500
//! samples would hold gigabytes.

use super::pcen::pcen;
use super::{FeatureMap, FrontendKind, HOP, KERNEL_LEN};
use crate::dsp::{hz_to_mel, mel_to_hz, Waveform, CHUNK_SAMPLES, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::tensor::{conv1d_padded, depthwise_conv1d, Scalar, Tensor};
use serde::{Deserialize, Serialize};

/// Trainable frontend parameters with per-group trainability flags.
///
/// All per-channel fields hold one entry per filter. `kernel_sigmas` are
/// Gaussian envelope widths in samples; `pool_sigmas` are unitless fractions
/// of half the pooling kernel length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeafParams {
    pub center_freqs: Vec<f32>,
    pub kernel_sigmas: Vec<f32>,
    pub pool_sigmas: Vec<f32>,
    pub pcen_alpha: Vec<f32>,
    pub pcen_delta: Vec<f32>,
    pub pcen_root: Vec<f32>,
    pub pcen_smooth: Vec<f32>,
    pub epsilon: f32,
    pub trainable_filterbank: bool,
    pub trainable_pooling: bool,
    pub trainable_pcen: bool,
}

/// Valid domains enforced by post-step clamping.
pub struct ParamBounds;

impl ParamBounds {
    pub const CENTER: (f32, f32) = (0.0, 22_050.0);
    /// Initialization spans roughly [14, 418] samples; the bounds leave
    /// room to adapt in both directions.
    pub const KERNEL_SIGMA: (f32, f32) = (1.0, 800.0);
    pub const POOL_SIGMA: (f32, f32) = (1e-3, 1.0);
    pub const PCEN_SMOOTH: (f32, f32) = (1e-3, 0.5);
    pub const PCEN_ROOT: (f32, f32) = (0.05, 2.0);
    pub const PCEN_DELTA: (f32, f32) = (1e-3, 10.0);
    pub const PCEN_ALPHA: (f32, f32) = (0.05, 1.5);
}

fn clamp_slice(v: &mut [f32], (lo, hi): (f32, f32)) {
    for x in v {
        *x = x.clamp(lo, hi);
    }
}

impl LeafParams {
    pub fn n_filters(&self) -> usize {
        self.center_freqs.len()
    }

    /// Sets the trainability flags for a frontend variant.
    pub fn set_ablation(&mut self, kind: FrontendKind) {
        match kind {
            FrontendKind::Leaf => {
                self.trainable_filterbank = true;
                self.trainable_pooling = true;
                self.trainable_pcen = true;
            }
            FrontendKind::LeafFb => {
                self.trainable_filterbank = true;
                self.trainable_pooling = true;
                self.trainable_pcen = false;
            }
            FrontendKind::LeafPcen => {
                self.trainable_filterbank = false;
                self.trainable_pooling = false;
                self.trainable_pcen = true;
            }
            FrontendKind::Mel => panic!("mel frontend has no trainable parameters"),
        }
    }

    /// Projects every field back into its valid domain.
    pub fn clamp(&mut self) {
        clamp_slice(&mut self.center_freqs, ParamBounds::CENTER);
        clamp_slice(&mut self.kernel_sigmas, ParamBounds::KERNEL_SIGMA);
        clamp_slice(&mut self.pool_sigmas, ParamBounds::POOL_SIGMA);
        clamp_slice(&mut self.pcen_smooth, ParamBounds::PCEN_SMOOTH);
        clamp_slice(&mut self.pcen_root, ParamBounds::PCEN_ROOT);
        clamp_slice(&mut self.pcen_delta, ParamBounds::PCEN_DELTA);
        clamp_slice(&mut self.pcen_alpha, ParamBounds::PCEN_ALPHA);
    }

    pub fn invariants_hold(&self) -> bool {
        let n = self.n_filters();
        let within = |v: &[f32], (lo, hi): (f32, f32)| v.iter().all(|&x| x >= lo && x <= hi);
        [
            &self.center_freqs,
            &self.kernel_sigmas,
            &self.pool_sigmas,
            &self.pcen_alpha,
            &self.pcen_delta,
            &self.pcen_root,
            &self.pcen_smooth,
        ]
        .iter()
        .all(|v| v.len() == n)
            && within(&self.center_freqs, ParamBounds::CENTER)
            && self.kernel_sigmas.iter().all(|&s| s > 0.0)
            && within(&self.pool_sigmas, (f32::MIN_POSITIVE, 1.0))
            && self.pcen_smooth.iter().all(|&s| s > 0.0 && s < 1.0)
            && self.pcen_root.iter().all(|&r| r > 0.0)
            && self.pcen_delta.iter().all(|&d| d > 0.0)
    }
}

/// Initial parameters matching the mel filterbank: centers at the 64 mel
/// triangle centers between `f_min` and `f_max`, envelope widths chosen so
/// each Gabor's frequency-response FWHM equals the triangle's FWHM, and the
/// published PCEN defaults (alpha 0.96, delta 2, root 0.5, smooth 0.04).
pub fn leaf_init(n: usize, f_min: f64, f_max: f64) -> LeafParams {
    let mel_lo = hz_to_mel(f_min);
    let mel_hi = hz_to_mel(f_max);
    let grid: Vec<f64> = (0..n + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (n + 1) as f64))
        .collect();

    let mut centers = Vec::with_capacity(n);
    let mut sigmas = Vec::with_capacity(n);
    // A Gaussian envelope of width sigma (samples) has a magnitude-response
    // FWHM of 2*sqrt(2 ln 2) * sr / (2 pi sigma) Hz; solve for sigma against
    // the triangle FWHM (right_foot - left_foot) / 2.
    let coeff = (2.0 * std::f64::consts::LN_2).sqrt() * SAMPLE_RATE as f64 / std::f64::consts::PI;
    for i in 0..n {
        centers.push(grid[i + 1] as f32);
        let fwhm = (grid[i + 2] - grid[i]) / 2.0;
        sigmas.push((coeff / fwhm) as f32);
    }

    LeafParams {
        center_freqs: centers,
        kernel_sigmas: sigmas,
        pool_sigmas: vec![0.4; n],
        pcen_alpha: vec![0.96; n],
        pcen_delta: vec![2.0; n],
        pcen_root: vec![0.5; n],
        pcen_smooth: vec![0.04; n],
        epsilon: 1e-6,
        trainable_filterbank: true,
        trainable_pooling: true,
        trainable_pcen: true,
    }
}

/// Parameter tensors in checkpoint order.
const PARAM_NAMES: [&str; 7] = [
    "center_freqs",
    "kernel_sigmas",
    "pool_sigmas",
    "pcen_alpha",
    "pcen_delta",
    "pcen_root",
    "pcen_smooth",
];

/// The trainable frontend instance holding its parameters as graph leaves.
pub struct LeafFrontend<T: Scalar> {
    center_freqs: Tensor<T>,
    kernel_sigmas: Tensor<T>,
    pool_sigmas: Tensor<T>,
    pcen_alpha: Tensor<T>,
    pcen_delta: Tensor<T>,
    pcen_root: Tensor<T>,
    pcen_smooth: Tensor<T>,
    epsilon: T,
    flags: (bool, bool, bool),
    expected_samples: Option<usize>,
}

impl<T: Scalar> LeafFrontend<T> {
    /// Strict 5 s pipeline instance.
    pub fn from_params(p: &LeafParams) -> Result<Self> {
        Self::build(p, Some(CHUNK_SAMPLES))
    }

    /// Accepts any input length (gradient checks, toy inputs).
    pub fn relaxed(p: &LeafParams) -> Result<Self> {
        Self::build(p, None)
    }

    fn build(p: &LeafParams, expected_samples: Option<usize>) -> Result<Self> {
        if !p.invariants_hold() {
            return Err(Error::Config("leaf parameters violate their domain".into()));
        }
        let n = p.n_filters();
        let leaf = |v: &[f32], trainable: bool| {
            let vals: Vec<T> = v.iter().map(|&x| T::of(x as f64)).collect();
            if trainable {
                Tensor::param(&[n], vals)
            } else {
                Tensor::from_vec(&[n], vals)
            }
        };
        Ok(LeafFrontend {
            center_freqs: leaf(&p.center_freqs, p.trainable_filterbank),
            kernel_sigmas: leaf(&p.kernel_sigmas, p.trainable_filterbank),
            pool_sigmas: leaf(&p.pool_sigmas, p.trainable_pooling),
            pcen_alpha: leaf(&p.pcen_alpha, p.trainable_pcen),
            pcen_delta: leaf(&p.pcen_delta, p.trainable_pcen),
            pcen_root: leaf(&p.pcen_root, p.trainable_pcen),
            pcen_smooth: leaf(&p.pcen_smooth, p.trainable_pcen),
            epsilon: T::of(p.epsilon as f64),
            flags: (p.trainable_filterbank, p.trainable_pooling, p.trainable_pcen),
            expected_samples,
        })
    }

    pub fn n_filters(&self) -> usize {
        self.center_freqs.len()
    }

    fn param_tensors(&self) -> [&Tensor<T>; 7] {
        [
            &self.center_freqs,
            &self.kernel_sigmas,
            &self.pool_sigmas,
            &self.pcen_alpha,
            &self.pcen_delta,
            &self.pcen_root,
            &self.pcen_smooth,
        ]
    }

    /// `(name, tensor)` pairs in checkpoint order.
    pub fn named_params(&self) -> Vec<(String, Tensor<T>)> {
        PARAM_NAMES
            .iter()
            .zip(self.param_tensors())
            .map(|(n, t)| (format!("frontend.{}", n), t.clone()))
            .collect()
    }

    /// Only the tensors that participate in optimization.
    pub fn trainable_params(&self) -> Vec<Tensor<T>> {
        self.param_tensors()
            .into_iter()
            .filter(|t| t.requires_grad())
            .cloned()
            .collect()
    }

    /// Current parameter values as a plain struct.
    pub fn snapshot(&self) -> LeafParams {
        let grab = |t: &Tensor<T>| t.values().iter().map(|&x| x.as_f64() as f32).collect();
        LeafParams {
            center_freqs: grab(&self.center_freqs),
            kernel_sigmas: grab(&self.kernel_sigmas),
            pool_sigmas: grab(&self.pool_sigmas),
            pcen_alpha: grab(&self.pcen_alpha),
            pcen_delta: grab(&self.pcen_delta),
            pcen_root: grab(&self.pcen_root),
            pcen_smooth: grab(&self.pcen_smooth),
            epsilon: self.epsilon.as_f64() as f32,
            trainable_filterbank: self.flags.0,
            trainable_pooling: self.flags.1,
            trainable_pcen: self.flags.2,
        }
    }

    /// Projects parameter values back into their valid domain (after an
    /// optimizer step).
    pub fn clamp(&self) {
        let clamp_t = |t: &Tensor<T>, (lo, hi): (f32, f32)| {
            let (lo, hi) = (T::of(lo as f64), T::of(hi as f64));
            for v in t.values_mut().iter_mut() {
                if *v < lo {
                    *v = lo;
                } else if *v > hi {
                    *v = hi;
                }
            }
        };
        clamp_t(&self.center_freqs, ParamBounds::CENTER);
        clamp_t(&self.kernel_sigmas, ParamBounds::KERNEL_SIGMA);
        clamp_t(&self.pool_sigmas, ParamBounds::POOL_SIGMA);
        clamp_t(&self.pcen_smooth, ParamBounds::PCEN_SMOOTH);
        clamp_t(&self.pcen_root, ParamBounds::PCEN_ROOT);
        clamp_t(&self.pcen_delta, ParamBounds::PCEN_DELTA);
        clamp_t(&self.pcen_alpha, ParamBounds::PCEN_ALPHA);
    }

    /// TF-style SAME pooling geometry: `ceil(len / hop)` frames.
    fn pool_geometry(len: usize) -> (usize, usize, usize) {
        let frames = len.div_ceil(HOP);
        let total_pad = ((frames - 1) * HOP + KERNEL_LEN).saturating_sub(len);
        let pad_left = total_pad / 2;
        (frames, pad_left, total_pad - pad_left)
    }

    /// The differentiable pipeline given parameter leaves:
    /// Gabor conv (stride 1, same padding) -> squared modulus ->
    /// per-channel Gaussian pooling (stride 147) -> PCEN.
    fn forward_graph(params: &[Tensor<T>], x: &Tensor<T>, epsilon: T) -> Tensor<T> {
        let n = params[0].len();
        let len = x.shape()[2];
        let klen = KERNEL_LEN;

        let grid: Vec<T> = {
            let center = (klen as f64 - 1.0) / 2.0;
            (0..klen).map(|i| T::of(i as f64 - center)).collect()
        };
        let t_grid = Tensor::from_vec(&[1, klen], grid);
        let t_sq = t_grid.square();

        // Gabor kernels from centers and envelope widths.
        let cf = params[0].reshape(&[n, 1]);
        let sg = params[1].reshape(&[n, 1]);
        let phase = cf
            .scale(T::of(std::f64::consts::TAU / SAMPLE_RATE as f64))
            .mul(&t_grid);
        let env = t_sq.div(&sg.square().scale(T::of(2.0))).neg().exp();
        let amp = Tensor::scalar(T::one())
            .div(&sg.scale(T::of((2.0 * std::f64::consts::PI).sqrt())));
        let gabor_env = env.mul(&amp);
        let cos_k = gabor_env.mul(&phase.cos()).reshape(&[n, 1, klen]);
        let sin_k = gabor_env.mul(&phase.sin()).reshape(&[n, 1, klen]);

        // Same-padded stride-1 filtering keeps the pre-pooling length equal
        // to the input length.
        let pl = (klen - 1) / 2;
        let pr = klen - 1 - pl;
        let c = conv1d_padded(x, &cos_k, 1, pl, pr);
        let s = conv1d_padded(x, &sin_k, 1, pl, pr);
        let energy = c.square().add(&s.square());

        // Per-channel Gaussian lowpass pooling, sum-normalized kernels.
        let (frames, ppl, ppr) = Self::pool_geometry(len);
        let pool_sigma = params[2].reshape(&[n, 1]).scale(T::of(klen as f64 / 2.0));
        let pool_raw = t_sq.div(&pool_sigma.square().scale(T::of(2.0))).neg().exp();
        let pool_k = pool_raw.div(&pool_raw.sum_last_keepdim());
        let pooled = depthwise_conv1d(&energy, &pool_k, HOP, ppl, ppr).reshape(&[n, frames]);

        pcen(&pooled, &params[3], &params[4], &params[5], &params[6], epsilon)
    }

    /// Differentiable forward pass producing `[n_filters, ceil(len / 147)]`
    /// (exactly `[64, 1500]` for 5 s standard inputs).
    pub fn forward(&self, w: &Waveform) -> Result<FeatureMap<T>> {
        if w.sample_rate() != SAMPLE_RATE {
            return Err(Error::Data(format!(
                "leaf frontend expects {} Hz input, got {}",
                SAMPLE_RATE,
                w.sample_rate()
            )));
        }
        if let Some(nexp) = self.expected_samples {
            if w.len() != nexp {
                return Err(Error::Data(format!(
                    "leaf frontend expects exactly {} samples, got {}",
                    nexp,
                    w.len()
                )));
            }
        }
        if w.len() < HOP {
            return Err(Error::Data("input shorter than one pooling hop".into()));
        }

        let xv: Vec<T> = w.samples().iter().map(|&s| T::of(s as f64)).collect();
        let x = Tensor::from_vec(&[1, 1, w.len()], xv);

        // Values-only pass with detached parameters: the graph prunes to
        // constants, so no convolution intermediates are retained.
        let detached: Vec<Tensor<T>> = self.param_tensors().iter().map(|t| t.detach()).collect();
        let values = Self::forward_graph(&detached, &x, self.epsilon);
        let shape = values.shape().to_vec();

        let outer: Vec<Tensor<T>> = self.param_tensors().into_iter().cloned().collect();
        let back_params = outer.clone();
        let epsilon = self.epsilon;
        let tensor = Tensor::from_op(
            shape.clone(),
            values.to_vec(),
            outer,
            Box::new(move |dout: &[T]| {
                // Recompute with fresh leaves and pull the vector-Jacobian
                // product through the rebuilt graph.
                let inner: Vec<Tensor<T>> = back_params
                    .iter()
                    .map(|p| {
                        if p.requires_grad() {
                            Tensor::param(p.shape(), p.to_vec())
                        } else {
                            p.detach()
                        }
                    })
                    .collect();
                let y = Self::forward_graph(&inner, &x, epsilon);
                let seed = Tensor::from_vec(y.shape(), dout.to_vec());
                y.mul(&seed).sum_all().backward();
                for (outer_p, inner_p) in back_params.iter().zip(inner.iter()) {
                    if outer_p.requires_grad() {
                        if let Some(g) = inner_p.grad() {
                            outer_p.accumulate_grad(&g);
                        }
                    }
                }
            }),
        );

        let meta: Vec<f64> = self.center_freqs.values().iter().map(|&c| c.as_f64()).collect();
        Ok(FeatureMap::new(tensor, meta))
    }
}
