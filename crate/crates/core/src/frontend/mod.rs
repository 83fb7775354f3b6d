//! The two comparable frontends: fixed mel spectrogram and trainable
//! Gabor filterbank ("LEAF"), both mapping 5 s waveforms at 44.1 kHz to
//! `[64, 1500]` feature maps.

mod leaf;
mod mel;
mod pcen;

pub use leaf::{leaf_init, LeafFrontend, LeafParams, ParamBounds};
pub use mel::MelFrontend;
pub use pcen::{pcen, PcenState};

use crate::dsp::Waveform;
use crate::error::Result;
use crate::tensor::{Scalar, Tensor};
use serde::{Deserialize, Serialize};

/// Number of frequency channels both frontends produce.
pub const N_CHANNELS: usize = 64;
/// Filterbank/pooling kernel length in samples (equal to the analysis
/// window of the mel path, so both frontends see the same temporal support).
pub const KERNEL_LEN: usize = 294;
/// Pooling stride in samples (3.335 ms at 44.1 kHz).
pub const HOP: usize = 147;
/// Frequency range shared by both frontends.
pub const F_MIN: f64 = 0.0;
pub const F_MAX: f64 = 22_050.0;

/// Which frontend a run trains, including the two ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum FrontendKind {
    Mel,
    Leaf,
    /// Trainable filterbank and pooling, PCEN frozen at initialization.
    LeafFb,
    /// Trainable PCEN, filterbank and pooling frozen at initialization.
    LeafPcen,
}

impl FrontendKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "mel" => Some(FrontendKind::Mel),
            "leaf" => Some(FrontendKind::Leaf),
            "leafFB" => Some(FrontendKind::LeafFb),
            "leafPCEN" => Some(FrontendKind::LeafPcen),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            FrontendKind::Mel => "mel",
            FrontendKind::Leaf => "leaf",
            FrontendKind::LeafFb => "leafFB",
            FrontendKind::LeafPcen => "leafPCEN",
        }
    }

    pub fn is_leaf_family(&self) -> bool {
        !matches!(self, FrontendKind::Mel)
    }
}

/// A `[channels, frames]` time-frequency grid plus the nominal center
/// frequency of each channel at the time it was produced.
///
/// The channel order follows parameter index, not sorted frequency: after
/// training, adjacent channels of the trainable frontend need not hold
/// adjacent frequency bands.
pub struct FeatureMap<T: Scalar = f32> {
    values: Tensor<T>,
    channel_meta: Vec<f64>,
}

impl<T: Scalar> FeatureMap<T> {
    pub fn new(values: Tensor<T>, channel_meta: Vec<f64>) -> Self {
        assert_eq!(values.shape().len(), 2, "feature map must be [channels, frames]");
        assert_eq!(
            values.shape()[0],
            channel_meta.len(),
            "one nominal center frequency per channel"
        );
        FeatureMap { values, channel_meta }
    }

    pub fn values(&self) -> &Tensor<T> {
        &self.values
    }

    pub fn channels(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn frames(&self) -> usize {
        self.values.shape()[1]
    }

    /// Nominal center frequency (Hz) per channel.
    pub fn channel_meta(&self) -> &[f64] {
        &self.channel_meta
    }

    /// Index of the channel with the highest total energy.
    pub fn argmax_channel(&self) -> usize {
        let frames = self.frames();
        let v = self.values.values();
        let mut best = (0usize, f64::NEG_INFINITY);
        for c in 0..self.channels() {
            let sum: f64 = v[c * frames..(c + 1) * frames]
                .iter()
                .map(|&x| x.as_f64())
                .sum();
            if sum > best.1 {
                best = (c, sum);
            }
        }
        best.0
    }
}

/// A frontend instance usable by the training loop.
pub enum Frontend<T: Scalar = f32> {
    Mel(MelFrontend),
    Leaf(LeafFrontend<T>),
}

impl<T: Scalar> Frontend<T> {
    /// Builds the frontend for `kind` with the standard strict 5 s contract.
    pub fn build(kind: FrontendKind) -> Result<Self> {
        match kind {
            FrontendKind::Mel => Ok(Frontend::Mel(MelFrontend::new()?)),
            _ => {
                let mut params = leaf_init(N_CHANNELS, F_MIN, F_MAX);
                params.set_ablation(kind);
                Ok(Frontend::Leaf(LeafFrontend::from_params(&params)?))
            }
        }
    }

    pub fn forward(&self, w: &Waveform) -> Result<FeatureMap<T>> {
        match self {
            Frontend::Mel(m) => m.forward(w),
            Frontend::Leaf(l) => l.forward(w),
        }
    }

    /// Parameter tensors that should join the optimizer.
    pub fn trainable_params(&self) -> Vec<Tensor<T>> {
        match self {
            Frontend::Mel(_) => Vec::new(),
            Frontend::Leaf(l) => l.trainable_params(),
        }
    }

    /// Post-step projection back into the valid parameter domain.
    pub fn clamp_params(&self) {
        if let Frontend::Leaf(l) = self {
            l.clamp();
        }
    }

    pub fn as_leaf(&self) -> Option<&LeafFrontend<T>> {
        match self {
            Frontend::Leaf(l) => Some(l),
            Frontend::Mel(_) => None,
        }
    }
}
