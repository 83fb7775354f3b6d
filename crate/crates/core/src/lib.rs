//! Audio frontend toolkit comparing a fixed mel-spectrogram frontend against a
//! trainable Gabor-filterbank frontend (learnable filters, Gaussian lowpass
//! pooling and PCEN compression) feeding a small CNN for insect sound
//! classification.
//!
//! The crate is organized around the pipeline stages:
//!
//! * [`tensor`] — minimal reverse-mode autodiff engine (just the ops the
//!   frontends and the classifier need) plus a finite-difference checker.
//! * [`dsp`] — resampling, STFT, mel scale, Gabor/Gaussian kernel synthesis.
//! * [`frontend`] — the two comparable frontends producing `[64, 1500]`
//!   feature maps from 5 s waveforms.
//! * [`backend`] — the convolutional classifier.
//! * [`dataset`] — ingestion, chunking, deterministic splitting, manifests.
//! * [`augment`] — colored noise, impulse responses, frequency masking.
//! * [`training`] — training loop with early stopping and checkpointing.
//! * [`metrics`] — evaluation reports, confusion matrices, run summaries.
//! * [`analysis`] — filter-distribution reports for trained frontends.

pub mod analysis;
pub mod augment;
pub mod backend;
pub mod dataset;
pub mod dsp;
pub mod error;
pub mod frontend;
pub mod metrics;
pub mod rng;
pub mod tensor;

pub(crate) mod svg;
pub mod training;

pub use error::{Error, Result};
pub use rng::StreamFactory;
pub use tensor::{Mode, Tensor};
