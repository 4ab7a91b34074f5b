//! Geometric constellation shaping for nonlinear fiber channels.
//!
//! An autoencoder (encoder, differentiable channel surrogate, decoder) learns
//! a constellation and optionally the launch power. The channel surrogate is
//! either the Gaussian-noise model or a modulation-aware model whose
//! nonlinear variance depends on the constellation's fourth and sixth
//! moments. A split-step Fourier simulator provides a reference channel and
//! calibrates the surrogate.

pub mod autodiff;
pub mod channel;
pub mod config;
pub mod constellation;
pub mod error;
pub mod metrics;
pub mod ssf;
pub mod trainer;

pub use channel::{ChannelModel, LinkConfig, ModelKind, NlinCoefficients, NlinFit};
pub use config::RunConfig;
pub use constellation::{Constellation, Moments};
pub use error::{Error, Result};
