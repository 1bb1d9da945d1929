//! Conditional denoising diffusion models for low-dose CT restoration, with
//! ancestral sampling and fast DPM-Solver sampling of the probability-flow ODE.
//!
//! The crate is organized around a [`schedule::VarianceSchedule`], a
//! [`denoiser::NoisePredictor`] (a trainable convolutional network or an
//! exact Gaussian oracle), and the samplers in [`sampler`].

pub mod cli;
pub mod dataset;
pub mod denoiser;
pub mod diffusion;
pub mod error;
pub mod metrics;
pub mod rng;
pub mod sampler;
pub mod schedule;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use schedule::{VarianceSchedule, T_MIN};
pub use tensor::ImageTensor;
