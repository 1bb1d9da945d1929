//! Noise predictors `D(y_t, x, t)`: the contract every sampler consumes, an
//! exact Gaussian oracle, and a small trainable convolutional network.

mod checkpoint;
mod conv;
mod oracle;

pub use checkpoint::{Checkpoint, TrainMode, TrainingMeta, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use conv::{Architecture, ConvDenoiser, ForwardCache, LayerGradientCheck, LayerInfo};
pub use oracle::GaussianOracle;

use crate::error::Result;
use crate::schedule::VarianceSchedule;
use crate::tensor::ImageTensor;

/// Where on the diffusion time axis a prediction is requested.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TimeArg {
    /// Discrete step `t ∈ 1..=T` (ancestral sampling, training).
    Discrete(usize),
    /// Continuous time `t ∈ (0, 1]` (ODE solvers).
    Continuous(f64),
}

/// Predicts the noise component of `y_t`.
///
/// Implementations must return a tensor of `y_t`'s shape, be deterministic,
/// and be callable from several threads at once.
pub trait NoisePredictor: Sync {
    fn predict(
        &self,
        y_t: &ImageTensor,
        cond: Option<&ImageTensor>,
        t: TimeArg,
        schedule: &VarianceSchedule,
    ) -> Result<ImageTensor>;
}

impl<P: NoisePredictor + ?Sized> NoisePredictor for &P {
    fn predict(
        &self,
        y_t: &ImageTensor,
        cond: Option<&ImageTensor>,
        t: TimeArg,
        schedule: &VarianceSchedule,
    ) -> Result<ImageTensor> {
        (**self).predict(y_t, cond, t, schedule)
    }
}

impl<P: NoisePredictor + ?Sized> NoisePredictor for Box<P> {
    fn predict(
        &self,
        y_t: &ImageTensor,
        cond: Option<&ImageTensor>,
        t: TimeArg,
        schedule: &VarianceSchedule,
    ) -> Result<ImageTensor> {
        (**self).predict(y_t, cond, t, schedule)
    }
}

/// `D ≡ 0`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroPredictor;

impl NoisePredictor for ZeroPredictor {
    fn predict(
        &self,
        y_t: &ImageTensor,
        _cond: Option<&ImageTensor>,
        _t: TimeArg,
        _schedule: &VarianceSchedule,
    ) -> Result<ImageTensor> {
        Ok(ImageTensor::zeros(y_t.shape()))
    }
}

/// `D ≡ c` everywhere.
#[derive(Debug, Clone, Copy)]
pub struct ConstantPredictor(pub f64);

impl NoisePredictor for ConstantPredictor {
    fn predict(
        &self,
        y_t: &ImageTensor,
        _cond: Option<&ImageTensor>,
        _t: TimeArg,
        _schedule: &VarianceSchedule,
    ) -> Result<ImageTensor> {
        Ok(ImageTensor::filled(y_t.shape(), self.0))
    }
}
