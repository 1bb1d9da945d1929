use super::{NoisePredictor, TimeArg};
use crate::error::{Error, Result};
use crate::schedule::VarianceSchedule;
use crate::tensor::ImageTensor;

/// Exact noise predictor for data distributed as `N(μ₀, s₀²I)`.
///
/// The marginal at time t is `N(η_t μ₀, (η_t²s₀² + σ_t²)I)`, so the optimal
/// prediction is `−σ_t ∇log q_t(y) = σ_t(y − η_tμ₀)/(η_t²s₀² + σ_t²)`.
/// A `1×1×1` mean broadcasts over any input shape.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianOracle {
    mu0: ImageTensor,
    s0: f64,
}

impl GaussianOracle {
    pub fn new(mu0: ImageTensor, s0: f64) -> Result<Self> {
        if !(s0 > 0.0 && s0.is_finite()) {
            return Err(Error::domain(format!("oracle data std must be positive, got {s0}")));
        }
        Ok(Self { mu0, s0 })
    }

    /// Isotropic oracle with the same mean in every pixel.
    pub fn scalar(mu0: f64, s0: f64) -> Result<Self> {
        Self::new(ImageTensor::scalar(mu0), s0)
    }

    pub fn mu0(&self) -> &ImageTensor {
        &self.mu0
    }

    pub fn s0(&self) -> f64 {
        self.s0
    }

    fn mean_at(&self, i: usize) -> f64 {
        let m = self.mu0.as_slice();
        if m.len() == 1 {
            m[0]
        } else {
            m[i]
        }
    }

    /// Marginal mean and variance of a single pixel at `(η, σ)`.
    pub fn marginal(&self, pixel: usize, eta: f64, sigma: f64) -> (f64, f64) {
        (
            eta * self.mean_at(pixel),
            eta * eta * self.s0 * self.s0 + sigma * sigma,
        )
    }

    pub fn predict_at(&self, y_t: &ImageTensor, eta: f64, sigma: f64) -> Result<ImageTensor> {
        if self.mu0.len() != 1 {
            y_t.ensure_same_shape(&self.mu0)?;
        }
        let var = eta * eta * self.s0 * self.s0 + sigma * sigma;
        let mut out = y_t.clone();
        for (i, v) in out.as_mut_slice().iter_mut().enumerate() {
            *v = sigma * (*v - eta * self.mean_at(i)) / var;
        }
        if !out.is_finite() {
            return Err(Error::Numeric("oracle prediction is not finite".into()));
        }
        Ok(out)
    }
}

impl NoisePredictor for GaussianOracle {
    fn predict(
        &self,
        y_t: &ImageTensor,
        _cond: Option<&ImageTensor>,
        t: TimeArg,
        schedule: &VarianceSchedule,
    ) -> Result<ImageTensor> {
        let (eta, sigma) = match t {
            TimeArg::Discrete(k) => {
                schedule.check_step(k)?;
                (schedule.eta(k), schedule.sigma_marginal(k))
            }
            TimeArg::Continuous(tc) => {
                let c = schedule.continuous_coefficients(tc)?;
                (c.eta, c.sigma)
            }
        };
        self.predict_at(y_t, eta, sigma)
    }
}
