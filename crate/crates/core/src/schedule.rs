//! Variance schedule: the discrete β table, everything derived from it, and
//! the continuous-time variance-preserving extension used by the ODE solvers.
//!
//! Discrete quantities are indexed by time step `t ∈ 1..=T`. The continuous
//! view lives on `t ∈ [0, 1]` with a linear rate `β(t)` scaled by `T`, so that
//! `log η(t) = −½∫₀ᵗβ(s)ds` approximates `log √ᾱ_{tT}`.

use crate::error::{Error, Result};

/// Smallest continuous time the samplers integrate down to. Below it the
/// marginal noise scale approaches zero and the probability-flow field blows up.
pub const T_MIN: f64 = 1e-3;

pub const DEFAULT_STEPS: usize = 1000;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.02;

const BISECTION_ITERS: usize = 60;

/// The three numbers that fully determine a linear schedule. Derived vectors
/// are always recomputed from these, never stored.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleDescriptor {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleDescriptor {
    fn default() -> Self {
        Self {
            steps: DEFAULT_STEPS,
            beta_start: DEFAULT_BETA_START,
            beta_end: DEFAULT_BETA_END,
        }
    }
}

/// Coefficients of the forward SDE `dy = f(t)y dt + g(t)dw` at a continuous time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContinuousCoefficients {
    pub f: f64,
    pub g2: f64,
    pub eta: f64,
    pub sigma: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceSchedule {
    beta_start: f64,
    beta_end: f64,
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    eta: Vec<f64>,
    sigma_marginal: Vec<f64>,
    sigma_posterior: Vec<f64>,
    lambda: Vec<f64>,
}

impl VarianceSchedule {
    /// Linear schedule `β_t = β_start + (t−1)/(T−1)·(β_end − β_start)`.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::domain("schedule needs at least one time step"));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::domain(format!(
                "need 0 < beta_start <= beta_end < 1, got [{beta_start}, {beta_end}]"
            )));
        }
        let beta = if steps == 1 {
            vec![beta_start]
        } else {
            let span = beta_end - beta_start;
            (0..steps)
                .map(|i| beta_start + i as f64 / (steps - 1) as f64 * span)
                .collect()
        };
        Ok(Self::derive(beta, beta_start, beta_end))
    }

    pub fn from_descriptor(desc: ScheduleDescriptor) -> Result<Self> {
        Self::linear(desc.steps, desc.beta_start, desc.beta_end)
    }

    /// Schedule from an explicit β table. The continuous extension uses the
    /// first and last entries as its linear endpoints.
    pub fn from_betas(beta: Vec<f64>) -> Result<Self> {
        if beta.is_empty() {
            return Err(Error::domain("schedule needs at least one time step"));
        }
        if let Some(b) = beta.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(Error::domain(format!("beta {b} outside (0, 1)")));
        }
        let (start, end) = (beta[0], beta[beta.len() - 1]);
        Ok(Self::derive(beta, start, end))
    }

    fn derive(beta: Vec<f64>, beta_start: f64, beta_end: f64) -> Self {
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bar = Vec::with_capacity(beta.len());
        let mut acc = 1.0;
        for a in &alpha {
            acc *= a;
            alpha_bar.push(acc);
        }
        let eta = alpha_bar.iter().map(|a| a.sqrt()).collect::<Vec<_>>();
        let sigma_marginal = alpha_bar.iter().map(|a| (1.0 - a).sqrt()).collect::<Vec<_>>();
        let sigma_posterior = (0..beta.len())
            .map(|i| {
                let prev = if i == 0 { 1.0 } else { alpha_bar[i - 1] };
                ((1.0 - prev) * beta[i] / (1.0 - alpha_bar[i])).sqrt()
            })
            .collect();
        let lambda = eta
            .iter()
            .zip(&sigma_marginal)
            .map(|(e, s)| (e / s).ln())
            .collect();
        Self {
            beta_start,
            beta_end,
            beta,
            alpha,
            alpha_bar,
            eta,
            sigma_marginal,
            sigma_posterior,
            lambda,
        }
    }

    /// Number of discrete steps `T`.
    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    pub fn descriptor(&self) -> ScheduleDescriptor {
        ScheduleDescriptor {
            steps: self.steps(),
            beta_start: self.beta_start,
            beta_end: self.beta_end,
        }
    }

    pub fn beta_start(&self) -> f64 {
        self.beta_start
    }

    pub fn beta_end(&self) -> f64 {
        self.beta_end
    }

    pub fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::TimeOutOfRange { t, max: self.steps() });
        }
        Ok(())
    }

    // Per-step accessors take t in 1..=T and panic outside it; fallible
    // callers go through `check_step` first.

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t - 1]
    }

    /// `ᾱ_{t−1}`, with `ᾱ_0 = 1`.
    pub fn alpha_bar_prev(&self, t: usize) -> f64 {
        if t == 1 {
            1.0
        } else {
            self.alpha_bar[t - 2]
        }
    }

    pub fn eta(&self, t: usize) -> f64 {
        self.eta[t - 1]
    }

    pub fn sigma_marginal(&self, t: usize) -> f64 {
        self.sigma_marginal[t - 1]
    }

    pub fn sigma_posterior(&self, t: usize) -> f64 {
        self.sigma_posterior[t - 1]
    }

    pub fn lambda(&self, t: usize) -> f64 {
        self.lambda[t - 1]
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn etas(&self) -> &[f64] {
        &self.eta
    }

    pub fn sigmas_marginal(&self) -> &[f64] {
        &self.sigma_marginal
    }

    pub fn sigmas_posterior(&self) -> &[f64] {
        &self.sigma_posterior
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambda
    }

    fn scaled_endpoints(&self) -> (f64, f64) {
        let n = self.steps() as f64;
        (n * self.beta_start, n * self.beta_end)
    }

    /// Continuous rate `β(t)`.
    pub fn beta_continuous(&self, t: f64) -> f64 {
        let (b0, b1) = self.scaled_endpoints();
        b0 + t * (b1 - b0)
    }

    /// `log η(t) = −½(b₀t + ½(b₁ − b₀)t²)`.
    pub fn log_eta(&self, t: f64) -> f64 {
        let (b0, b1) = self.scaled_endpoints();
        -0.5 * (b0 * t + 0.5 * (b1 - b0) * t * t)
    }

    pub fn eta_continuous(&self, t: f64) -> f64 {
        self.log_eta(t).exp()
    }

    /// `σ(t) = √(1 − η(t)²)`, evaluated without cancellation for small t.
    pub fn sigma_continuous(&self, t: f64) -> f64 {
        (-(2.0 * self.log_eta(t)).exp_m1()).sqrt()
    }

    pub fn lambda_continuous(&self, t: f64) -> f64 {
        let log_eta = self.log_eta(t);
        log_eta - 0.5 * (-(2.0 * log_eta).exp_m1()).ln()
    }

    /// `(f, g², η, σ, λ)` at continuous time `t ∈ [0, 1]`.
    pub fn continuous_coefficients(&self, t: f64) -> Result<ContinuousCoefficients> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::domain(format!("continuous time {t} outside [0, 1]")));
        }
        let beta = self.beta_continuous(t);
        let eta = self.eta_continuous(t);
        let sigma = self.sigma_continuous(t);
        if !(sigma > 0.0) {
            return Err(Error::Numeric(format!("marginal std underflows at t = {t}")));
        }
        let lambda = self.lambda_continuous(t);
        let out = ContinuousCoefficients {
            f: -0.5 * beta,
            g2: beta,
            eta,
            sigma,
            lambda,
        };
        if ![out.f, out.g2, out.eta, out.sigma, out.lambda]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(Error::Numeric(format!("non-finite coefficients at t = {t}")));
        }
        Ok(out)
    }

    /// Inverse of the strictly decreasing `λ(t)` on `[T_MIN, 1]`, by bisection.
    pub fn t_from_lambda(&self, lam: f64) -> Result<f64> {
        let (lo_lam, hi_lam) = (self.lambda_continuous(1.0), self.lambda_continuous(T_MIN));
        let slack = 1e-12 * (1.0 + lam.abs());
        if !lam.is_finite() || lam < lo_lam - slack || lam > hi_lam + slack {
            return Err(Error::domain(format!(
                "lambda {lam} outside attainable range [{lo_lam}, {hi_lam}]"
            )));
        }
        if lam <= lo_lam {
            return Ok(1.0);
        }
        if lam >= hi_lam {
            return Ok(T_MIN);
        }
        // λ decreases in t: λ(lo) > lam > λ(hi).
        let (mut lo, mut hi) = (T_MIN, 1.0);
        for _ in 0..BISECTION_ITERS {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.lambda_continuous(mid) > lam {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

/// Maps a continuous solver time onto the trained model's discrete time axis:
/// `1000·max(t_c − 1/T, 0)`. The factor 1000 is fixed regardless of `T`.
pub fn discretize_time(t_continuous: f64, steps: usize) -> f64 {
    1000.0 * (t_continuous - 1.0 / steps as f64).max(0.0)
}
