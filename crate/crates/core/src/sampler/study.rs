//! Empirical convergence orders of DPM-Solver-1/2/3 on a scalar Gaussian
//! data law, where the probability-flow ODE has a closed-form solution.

use super::{dpm_solve, SamplePlan};
use crate::denoiser::GaussianOracle;
use crate::error::{Error, Result};
use crate::schedule::{VarianceSchedule, T_MIN};
use crate::tensor::ImageTensor;

pub const DEFAULT_LADDER: [usize; 6] = [8, 16, 32, 64, 128, 256];
pub const DEFAULT_START_POINTS: [f64; 5] = [-2.0, -1.0, 0.5, 1.5, 2.5];

#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    pub mu0: f64,
    pub s0: f64,
    pub ladder: Vec<usize>,
    /// Values of `y(1)` integrated down to `T_MIN`.
    pub start_points: Vec<f64>,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            mu0: 0.3,
            s0: 0.7,
            ladder: DEFAULT_LADDER.to_vec(),
            start_points: DEFAULT_START_POINTS.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderFit {
    pub order: usize,
    /// Mean absolute endpoint error per ladder entry.
    pub errors: Vec<f64>,
    /// Negated log-log slope of error against step count.
    pub slope: f64,
    pub r_squared: f64,
}

/// Exact probability-flow trajectory for data `N(mu0, s0²)`: the flow is
/// affine, `y(t) = m(t) + (y(1) − m(1))·sqrt(v(t)/v(1))` with `m = η·mu0`
/// and `v = η²s0² + σ²`.
pub fn exact_gaussian_flow(y1: f64, t: f64, mu0: f64, s0: f64, schedule: &VarianceSchedule) -> f64 {
    let v = |t: f64| {
        let e = schedule.eta_continuous(t);
        let s = schedule.sigma_continuous(t);
        e * e * s0 * s0 + s * s
    };
    let m = |t: f64| schedule.eta_continuous(t) * mu0;
    m(t) + (y1 - m(1.0)) * (v(t) / v(1.0)).sqrt()
}

/// Least-squares line through `(x, y)`; returns `(slope, intercept, R²)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<(f64, f64, f64)> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::domain("linear fit needs at least two paired points"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    if sxx == 0.0 {
        return Err(Error::domain("linear fit needs distinct x values"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - intercept - slope * a).powi(2))
        .sum();
    let r2 = if syy == 0.0 { 1.0 } else { 1.0 - sse / syy };
    Ok((slope, intercept, r2))
}

/// Endpoint error of one solver order at every rung of the ladder.
pub fn order_errors(order: usize, config: &StudyConfig, schedule: &VarianceSchedule) -> Result<Vec<f64>> {
    if config.start_points.is_empty() {
        return Err(Error::domain("convergence study needs start points"));
    }
    let oracle = GaussianOracle::scalar(config.mu0, config.s0)?;
    let n = config.start_points.len();
    let y1 = ImageTensor::from_vec((1, 1, n), config.start_points.clone())?;
    let exact: Vec<f64> = config
        .start_points
        .iter()
        .map(|&y| exact_gaussian_flow(y, T_MIN, config.mu0, config.s0, schedule))
        .collect();
    config
        .ladder
        .iter()
        .map(|&steps| {
            let plan = SamplePlan::uniform(order, steps, 1.0, T_MIN, schedule)?;
            let out = dpm_solve(&y1, None, &oracle, schedule, &plan)?;
            Ok(out
                .as_slice()
                .iter()
                .zip(&exact)
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>()
                / n as f64)
        })
        .collect()
}

/// Fits the convergence order of DPM-Solver-`order`.
pub fn fit_order(order: usize, config: &StudyConfig, schedule: &VarianceSchedule) -> Result<OrderFit> {
    if config.ladder.len() < 2 {
        return Err(Error::domain("convergence study needs at least two step counts"));
    }
    let errors = order_errors(order, config, schedule)?;
    if let Some(e) = errors.iter().find(|e| !(**e > 0.0 && e.is_finite())) {
        return Err(Error::Numeric(format!(
            "endpoint error {e} cannot enter a log-log fit"
        )));
    }
    let x: Vec<f64> = config.ladder.iter().map(|&n| (n as f64).ln()).collect();
    let y: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let (slope, _, r_squared) = linear_fit(&x, &y)?;
    Ok(OrderFit {
        order,
        errors,
        slope: -slope,
        r_squared,
    })
}

/// Fits all three solver orders.
pub fn run_study(config: &StudyConfig, schedule: &VarianceSchedule) -> Result<Vec<OrderFit>> {
    (1..=3).map(|k| fit_order(k, config, schedule)).collect()
}

pub fn study_csv(fits: &[OrderFit]) -> String {
    let mut out = String::from("order,slope,r_squared\n");
    for f in fits {
        out.push_str(&format!("{},{:.6},{:.6}\n", f.order, f.slope, f.r_squared));
    }
    out
}
