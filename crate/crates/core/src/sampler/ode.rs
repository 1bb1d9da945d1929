use std::time::Instant;

use super::{CountingPredictor, SampleOptions, SamplerTrace};
use crate::denoiser::{NoisePredictor, TimeArg};
use crate::error::{Error, Result};
use crate::rng::{normal_tensor, Role, StreamKey};
use crate::schedule::{VarianceSchedule, T_MIN};
use crate::tensor::{ImageTensor, Shape};

/// Right-hand side of the probability-flow ODE in noise-prediction form,
/// `dy/dt = f(t)·y + g²(t)/(2σ_t)·D(y, x, t)`, with σ_t the marginal std.
pub fn ode_rhs<P: NoisePredictor + ?Sized>(
    y: &ImageTensor,
    cond: Option<&ImageTensor>,
    t: f64,
    net: &P,
    schedule: &VarianceSchedule,
) -> Result<ImageTensor> {
    if !(t >= T_MIN && t <= 1.0) {
        return Err(Error::domain(format!("ODE time {t} outside [{T_MIN}, 1]")));
    }
    let c = schedule.continuous_coefficients(t)?;
    let d = net.predict(y, cond, TimeArg::Continuous(t), schedule)?;
    y.ensure_same_shape(&d)?;
    Ok(y.lincomb(c.f, &d, c.g2 / (2.0 * c.sigma)))
}

/// Step placement for the RK4 baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TimeGrid {
    #[default]
    UniformT,
    UniformLambda,
}

impl TimeGrid {
    /// `steps + 1` decreasing times from `t_start` to `t_end`, endpoints exact.
    pub fn times(
        self,
        steps: usize,
        t_start: f64,
        t_end: f64,
        schedule: &VarianceSchedule,
    ) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(steps + 1);
        out.push(t_start);
        match self {
            TimeGrid::UniformT => {
                for i in 1..steps {
                    out.push(t_start + (t_end - t_start) * i as f64 / steps as f64);
                }
            }
            TimeGrid::UniformLambda => {
                let (l0, l1) = (schedule.lambda_continuous(t_start), schedule.lambda_continuous(t_end));
                for i in 1..steps {
                    out.push(schedule.t_from_lambda(l0 + (l1 - l0) * i as f64 / steps as f64)?);
                }
            }
        }
        out.push(t_end);
        Ok(out)
    }
}

/// Classical fixed-step RK4 from `t = 1` down to `T_MIN`, starting at `y_start`.
/// Returns the endpoint and the number of predictor calls (`4·steps`).
pub fn rk4_integrate<P: NoisePredictor + ?Sized>(
    y_start: &ImageTensor,
    cond: Option<&ImageTensor>,
    net: &P,
    schedule: &VarianceSchedule,
    steps: usize,
    grid: TimeGrid,
) -> Result<ImageTensor> {
    if steps == 0 {
        return Err(Error::domain("RK4 needs at least one step"));
    }
    let times = grid.times(steps, 1.0, T_MIN, schedule)?;
    let mut y = y_start.clone();
    for w in times.windows(2) {
        y = rk4_step(&y, cond, w[0], w[1], net, schedule)?;
    }
    Ok(y)
}

fn rk4_step<P: NoisePredictor + ?Sized>(
    y: &ImageTensor,
    cond: Option<&ImageTensor>,
    t0: f64,
    t1: f64,
    net: &P,
    schedule: &VarianceSchedule,
) -> Result<ImageTensor> {
    let h = t1 - t0;
    let mid = t0 + 0.5 * h;
    let k1 = ode_rhs(y, cond, t0, net, schedule)?;
    let k2 = ode_rhs(&y.lincomb(1.0, &k1, 0.5 * h), cond, mid, net, schedule)?;
    let k3 = ode_rhs(&y.lincomb(1.0, &k2, 0.5 * h), cond, mid, net, schedule)?;
    let k4 = ode_rhs(&y.lincomb(1.0, &k3, h), cond, t1, net, schedule)?;
    let mut out = y.clone();
    out.axpy(h / 6.0, &k1);
    out.axpy(h / 3.0, &k2);
    out.axpy(h / 3.0, &k3);
    out.axpy(h / 6.0, &k4);
    Ok(out)
}

/// RK4 sampling from `y(1) ~ N(0, I)`.
pub fn rk4_sample<P: NoisePredictor + ?Sized>(
    cond: Option<&ImageTensor>,
    shape: Shape,
    net: &P,
    schedule: &VarianceSchedule,
    steps: usize,
    grid: TimeGrid,
    options: &SampleOptions,
) -> Result<(ImageTensor, SamplerTrace)> {
    if steps == 0 {
        return Err(Error::domain("RK4 needs at least one step"));
    }
    let start = Instant::now();
    let counted = CountingPredictor::new(net);
    let mut trace = SamplerTrace::default();
    let mut y = normal_tensor(
        &mut StreamKey::new(options.seed).stream(Role::InitialNoise, &[]),
        shape,
    );
    let times = grid.times(steps, 1.0, T_MIN, schedule)?;
    for (i, w) in times.windows(2).enumerate() {
        y = rk4_step(&y, cond, w[0], w[1], &counted, schedule)?;
        trace.record(w[0], w[1], counted.take(), i, &y, options);
    }
    trace.duration = start.elapsed();
    Ok((y, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::{GaussianOracle, ZeroPredictor};
    use crate::schedule::ScheduleDescriptor;

    fn schedule() -> VarianceSchedule {
        VarianceSchedule::from_descriptor(ScheduleDescriptor::default()).unwrap()
    }

    #[test]
    fn zero_predictor_rhs_is_linear_drift() {
        let s = schedule();
        let y = ImageTensor::from_vec((1, 1, 2), vec![1.5, -0.5]).unwrap();
        let r = ode_rhs(&y, None, 0.4, &ZeroPredictor, &s).unwrap();
        let f = s.continuous_coefficients(0.4).unwrap().f;
        assert!(r.max_abs_diff(&y.scale(f)) < 1e-15);
        assert!(ode_rhs(&y, None, 1e-4, &ZeroPredictor, &s).is_err());
    }

    #[test]
    fn standard_normal_oracle_field_vanishes() {
        let s = schedule();
        let o = GaussianOracle::scalar(0.0, 1.0).unwrap();
        let y = ImageTensor::from_vec((1, 1, 3), vec![2.0, -1.0, 0.3]).unwrap();
        for &t in &[T_MIN, 0.01, 0.3, 0.77, 1.0] {
            let r = ode_rhs(&y, None, t, &o, &s).unwrap();
            let scale = s.continuous_coefficients(t).unwrap().g2 / s.sigma_continuous(t);
            assert!(r.as_slice().iter().all(|v| v.abs() < 1e-12 * scale.max(1.0)), "t={t}: {r:?}");
        }
        let (out, trace) = rk4_sample(None, (1, 2, 2), &o, &s, 10, TimeGrid::UniformT, &SampleOptions::seeded(3)).unwrap();
        let start = normal_tensor(&mut StreamKey::new(3).stream(Role::InitialNoise, &[]), (1, 2, 2));
        assert!(out.max_abs_diff(&start) < 1e-9);
        assert_eq!(trace.nfe, 40);
    }

    fn linear_error(steps: usize) -> f64 {
        let s = schedule();
        let y1 = ImageTensor::scalar(1.0);
        let y = rk4_integrate(&y1, None, &ZeroPredictor, &s, steps, TimeGrid::UniformT).unwrap();
        let exact = s.eta_continuous(T_MIN) / s.eta_continuous(1.0);
        (y[(0, 0, 0)] - exact).abs() / exact
    }

    #[test]
    fn rk4_is_fourth_order_on_the_linear_drift() {
        let (e1, e2, e3) = (linear_error(80), linear_error(160), linear_error(320));
        assert!(e1 < 1e-5, "{e1}");
        for ratio in [e1 / e2, e2 / e3] {
            assert!((ratio - 16.0).abs() < 1.0, "ratio {ratio}");
        }
    }

    #[test]
    fn oracle_variance_follows_the_marginal() {
        // Pixels spread over quantiles of the t = 1 marginal; the ODE must keep
        // the empirical variance equal to η²s₀² + σ² along the way.
        let s = schedule();
        let o = GaussianOracle::scalar(0.0, 0.5).unwrap();
        let v1 = o.marginal(0, s.eta_continuous(1.0), s.sigma_continuous(1.0)).1;
        let y1 = ImageTensor::from_vec((1, 1, 4), vec![-1.5, -0.5, 0.5, 1.5].iter().map(|v| v * v1.sqrt()).collect()).unwrap();
        let var = |t: &ImageTensor| t.as_slice().iter().map(|v| v * v).sum::<f64>() / 4.0;
        let v0 = var(&y1);
        let y = rk4_integrate(&y1, None, &o, &s, 400, TimeGrid::UniformLambda).unwrap();
        let target = o.marginal(0, s.eta_continuous(T_MIN), s.sigma_continuous(T_MIN)).1 / v1 * v0;
        assert!((var(&y) / target - 1.0).abs() < 1e-6, "{} vs {target}", var(&y));
    }

    #[test]
    fn grids_have_exact_endpoints() {
        let s = schedule();
        for grid in [TimeGrid::UniformT, TimeGrid::UniformLambda] {
            let ts = grid.times(7, 1.0, T_MIN, &s).unwrap();
            assert_eq!(ts.len(), 8);
            assert_eq!(ts[0], 1.0);
            assert_eq!(ts[7], T_MIN);
            assert!(ts.windows(2).all(|w| w[1] < w[0]));
        }
    }
}
