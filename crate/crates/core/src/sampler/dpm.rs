//! DPM-Solver: exponential integrators for the probability-flow ODE in the
//! half-log-SNR variable λ = log(η/σ).
//!
//! Over a step from `s` to `t` with `h = λ_t − λ_s`, the linear part is
//! integrated exactly (`η_t/η_s`) and the noise-prediction integral
//! `∫ e^{−λ} D̂ dλ` by a Taylor expansion of order 1, 2 or 3.

use std::time::Instant;

use super::{CountingPredictor, SampleOptions, SamplerTrace};
use crate::denoiser::{NoisePredictor, TimeArg};
use crate::error::{Error, Result};
use crate::rng::{normal_tensor, Role, StreamKey};
use crate::schedule::{VarianceSchedule, T_MIN};
use crate::tensor::{ImageTensor, Shape};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub order: usize,
    pub t_start: f64,
    pub t_end: f64,
}

/// Ordered solver steps; times decrease contiguously and orders sum to the NFE.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePlan {
    segments: Vec<Segment>,
    total_nfe: usize,
}

impl SamplePlan {
    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::domain("sample plan has no segments"));
        }
        for (i, s) in segments.iter().enumerate() {
            if !(1..=3).contains(&s.order) {
                return Err(Error::domain(format!("segment {i}: order {} not in 1..=3", s.order)));
            }
            if !(s.t_end < s.t_start) || s.t_end < T_MIN || s.t_start > 1.0 {
                return Err(Error::domain(format!(
                    "segment {i}: times must decrease within [{T_MIN}, 1], got {} -> {}",
                    s.t_start, s.t_end
                )));
            }
            if i > 0 && segments[i - 1].t_end != s.t_start {
                return Err(Error::domain(format!("segment {i} does not start where {} ends", i - 1)));
            }
        }
        let total_nfe = segments.iter().map(|s| s.order).sum();
        Ok(Self { segments, total_nfe })
    }

    /// `steps` segments of one order, uniform in λ.
    pub fn uniform(
        order: usize,
        steps: usize,
        t_start: f64,
        t_end: f64,
        schedule: &VarianceSchedule,
    ) -> Result<Self> {
        if steps == 0 {
            return Err(Error::domain("plan needs at least one step"));
        }
        Self::from_orders(&vec![order; steps], t_start, t_end, schedule)
    }

    fn from_orders(orders: &[usize], t_start: f64, t_end: f64, schedule: &VarianceSchedule) -> Result<Self> {
        let times = super::TimeGrid::UniformLambda.times(orders.len(), t_start, t_end, schedule)?;
        Self::new(
            orders
                .iter()
                .zip(times.windows(2))
                .map(|(&order, w)| Segment {
                    order,
                    t_start: w[0],
                    t_end: w[1],
                })
                .collect(),
        )
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn total_nfe(&self) -> usize {
        self.total_nfe
    }
}

/// Splits an NFE budget: as many third-order steps as fit, then one first-
/// or second-order step for the remainder. Step boundaries are uniform in λ.
pub fn plan_nfe(budget: usize, t_start: f64, t_end: f64, schedule: &VarianceSchedule) -> Result<SamplePlan> {
    if budget == 0 {
        return Err(Error::Usage("NFE budget must be at least 1".into()));
    }
    let mut orders = vec![3; budget / 3];
    match budget % 3 {
        0 => {}
        r => orders.push(r),
    }
    SamplePlan::from_orders(&orders, t_start, t_end, schedule)
}

struct StepFrame {
    eta_s: f64,
    lambda_s: f64,
    h: f64,
    eta_t: f64,
    sigma_t: f64,
}

fn frame(t_prev: f64, t: f64, schedule: &VarianceSchedule) -> Result<StepFrame> {
    if !(t < t_prev) || t < T_MIN || t_prev > 1.0 {
        return Err(Error::domain(format!(
            "solver step needs {T_MIN} <= t < t_prev <= 1, got {t_prev} -> {t}"
        )));
    }
    let lambda_s = schedule.lambda_continuous(t_prev);
    Ok(StepFrame {
        eta_s: schedule.eta_continuous(t_prev),
        lambda_s,
        h: schedule.lambda_continuous(t) - lambda_s,
        eta_t: schedule.eta_continuous(t),
        sigma_t: schedule.sigma_continuous(t),
    })
}

fn predict<P: NoisePredictor + ?Sized>(
    net: &P,
    y: &ImageTensor,
    cond: Option<&ImageTensor>,
    t: f64,
    schedule: &VarianceSchedule,
) -> Result<ImageTensor> {
    let d = net.predict(y, cond, TimeArg::Continuous(t), schedule)?;
    y.ensure_same_shape(&d)?;
    Ok(d)
}

/// First-order update from the prediction `d0` at `t_prev`, evaluated at an
/// intermediate λ-offset `r·h`: returns `(η_u/η_s)·y − σ_u(e^{rh} − 1)·d0`.
fn first_order_to(
    y: &ImageTensor,
    d0: &ImageTensor,
    f: &StepFrame,
    r: f64,
    schedule: &VarianceSchedule,
) -> Result<(f64, ImageTensor, f64)> {
    let u_t = schedule.t_from_lambda(f.lambda_s + r * f.h)?;
    let eta_u = schedule.eta_continuous(u_t);
    let sigma_u = schedule.sigma_continuous(u_t);
    Ok((u_t, y.lincomb(eta_u / f.eta_s, d0, -sigma_u * (r * f.h).exp_m1()), sigma_u))
}

pub fn dpm1_step<P: NoisePredictor + ?Sized>(
    y: &ImageTensor,
    cond: Option<&ImageTensor>,
    t_prev: f64,
    t: f64,
    net: &P,
    schedule: &VarianceSchedule,
) -> Result<ImageTensor> {
    let f = frame(t_prev, t, schedule)?;
    let d0 = predict(net, y, cond, t_prev, schedule)?;
    Ok(y.lincomb(f.eta_t / f.eta_s, &d0, -f.sigma_t * f.h.exp_m1()))
}

/// Second order: one extra evaluation at the λ-midpoint.
pub fn dpm2_step<P: NoisePredictor + ?Sized>(
    y: &ImageTensor,
    cond: Option<&ImageTensor>,
    t_prev: f64,
    t: f64,
    net: &P,
    schedule: &VarianceSchedule,
) -> Result<ImageTensor> {
    let f = frame(t_prev, t, schedule)?;
    let d0 = predict(net, y, cond, t_prev, schedule)?;
    let (s_mid, u, _) = first_order_to(y, &d0, &f, 0.5, schedule)?;
    let d_mid = predict(net, &u, cond, s_mid, schedule)?;
    Ok(y.lincomb(f.eta_t / f.eta_s, &d_mid, -f.sigma_t * f.h.exp_m1()))
}

/// Third order with intermediate λ-offsets `h/3` and `2h/3`.
pub fn dpm3_step<P: NoisePredictor + ?Sized>(
    y: &ImageTensor,
    cond: Option<&ImageTensor>,
    t_prev: f64,
    t: f64,
    net: &P,
    schedule: &VarianceSchedule,
) -> Result<ImageTensor> {
    const R1: f64 = 1.0 / 3.0;
    const R2: f64 = 2.0 / 3.0;
    let f = frame(t_prev, t, schedule)?;
    let h = f.h;
    let d0 = predict(net, y, cond, t_prev, schedule)?;

    let (s1, u1, _) = first_order_to(y, &d0, &f, R1, schedule)?;
    let v1 = predict(net, &u1, cond, s1, schedule)?.sub(&d0);

    let (s2, mut u2, sigma_s2) = first_order_to(y, &d0, &f, R2, schedule)?;
    let phi2 = (R2 * h).exp_m1() / (R2 * h) - 1.0;
    u2.axpy(-sigma_s2 * R2 / R1 * phi2, &v1);
    let v2 = predict(net, &u2, cond, s2, schedule)?.sub(&d0);

    let phi = h.exp_m1() / h - 1.0;
    let mut out = y.lincomb(f.eta_t / f.eta_s, &d0, -f.sigma_t * h.exp_m1());
    out.axpy(-f.sigma_t / R2 * phi, &v2);
    Ok(out)
}

pub fn dpm_step<P: NoisePredictor + ?Sized>(
    order: usize,
    y: &ImageTensor,
    cond: Option<&ImageTensor>,
    t_prev: f64,
    t: f64,
    net: &P,
    schedule: &VarianceSchedule,
) -> Result<ImageTensor> {
    match order {
        1 => dpm1_step(y, cond, t_prev, t, net, schedule),
        2 => dpm2_step(y, cond, t_prev, t, net, schedule),
        3 => dpm3_step(y, cond, t_prev, t, net, schedule),
        other => Err(Error::domain(format!("solver order {other} not in 1..=3"))),
    }
}

/// Runs every segment of `plan` from a given starting state.
pub fn dpm_solve<P: NoisePredictor + ?Sized>(
    y_start: &ImageTensor,
    cond: Option<&ImageTensor>,
    net: &P,
    schedule: &VarianceSchedule,
    plan: &SamplePlan,
) -> Result<ImageTensor> {
    plan.segments().iter().try_fold(y_start.clone(), |y, s| {
        dpm_step(s.order, &y, cond, s.t_start, s.t_end, net, schedule)
    })
}

/// DPM-Solver sampling from `y(1) ~ N(0, I)`; deterministic after the initial draw.
pub fn dpm_sample<P: NoisePredictor + ?Sized>(
    cond: Option<&ImageTensor>,
    shape: Shape,
    net: &P,
    schedule: &VarianceSchedule,
    plan: &SamplePlan,
    options: &SampleOptions,
) -> Result<(ImageTensor, SamplerTrace)> {
    let start = Instant::now();
    let counted = CountingPredictor::new(net);
    let mut trace = SamplerTrace::default();
    let mut y = normal_tensor(
        &mut StreamKey::new(options.seed).stream(Role::InitialNoise, &[]),
        shape,
    );
    for (i, s) in plan.segments().iter().enumerate() {
        y = dpm_step(s.order, &y, cond, s.t_start, s.t_end, &counted, schedule)?;
        trace.record(s.t_start, s.t_end, counted.take(), i, &y, options);
    }
    trace.duration = start.elapsed();
    Ok((y, trace))
}
