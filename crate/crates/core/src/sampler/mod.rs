//! Inference paths: ancestral sampling over the discrete chain, the
//! probability-flow ODE with a fixed-step RK4 baseline, and DPM-Solver-1/2/3
//! driven by an NFE budget.

mod ancestral;
mod dpm;
mod ode;
pub mod study;

pub use ancestral::{ancestral_sample, ancestral_step};
pub use dpm::{
    dpm1_step, dpm2_step, dpm3_step, dpm_solve, dpm_sample, dpm_step, plan_nfe, SamplePlan, Segment,
};
pub use ode::{ode_rhs, rk4_integrate, rk4_sample, TimeGrid};

use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use crate::denoiser::{NoisePredictor, TimeArg};
use crate::error::Result;
use crate::schedule::VarianceSchedule;
use crate::tensor::ImageTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleOptions {
    pub seed: u64,
    /// Keep a copy of the state after every n-th step.
    pub snapshot_every: Option<usize>,
}

impl SampleOptions {
    pub fn seeded(seed: u64) -> Self {
        Self {
            seed,
            snapshot_every: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    /// Time the step starts from (discrete step index for ancestral sampling).
    pub t_from: f64,
    pub t_to: f64,
    pub calls: usize,
    pub snapshot: Option<ImageTensor>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SamplerTrace {
    pub steps: Vec<StepRecord>,
    /// Total predictor calls.
    pub nfe: usize,
    pub duration: Duration,
}

impl SamplerTrace {
    pub(crate) fn record(
        &mut self,
        t_from: f64,
        t_to: f64,
        calls: usize,
        index: usize,
        state: &ImageTensor,
        options: &SampleOptions,
    ) {
        let snapshot = options
            .snapshot_every
            .filter(|&n| n > 0 && (index + 1) % n == 0)
            .map(|_| state.clone());
        self.nfe += calls;
        self.steps.push(StepRecord {
            t_from,
            t_to,
            calls,
            snapshot,
        });
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,t_from,t_to,calls\n");
        for (i, s) in self.steps.iter().enumerate() {
            out.push_str(&format!("{i},{:.17e},{:.17e},{}\n", s.t_from, s.t_to, s.calls));
        }
        out
    }
}

/// Forwards to an inner predictor, counting calls.
pub struct CountingPredictor<'a, P: ?Sized> {
    inner: &'a P,
    calls: AtomicUsize,
}

impl<'a, P: NoisePredictor + ?Sized> CountingPredictor<'a, P> {
    pub fn new(inner: &'a P) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    /// Returns the count and resets it to zero.
    pub fn take(&self) -> usize {
        self.calls.swap(0, Ordering::Relaxed)
    }
}

impl<P: NoisePredictor + ?Sized> NoisePredictor for CountingPredictor<'_, P> {
    fn predict(
        &self,
        y_t: &ImageTensor,
        cond: Option<&ImageTensor>,
        t: TimeArg,
        schedule: &VarianceSchedule,
    ) -> Result<ImageTensor> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.predict(y_t, cond, t, schedule)
    }
}

/// Sampler selection as exposed to the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplerKind {
    Ancestral,
    Rk4 { steps: usize },
    Dpm { nfe: usize },
}

impl SamplerKind {
    pub fn label(&self) -> String {
        match self {
            SamplerKind::Ancestral => "ancestral".into(),
            SamplerKind::Rk4 { steps } => format!("rk4-{steps}"),
            SamplerKind::Dpm { nfe } => format!("dpm-{nfe}"),
        }
    }
}

/// Runs the selected sampler for one conditioning image.
pub fn run_sampler<P: NoisePredictor + ?Sized>(
    kind: SamplerKind,
    cond: Option<&ImageTensor>,
    shape: crate::tensor::Shape,
    net: &P,
    schedule: &VarianceSchedule,
    options: &SampleOptions,
) -> Result<(ImageTensor, SamplerTrace)> {
    match kind {
        SamplerKind::Ancestral => ancestral_sample(cond, shape, net, schedule, options),
        SamplerKind::Rk4 { steps } => {
            rk4_sample(cond, shape, net, schedule, steps, TimeGrid::UniformT, options)
        }
        SamplerKind::Dpm { nfe } => {
            let plan = plan_nfe(nfe, 1.0, crate::schedule::T_MIN, schedule)?;
            dpm_sample(cond, shape, net, schedule, &plan, options)
        }
    }
}
