use std::time::Instant;

use super::{CountingPredictor, SampleOptions, SamplerTrace};
use crate::denoiser::{NoisePredictor, TimeArg};
use crate::diffusion::posterior_mean_from_eps;
use crate::error::{Error, Result};
use crate::rng::{normal_tensor, Role, StreamKey};
use crate::schedule::VarianceSchedule;
use crate::tensor::{ImageTensor, Shape};

/// One reverse step `y_{t−1} = μ(y_t, D(y_t, x, t)) + σ_t·z`, with σ_t the
/// posterior std. `z = None` means zero noise, which is mandatory at `t = 1`.
pub fn ancestral_step<P: NoisePredictor + ?Sized>(
    y_t: &ImageTensor,
    cond: Option<&ImageTensor>,
    t: usize,
    z: Option<&ImageTensor>,
    net: &P,
    schedule: &VarianceSchedule,
) -> Result<ImageTensor> {
    schedule.check_step(t)?;
    if let Some(z) = z {
        y_t.ensure_same_shape(z)?;
        if t == 1 && z.as_slice().iter().any(|&v| v != 0.0) {
            return Err(Error::domain("the final reverse step (t = 1) must not add noise"));
        }
    }
    let eps = net.predict(y_t, cond, TimeArg::Discrete(t), schedule)?;
    y_t.ensure_same_shape(&eps)?;
    let mut out = posterior_mean_from_eps(y_t, &eps, t, schedule)?;
    if let Some(z) = z {
        out.axpy(schedule.sigma_posterior(t), z);
    }
    Ok(out)
}

/// Full reverse chain from `y_T ~ N(0, I)` down to `y_0`. The initial draw
/// and each step's noise come from streams keyed by the seed (and step).
pub fn ancestral_sample<P: NoisePredictor + ?Sized>(
    cond: Option<&ImageTensor>,
    shape: Shape,
    net: &P,
    schedule: &VarianceSchedule,
    options: &SampleOptions,
) -> Result<(ImageTensor, SamplerTrace)> {
    let start = Instant::now();
    let key = StreamKey::new(options.seed);
    let counted = CountingPredictor::new(net);
    let mut trace = SamplerTrace::default();
    let mut y = normal_tensor(&mut key.stream(Role::InitialNoise, &[]), shape);
    let steps = schedule.steps();
    for (i, t) in (1..=steps).rev().enumerate() {
        let z = (t > 1).then(|| normal_tensor(&mut key.stream(Role::AncestralNoise, &[t as u64]), shape));
        y = ancestral_step(&y, cond, t, z.as_ref(), &counted, schedule)?;
        trace.record(t as f64, (t - 1) as f64, counted.take(), i, &y, options);
    }
    trace.duration = start.elapsed();
    Ok((y, trace))
}
