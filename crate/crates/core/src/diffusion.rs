//! Forward noising process and its Gaussian posterior.
//!
//! Noise is always supplied by the caller, so every function here is
//! deterministic and affine in its tensor arguments.

use crate::error::Result;
use crate::schedule::VarianceSchedule;
use crate::tensor::ImageTensor;

/// Mean and isotropic std of `q(y_{t−1} | y_t, y_0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorParams {
    pub mean: ImageTensor,
    pub std: f64,
}

/// One forward step `√(1−β_t)·y_{t−1} + √β_t·noise`.
pub fn forward_step_sample(
    y_prev: &ImageTensor,
    t: usize,
    noise: &ImageTensor,
    schedule: &VarianceSchedule,
) -> Result<ImageTensor> {
    schedule.check_step(t)?;
    y_prev.ensure_same_shape(noise)?;
    let beta = schedule.beta(t);
    Ok(y_prev.lincomb((1.0 - beta).sqrt(), noise, beta.sqrt()))
}

/// Closed-form marginal `√ᾱ_t·y_0 + √(1−ᾱ_t)·ε`.
pub fn forward_marginal_sample(
    y0: &ImageTensor,
    t: usize,
    eps: &ImageTensor,
    schedule: &VarianceSchedule,
) -> Result<ImageTensor> {
    schedule.check_step(t)?;
    y0.ensure_same_shape(eps)?;
    Ok(y0.lincomb(schedule.eta(t), eps, schedule.sigma_marginal(t)))
}

/// Posterior mean in terms of `(y_t, y_0)` and the posterior std.
pub fn posterior_params(
    y_t: &ImageTensor,
    y0: &ImageTensor,
    t: usize,
    schedule: &VarianceSchedule,
) -> Result<PosteriorParams> {
    schedule.check_step(t)?;
    y_t.ensure_same_shape(y0)?;
    let (mean_yt, mean_y0) = posterior_coefficients(t, schedule);
    Ok(PosteriorParams {
        mean: y_t.lincomb(mean_yt, y0, mean_y0),
        std: schedule.sigma_posterior(t),
    })
}

/// Coefficients `(c_t, c_0)` of `μ̃ = c_t·y_t + c_0·y_0`.
pub fn posterior_coefficients(t: usize, schedule: &VarianceSchedule) -> (f64, f64) {
    let alpha = schedule.alpha(t);
    let ab = schedule.alpha_bar(t);
    let ab_prev = schedule.alpha_bar_prev(t);
    let denom = 1.0 - ab;
    (
        alpha.sqrt() * (1.0 - ab_prev) / denom,
        ab_prev.sqrt() * (1.0 - alpha) / denom,
    )
}

/// Posterior mean in terms of `(y_t, ε)`: `(y_t − (1−α_t)/√(1−ᾱ_t)·ε)/√α_t`.
pub fn posterior_mean_from_eps(
    y_t: &ImageTensor,
    eps: &ImageTensor,
    t: usize,
    schedule: &VarianceSchedule,
) -> Result<ImageTensor> {
    schedule.check_step(t)?;
    y_t.ensure_same_shape(eps)?;
    let inv_sqrt_alpha = 1.0 / schedule.alpha(t).sqrt();
    let eps_coef = schedule.beta(t) / schedule.sigma_marginal(t);
    Ok(y_t.lincomb(inv_sqrt_alpha, eps, -inv_sqrt_alpha * eps_coef))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal_tensor, Role, StreamKey};
    use crate::schedule::ScheduleDescriptor;
    use proptest::prelude::*;

    fn two_step() -> VarianceSchedule {
        VarianceSchedule::linear(2, 0.1, 0.2).unwrap()
    }

    fn default_schedule() -> VarianceSchedule {
        VarianceSchedule::from_descriptor(ScheduleDescriptor::default()).unwrap()
    }

    #[test]
    fn forward_step_branches() {
        let s = VarianceSchedule::from_betas(vec![0.19]).unwrap();
        let y = ImageTensor::from_vec((1, 1, 3), vec![1.0, -2.0, 0.5]).unwrap();
        let zero = ImageTensor::zeros(y.shape());
        let out = forward_step_sample(&y, 1, &zero, &s).unwrap();
        for (o, v) in out.as_slice().iter().zip(y.as_slice()) {
            assert!((o - 0.9 * v).abs() < 1e-15);
        }
        let out = forward_step_sample(&zero, 1, &y, &s).unwrap();
        for (o, v) in out.as_slice().iter().zip(y.as_slice()) {
            assert!((o - 0.19f64.sqrt() * v).abs() < 1e-15);
        }
    }

    #[test]
    fn errors_on_bad_step_or_shape() {
        let s = two_step();
        let a = ImageTensor::zeros((1, 2, 2));
        let b = ImageTensor::zeros((1, 2, 3));
        assert!(forward_step_sample(&a, 0, &a, &s).is_err());
        assert!(forward_marginal_sample(&a, 3, &a, &s).is_err());
        assert!(posterior_params(&a, &b, 1, &s).is_err());
        assert!(posterior_mean_from_eps(&a, &b, 2, &s).is_err());
    }

    #[test]
    fn marginal_hand_value() {
        let s = two_step();
        let out = forward_marginal_sample(&ImageTensor::scalar(1.0), 1, &ImageTensor::scalar(1.0), &s)
            .unwrap();
        assert!((out[(0, 0, 0)] - 1.264911).abs() < 1e-6);
        let noiseless =
            forward_marginal_sample(&ImageTensor::scalar(2.0), 2, &ImageTensor::scalar(0.0), &s).unwrap();
        assert!((noiseless[(0, 0, 0)] - 2.0 * 0.72f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn posterior_hand_values() {
        let s = two_step();
        let one = ImageTensor::scalar(1.0);
        let p = posterior_params(&one, &one, 2, &s).unwrap();
        assert!((p.mean[(0, 0, 0)] - 0.997069).abs() < 1e-6);
        assert!((p.std - 0.267261).abs() < 1e-6);

        let y0 = ImageTensor::scalar(-0.7);
        let p1 = posterior_params(&ImageTensor::scalar(3.0), &y0, 1, &s).unwrap();
        assert_eq!(p1.std, 0.0);
        assert!((p1.mean[(0, 0, 0)] + 0.7).abs() < 1e-15);
    }

    #[test]
    fn eps_form_hand_value() {
        // y_t built from y0 = 1, eps = 1 at t = 2; both posterior forms must agree.
        let s = two_step();
        let one = ImageTensor::scalar(1.0);
        let y_t = forward_marginal_sample(&one, 2, &one, &s).unwrap();
        assert!((y_t[(0, 0, 0)] - 1.377678).abs() < 1e-6);
        let from_eps = posterior_mean_from_eps(&y_t, &one, 2, &s).unwrap()[(0, 0, 0)];
        let from_y0 = posterior_params(&y_t, &one, 2, &s).unwrap().mean[(0, 0, 0)];
        assert!((from_eps - from_y0).abs() < 1e-12);
        // (1/√0.8)·(1.377678 − 0.2/0.529150) with the y0 = 1 reconstruction.
        assert!((from_eps - 1.118033989 * (1.377678 - 0.377964)).abs() < 2e-6);
        let zero = ImageTensor::scalar(0.0);
        let m = posterior_mean_from_eps(&y_t, &zero, 2, &s).unwrap()[(0, 0, 0)];
        assert!((m - y_t[(0, 0, 0)] / 0.8f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn coefficients_sum_to_one_as_beta_vanishes() {
        let s = VarianceSchedule::from_betas(vec![1e-8, 1e-8]).unwrap();
        let c = ImageTensor::scalar(0.37);
        let p = posterior_params(&c, &c, 2, &s).unwrap();
        assert!((p.mean[(0, 0, 0)] - 0.37).abs() < 1e-8);
    }

    #[test]
    fn both_posterior_forms_agree_on_random_triples() {
        let s = default_schedule();
        let key = StreamKey::new(11);
        for i in 0..200u64 {
            let mut rng = key.stream(Role::Split, &[i]);
            let t = 1 + (i as usize * 7919) % s.steps();
            let y0 = normal_tensor(&mut rng, (1, 3, 3));
            let eps = normal_tensor(&mut rng, (1, 3, 3));
            let y_t = forward_marginal_sample(&y0, t, &eps, &s).unwrap();
            let a = posterior_mean_from_eps(&y_t, &eps, t, &s).unwrap();
            let b = posterior_params(&y_t, &y0, t, &s).unwrap().mean;
            for (u, v) in a.as_slice().iter().zip(b.as_slice()) {
                assert!((u - v).abs() <= 1e-9 * v.abs().max(1.0), "t={t}: {u} vs {v}");
            }
        }
    }

    proptest! {
        #[test]
        fn operations_are_affine(
            u in prop::collection::vec(-3.0f64..3.0, 4),
            v in prop::collection::vec(-3.0f64..3.0, 4),
            n in prop::collection::vec(-3.0f64..3.0, 4),
            a in -2.0f64..2.0,
            b in -2.0f64..2.0,
            t in 1usize..=1000,
        ) {
            let s = default_schedule();
            let shape = (1, 2, 2);
            let u = ImageTensor::from_vec(shape, u).unwrap();
            let v = ImageTensor::from_vec(shape, v).unwrap();
            let n = ImageTensor::from_vec(shape, n).unwrap();
            let mix = u.lincomb(a, &v, b);
            let zero = ImageTensor::zeros(shape);

            // Affine maps: f(au + bv) − (a+b)·f(0) part is linear; compare after removing offset.
            let check = |f: &dyn Fn(&ImageTensor) -> ImageTensor| {
                let f0 = f(&zero);
                let lhs = f(&mix).sub(&f0);
                let rhs = f(&u).sub(&f0).lincomb(a, &f(&v).sub(&f0), b);
                lhs.max_abs_diff(&rhs)
            };
            prop_assert!(check(&|x| forward_step_sample(x, t, &n, &s).unwrap()) < 1e-12);
            prop_assert!(check(&|x| forward_marginal_sample(x, t, &n, &s).unwrap()) < 1e-12);
            prop_assert!(check(&|x| posterior_params(x, &n, t, &s).unwrap().mean) < 1e-12);
            prop_assert!(check(&|x| posterior_mean_from_eps(x, &n, t, &s).unwrap()) < 1e-9);
        }
    }
}
