use diffusion_core::dataset::PairedDataset;
use diffusion_core::denoiser::{Architecture, ConvDenoiser, GaussianOracle, NoisePredictor};
use diffusion_core::rng::StreamKey;
use diffusion_core::sampler::{
    ancestral_sample, dpm_sample, plan_nfe, rk4_sample, run_sampler, SampleOptions, SamplerKind,
    TimeGrid,
};
use diffusion_core::schedule::{VarianceSchedule, T_MIN};
use diffusion_core::tensor::ImageTensor;
use diffusion_core::trainer::{train, TrainConfig};

fn schedule() -> VarianceSchedule {
    VarianceSchedule::linear(1000, 1e-4, 0.02).unwrap()
}

fn moments(t: &ImageTensor) -> (f64, f64) {
    let n = t.len() as f64;
    let m = t.mean();
    (m, t.as_slice().iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0))
}

#[test]
fn dpm_50_reaches_the_gaussian_marginal() {
    // 10⁴ independent pixels act as 10⁴ scalar chains.
    let s = schedule();
    let oracle = GaussianOracle::scalar(0.3, 0.7).unwrap();
    let plan = plan_nfe(50, 1.0, T_MIN, &s).unwrap();
    let (out, trace) = dpm_sample(None, (1, 100, 100), &oracle, &s, &plan, &SampleOptions::seeded(1)).unwrap();
    assert_eq!(trace.nfe, 50);
    let (eta, sigma) = (s.eta_continuous(T_MIN), s.sigma_continuous(T_MIN));
    let (want_mean, want_var) = oracle.marginal(0, eta, sigma);
    let (mean, var) = moments(&out);
    let n = out.len() as f64;
    assert!((mean - want_mean).abs() < 4.0 * (want_var / n).sqrt(), "{mean} vs {want_mean}");
    assert!((var / want_var - 1.0).abs() < 4.0 * (2.0 / n).sqrt(), "{var} vs {want_var}");
}

#[test]
fn rk4_reaches_the_gaussian_marginal() {
    let s = schedule();
    let oracle = GaussianOracle::scalar(-0.2, 0.5).unwrap();
    let (out, trace) = rk4_sample(
        None,
        (1, 100, 100),
        &oracle,
        &s,
        100,
        TimeGrid::UniformLambda,
        &SampleOptions::seeded(2),
    )
    .unwrap();
    assert_eq!(trace.nfe, 400);
    let (want_mean, want_var) = oracle.marginal(0, s.eta_continuous(T_MIN), s.sigma_continuous(T_MIN));
    let (mean, var) = moments(&out);
    let n = out.len() as f64;
    assert!((mean - want_mean).abs() < 4.0 * (want_var / n).sqrt());
    assert!((var / want_var - 1.0).abs() < 4.0 * (2.0 / n).sqrt());
}

#[test]
fn ancestral_chain_recovers_shifted_gaussian() {
    let s = schedule();
    let oracle = GaussianOracle::scalar(0.3, 0.7).unwrap();
    let (out, trace) = ancestral_sample(None, (1, 100, 100), &oracle, &s, &SampleOptions::seeded(3)).unwrap();
    assert_eq!(trace.nfe, 1000);
    let (mean, var) = moments(&out);
    assert!((mean - 0.3).abs() < 0.05, "{mean}");
    assert!((var - 0.49).abs() < 0.1, "{var}");
}

#[test]
fn samplers_are_reproducible_and_snapshot_on_request() {
    let s = schedule();
    let net = ConvDenoiser::init(Architecture::default(), StreamKey::new(4)).unwrap();
    let cond = diffusion_core::dataset::generate_phantom(16, 1).unwrap();
    for kind in [SamplerKind::Dpm { nfe: 7 }, SamplerKind::Rk4 { steps: 3 }] {
        let opts = SampleOptions {
            seed: 8,
            snapshot_every: Some(2),
        };
        let (a, ta) = run_sampler(kind, Some(&cond), cond.shape(), &net, &s, &opts).unwrap();
        let (b, tb) = run_sampler(kind, Some(&cond), cond.shape(), &net, &s, &opts).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta.to_csv(), tb.to_csv());
        let snaps = ta.steps.iter().filter(|r| r.snapshot.is_some()).count();
        assert_eq!(snaps, ta.steps.len() / 2);
        assert!(a.is_finite());
    }
}

#[test]
fn predictor_output_is_finite_over_the_time_grid() {
    let s = schedule();
    let net = ConvDenoiser::init(Architecture::default(), StreamKey::new(4)).unwrap();
    let oracle = GaussianOracle::scalar(0.1, 0.4).unwrap();
    let y = diffusion_core::dataset::generate_phantom(16, 2).unwrap();
    for i in 0..=50 {
        let t = T_MIN + (1.0 - T_MIN) * i as f64 / 50.0;
        let arg = diffusion_core::denoiser::TimeArg::Continuous(t);
        for out in [net.predict(&y, Some(&y), arg, &s).unwrap(), oracle.predict(&y, None, arg, &s).unwrap()] {
            assert_eq!(out.shape(), y.shape());
            assert!(out.is_finite());
        }
    }
}

#[test]
fn ancestral_and_dpm_agree_in_mean_with_exact_predictor() {
    // Same comparison as the trained-network check below, with an exact score,
    // so any disagreement would come from the samplers themselves.
    let s = schedule();
    let mu0 = diffusion_core::dataset::generate_phantom(16, 5).unwrap();
    let oracle = GaussianOracle::new(mu0.clone(), 0.2).unwrap();
    let runs = 512;
    let collect = |kind| {
        (0..runs)
            .map(|k| run_sampler(kind, None, mu0.shape(), &oracle, &s, &SampleOptions::seeded(k)).unwrap().0)
            .collect::<Vec<_>>()
    };
    let anc = collect(SamplerKind::Ancestral);
    let dpm = collect(SamplerKind::Dpm { nfe: 50 });
    let n = runs as f64;
    let mut outside = 0usize;
    for p in 0..mu0.len() {
        let stats = |xs: &[ImageTensor]| {
            let m = xs.iter().map(|x| x.as_slice()[p]).sum::<f64>() / n;
            let v = xs.iter().map(|x| (x.as_slice()[p] - m).powi(2)).sum::<f64>() / (n - 1.0);
            (m, v)
        };
        let ((ma, va), (md, vd)) = (stats(&anc), stats(&dpm));
        if (ma - md).abs() > 3.0 * ((va + vd) / n).sqrt() {
            outside += 1;
        }
    }
    assert!(outside * 100 <= 2 * mu0.len(), "{outside} of {} pixels differ", mu0.len());
}

/// Per-pixel mean images of ancestral and DPM-50 samples from one trained
/// network agree within Monte-Carlo error. The reverse chain and the flow ODE
/// share marginals only for an exact noise predictor, so this measures how far
/// the trained network is from one. Slow (512 chains of 1000 network
/// evaluations); run with `--ignored`.
#[test]
#[ignore]
fn ancestral_and_dpm_agree_in_mean() {
    let s = schedule();
    let data = PairedDataset::synthetic(16, 32, 0.25, 1).unwrap();
    let cfg = TrainConfig {
        max_iterations: 1000,
        learning_rate: 3e-3,
        ..Default::default()
    };
    let net = train(&data, ConvDenoiser::init(Architecture::default(), StreamKey::new(0)).unwrap(), &cfg, &s)
        .unwrap()
        .checkpoint
        .net;
    let cond = data.pair(0).0.clone();
    let runs = 512;
    let collect = |kind| {
        (0..runs)
            .map(|k| run_sampler(kind, Some(&cond), cond.shape(), &net, &s, &SampleOptions::seeded(k)).unwrap().0)
            .collect::<Vec<_>>()
    };
    let anc = collect(SamplerKind::Ancestral);
    let dpm = collect(SamplerKind::Dpm { nfe: 50 });
    let n = runs as f64;
    let mut outside = 0usize;
    for p in 0..cond.len() {
        let stats = |xs: &[ImageTensor]| {
            let m = xs.iter().map(|x| x.as_slice()[p]).sum::<f64>() / n;
            let v = xs.iter().map(|x| (x.as_slice()[p] - m).powi(2)).sum::<f64>() / (n - 1.0);
            (m, v)
        };
        let ((ma, va), (md, vd)) = (stats(&anc), stats(&dpm));
        if (ma - md).abs() > 3.0 * ((va + vd) / n).sqrt() {
            outside += 1;
        }
    }
    // Under agreement about 0.3% of pixels exceed 3 standard errors by chance.
    assert!(outside * 100 <= cond.len(), "{outside} of {} pixels differ", cond.len());
}
