//! Image-quality metrics and the timing harness used for method comparisons.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::sampler::SamplerTrace;
use crate::tensor::ImageTensor;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
pub const MIN_BENCH_REPETITIONS: usize = 3;

fn check_peak(peak: f64) -> Result<()> {
    if !(peak > 0.0 && peak.is_finite()) {
        return Err(Error::domain(format!("peak must be positive, got {peak}")));
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB. Identical images give `f64::INFINITY`.
pub fn psnr(reference: &ImageTensor, test: &ImageTensor, peak: f64) -> Result<f64> {
    reference.ensure_same_shape(test)?;
    check_peak(peak)?;
    let mse = reference
        .as_slice()
        .iter()
        .zip(test.as_slice())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / reference.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let c = (SSIM_WINDOW / 2) as f64;
    let mut w = [0.0; SSIM_WINDOW];
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Separable valid-mode Gaussian filter over one `h × w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h + 1 - SSIM_WINDOW, w + 1 - SSIM_WINDOW);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean structural similarity with an 11×11 Gaussian window (σ = 1.5), valid
/// positions only. Multi-channel inputs are averaged over channels.
pub fn ssim(reference: &ImageTensor, test: &ImageTensor, peak: f64) -> Result<f64> {
    reference.ensure_same_shape(test)?;
    check_peak(peak)?;
    let (c, h, w) = reference.shape();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::domain(format!(
            "SSIM needs images of at least {SSIM_WINDOW}×{SSIM_WINDOW}, got {h}×{w}"
        )));
    }
    let k = gaussian_window();
    let c1 = (SSIM_K1 * peak).powi(2);
    let c2 = (SSIM_K2 * peak).powi(2);
    let mut total = 0.0;
    let mut count = 0usize;
    for ch in 0..c {
        let x = reference.channel(ch);
        let y = test.channel(ch);
        let prod = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).collect::<Vec<_>>();
        let mx = filter_valid(x, h, w, &k);
        let my = filter_valid(y, h, w, &k);
        let mxx = filter_valid(&prod(x, x), h, w, &k);
        let myy = filter_valid(&prod(y, y), h, w, &k);
        let mxy = filter_valid(&prod(x, y), h, w, &k);
        for i in 0..mx.len() {
            let (ux, uy) = (mx[i], my[i]);
            let vx = mxx[i] - ux * ux;
            let vy = myy[i] - uy * uy;
            let cxy = mxy[i] - ux * uy;
            total += ((2.0 * ux * uy + c1) * (2.0 * cxy + c2))
                / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
        }
        count += mx.len();
    }
    Ok(total / count as f64)
}

pub fn abs_error_map(reference: &ImageTensor, test: &ImageTensor) -> Result<ImageTensor> {
    reference.ensure_same_shape(test)?;
    let data = reference
        .as_slice()
        .iter()
        .zip(test.as_slice())
        .map(|(a, b)| (a - b).abs())
        .collect();
    ImageTensor::from_vec(reference.shape(), data)
}

/// Per-method quality and cost summary.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub method: String,
    pub psnr: Vec<f64>,
    pub ssim: Vec<f64>,
    pub seconds_per_image: Option<f64>,
    pub nfe: Option<usize>,
}

impl MetricReport {
    pub fn new(method: impl Into<String>) -> Self {
        Self {
            method: method.into(),
            psnr: Vec::new(),
            ssim: Vec::new(),
            seconds_per_image: None,
            nfe: None,
        }
    }

    /// Scores one output against its reference and records both values.
    pub fn push(&mut self, reference: &ImageTensor, test: &ImageTensor, peak: f64) -> Result<()> {
        let p = psnr(reference, test, peak)?;
        let s = ssim(reference, test, peak)?;
        self.psnr.push(p);
        self.ssim.push(s);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.psnr.len()
    }

    pub fn is_empty(&self) -> bool {
        self.psnr.is_empty()
    }

    /// Arithmetic mean; infinite if any image matched its reference exactly.
    pub fn mean_psnr(&self) -> f64 {
        mean(&self.psnr)
    }

    pub fn mean_ssim(&self) -> f64 {
        mean(&self.ssim)
    }

    pub fn csv_header() -> &'static str {
        "method,psnr,ssim,seconds_per_image,nfe"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.method,
            fmt_real(self.mean_psnr()),
            fmt_real(self.mean_ssim()),
            self.seconds_per_image.map(fmt_real).unwrap_or_default(),
            self.nfe.map(|n| n.to_string()).unwrap_or_default()
        )
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

/// Formats a real for CSV output; infinity is written as `inf`.
pub fn fmt_real(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.6}")
    }
}

pub fn report_csv(reports: &[MetricReport]) -> String {
    let mut out = format!("{}\n", MetricReport::csv_header());
    for r in reports {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchResult {
    pub mean_seconds: f64,
    pub runs: Vec<f64>,
    pub nfe: usize,
}

/// Times `run` `repetitions` times after one untimed warm-up call. Every run
/// must report the same NFE.
pub fn bench<F>(mut run: F, repetitions: usize) -> Result<BenchResult>
where
    F: FnMut() -> Result<SamplerTrace>,
{
    if repetitions < MIN_BENCH_REPETITIONS {
        return Err(Error::Usage(format!(
            "benchmark needs at least {MIN_BENCH_REPETITIONS} repetitions, got {repetitions}"
        )));
    }
    let nfe = run()?.nfe;
    let mut runs = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        let start = Instant::now();
        let trace = run()?;
        runs.push(start.elapsed().as_secs_f64());
        if trace.nfe != nfe {
            return Err(Error::Numeric(format!(
                "NFE changed between benchmark runs: {nfe} then {}",
                trace.nfe
            )));
        }
    }
    Ok(BenchResult {
        mean_seconds: mean(&runs),
        runs,
        nfe,
    })
}
