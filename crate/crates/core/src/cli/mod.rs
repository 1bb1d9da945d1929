//! Command-line driver: `train`, `sample`, `eval`, `bench` and `orders`.
//!
//! Every parameter can come from a built-in default, a `key = value` config
//! file (`--config`), or a flag, in increasing order of precedence. The
//! effective configuration is echoed to stdout and written to
//! `<out>/config.txt`, so each run can be reproduced from that file and its
//! seed.

pub mod config;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::dataset::{export_display_png, load_tensor, save_tensor, PairedDataset, DEFAULT_PHANTOM_SIZE};
use crate::denoiser::{Architecture, Checkpoint, ConvDenoiser, GaussianOracle, NoisePredictor, TrainMode};
use crate::error::{Error, Result};
use crate::metrics::{bench, fmt_real, psnr, report_csv, ssim, MetricReport, MIN_BENCH_REPETITIONS};
use crate::rng::{Role, StreamKey};
use crate::sampler::study::{run_study, study_csv, StudyConfig, DEFAULT_LADDER};
use crate::sampler::{run_sampler, SampleOptions, SamplerKind};
use crate::schedule::{ScheduleDescriptor, VarianceSchedule};
use crate::tensor::ImageTensor;
use crate::trainer::{train, write_loss_csv, TrainConfig};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const LOSS_FILE: &str = "loss.csv";
pub const CONFIG_FILE: &str = "config.txt";

#[derive(Debug, Parser)]
#[command(name = "ddpm", version, about = "Conditional diffusion denoising with fast ODE samplers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a noise predictor (or the direct-regression baseline).
    Train(TrainArgs),
    /// Denoise images with a trained checkpoint or the Gaussian oracle.
    Sample(SampleArgs),
    /// Score a directory of outputs against references.
    Eval(EvalArgs),
    /// Time samplers and report cost alongside quality.
    Bench(BenchArgs),
    /// Measure DPM-Solver convergence orders on the Gaussian oracle.
    Orders(OrdersArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// `key = value` file; flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (0 = one per core).
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Debug, Args)]
struct ScheduleArgs {
    /// Number of diffusion steps T.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    beta_start: Option<f64>,
    #[arg(long)]
    beta_end: Option<f64>,
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Directory of `pair_<k>_{ldct,ndct}.imgt` files.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Generate this many synthetic phantom pairs instead of reading `--data`.
    #[arg(long)]
    synthetic: Option<usize>,
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    dose: Option<f64>,
    /// Seed for synthetic data (defaults to `--seed`).
    #[arg(long)]
    data_seed: Option<u64>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    schedule: ScheduleArgs,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    /// `ddpm` or `baseline`.
    #[arg(long)]
    mode: Option<String>,
}

#[derive(Debug, Args)]
struct PredictorArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Use the exact Gaussian-data predictor `mu,s0` instead of a checkpoint.
    #[arg(long)]
    oracle_gaussian: Option<String>,
}

#[derive(Debug, Args)]
struct SampleArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    schedule: ScheduleArgs,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    predictor: PredictorArgs,
    /// `ancestral`, `rk4` or `dpm`.
    #[arg(long)]
    sampler: Option<String>,
    /// Predictor-call budget for `dpm`.
    #[arg(long)]
    nfe: Option<usize>,
    /// Step count for `rk4`.
    #[arg(long)]
    rk4_steps: Option<usize>,
    /// Unconditional samples to draw when no data source is given.
    #[arg(long)]
    count: Option<usize>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    reference: Option<PathBuf>,
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long)]
    peak: Option<f64>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    schedule: ScheduleArgs,
    #[command(flatten)]
    predictor: PredictorArgs,
    /// Comma-separated list such as `ancestral,dpm-50,rk4-25`.
    #[arg(long)]
    samplers: Option<String>,
    #[arg(long)]
    repetitions: Option<usize>,
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    dose: Option<f64>,
}

#[derive(Debug, Args)]
struct OrdersArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    schedule: ScheduleArgs,
    #[arg(long)]
    mu0: Option<f64>,
    #[arg(long)]
    s0: Option<f64>,
    /// Comma-separated step counts.
    #[arg(long)]
    ladder: Option<String>,
}

/// Merges flags, config-file entries and defaults, remembering every value
/// that was used.
struct Resolver {
    file: BTreeMap<String, String>,
    used: BTreeSet<String>,
    effective: Vec<(String, String)>,
}

impl Resolver {
    fn new(config: Option<&Path>) -> Result<Self> {
        let file = match config {
            Some(p) => config::parse_key_values(&fs::read_to_string(p).map_err(|e| {
                Error::Usage(format!("cannot read config {}: {e}", p.display()))
            })?)?,
            None => BTreeMap::new(),
        };
        Ok(Self {
            file,
            used: BTreeSet::new(),
            effective: Vec::new(),
        })
    }

    fn lookup<T: FromStr>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>> {
        self.used.insert(key.to_string());
        if flag.is_some() {
            return Ok(flag);
        }
        match self.file.get(key) {
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|_| Error::Usage(format!("config value `{raw}` for `{key}` is invalid"))),
            None => Ok(None),
        }
    }

    fn get<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T> {
        let v = self.lookup(key, flag)?.unwrap_or(default);
        self.effective.push((key.to_string(), v.to_string()));
        Ok(v)
    }

    fn opt<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>> {
        let v = self.lookup(key, flag)?;
        if let Some(v) = &v {
            self.effective.push((key.to_string(), v.to_string()));
        }
        Ok(v)
    }

    fn path(&mut self, key: &str, flag: Option<PathBuf>) -> Result<Option<PathBuf>> {
        let v = self.lookup::<String>(key, flag.map(|p| p.display().to_string()))?;
        if let Some(v) = &v {
            self.effective.push((key.to_string(), v.clone()));
        }
        Ok(v.map(PathBuf::from))
    }

    /// Rejects config keys nothing asked for, which are almost always typos.
    fn finish(&self) -> Result<()> {
        if let Some(k) = self.file.keys().find(|k| !self.used.contains(*k)) {
            return Err(Error::Usage(format!("unknown config key `{k}`")));
        }
        Ok(())
    }

    fn render(&self) -> String {
        config::render_key_values(self.effective.iter().map(|(k, v)| (k.as_str(), v.clone())))
    }
}

struct Shared {
    seed: u64,
    out: PathBuf,
    jobs: usize,
}

fn shared(r: &mut Resolver, c: &Common, default_out: &str) -> Result<Shared> {
    Ok(Shared {
        seed: r.get("seed", c.seed, 0)?,
        // Not recorded: the config file lives in this directory, and leaving it
        // out keeps reruns into different directories byte-identical.
        out: r
            .lookup::<String>("out", c.out.as_ref().map(|p| p.display().to_string()))?
            .map_or_else(|| PathBuf::from(default_out), PathBuf::from),
        jobs: r.get("jobs", c.jobs, 0)?,
    })
}

fn schedule_from(r: &mut Resolver, a: &ScheduleArgs) -> Result<ScheduleDescriptor> {
    let d = ScheduleDescriptor::default();
    Ok(ScheduleDescriptor {
        steps: r.get("steps", a.steps, d.steps)?,
        beta_start: r.get("beta_start", a.beta_start, d.beta_start)?,
        beta_end: r.get("beta_end", a.beta_end, d.beta_end)?,
    })
}

/// Loads `--data` or builds `--synthetic` pairs; `None` if neither is given.
fn dataset_from(r: &mut Resolver, a: &DataArgs, seed: u64) -> Result<(Option<PairedDataset>, usize)> {
    let data = r.path("data", a.data.clone())?;
    let synthetic = r.opt("synthetic", a.synthetic)?;
    let size = r.get("size", a.size, DEFAULT_PHANTOM_SIZE)?;
    let dose = r.get("dose", a.dose, 0.25)?;
    let data_seed = r.get("data_seed", a.data_seed, seed)?;
    let ds = match (data, synthetic) {
        (Some(_), Some(_)) => {
            return Err(Error::Usage("give either --data or --synthetic, not both".into()))
        }
        (Some(dir), None) => Some(PairedDataset::load_dir(&dir)?),
        (None, Some(n)) => Some(PairedDataset::synthetic(n, size, dose, data_seed)?),
        (None, None) => None,
    };
    Ok((ds, size))
}

enum Predictor {
    Net(ConvDenoiser),
    Oracle(GaussianOracle),
}

impl NoisePredictor for Predictor {
    fn predict(
        &self,
        y_t: &ImageTensor,
        cond: Option<&ImageTensor>,
        t: crate::denoiser::TimeArg,
        schedule: &VarianceSchedule,
    ) -> Result<ImageTensor> {
        match self {
            Predictor::Net(n) => n.predict(y_t, cond, t, schedule),
            Predictor::Oracle(o) => o.predict(y_t, cond, t, schedule),
        }
    }
}

fn parse_oracle(spec: &str) -> Result<GaussianOracle> {
    let bad = || Error::Usage(format!("--oracle-gaussian expects `mu,s0`, got `{spec}`"));
    let (m, s) = spec.split_once(',').ok_or_else(bad)?;
    let mu: f64 = m.trim().parse().map_err(|_| bad())?;
    let s0: f64 = s.trim().parse().map_err(|_| bad())?;
    GaussianOracle::scalar(mu, s0).map_err(|e| Error::Usage(e.to_string()))
}

/// Resolves the predictor and the schedule it runs under. A checkpoint
/// carries its own schedule; the oracle uses the schedule flags.
fn predictor_from(
    r: &mut Resolver,
    p: &PredictorArgs,
    s: &ScheduleArgs,
) -> Result<(Predictor, VarianceSchedule, Option<TrainMode>)> {
    let ckpt = r.path("checkpoint", p.checkpoint.clone())?;
    let oracle = r.opt("oracle_gaussian", p.oracle_gaussian.clone())?;
    match (ckpt, oracle) {
        (Some(_), Some(_)) => Err(Error::Usage(
            "give either --checkpoint or --oracle-gaussian, not both".into(),
        )),
        (Some(path), None) => {
            let c = Checkpoint::load(&path)?;
            let schedule = c.variance_schedule()?;
            Ok((Predictor::Net(c.net), schedule, Some(c.meta.mode)))
        }
        (None, Some(spec)) => {
            let schedule = VarianceSchedule::from_descriptor(schedule_from(r, s)?)?;
            Ok((Predictor::Oracle(parse_oracle(&spec)?), schedule, None))
        }
        (None, None) => Err(Error::Usage("a --checkpoint or --oracle-gaussian is required".into())),
    }
}

fn parse_sampler(name: &str, nfe: Option<usize>, rk4_steps: usize) -> Result<SamplerKind> {
    match name {
        "ancestral" => Ok(SamplerKind::Ancestral),
        "rk4" => Ok(SamplerKind::Rk4 { steps: rk4_steps }),
        "dpm" => match nfe {
            Some(0) | None => Err(Error::Usage("--sampler dpm needs --nfe of at least 1".into())),
            Some(n) => Ok(SamplerKind::Dpm { nfe: n }),
        },
        other => Err(Error::Usage(format!(
            "unknown sampler `{other}` (expected ancestral, rk4 or dpm)"
        ))),
    }
}

/// Parses labels like `ancestral`, `dpm-50`, `rk4-25`.
fn parse_sampler_label(label: &str) -> Result<SamplerKind> {
    let label = label.trim();
    if label == "ancestral" {
        return Ok(SamplerKind::Ancestral);
    }
    let bad = || Error::Usage(format!("unknown sampler `{label}` (try ancestral, dpm-50, rk4-25)"));
    let (name, n) = label.split_once('-').ok_or_else(bad)?;
    let n: usize = n.parse().map_err(|_| bad())?;
    match name {
        "dpm" if n > 0 => Ok(SamplerKind::Dpm { nfe: n }),
        "rk4" if n > 0 => Ok(SamplerKind::Rk4 { steps: n }),
        _ => Err(bad()),
    }
}

fn parse_list(text: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| Error::Usage(format!("`{s}` is not a step count")))
        })
        .collect()
}

/// Prints the effective configuration and stores it next to the outputs.
fn persist_config(r: &Resolver, command: &str, out: &Path) -> Result<()> {
    r.finish()?;
    fs::create_dir_all(out)?;
    let text = format!("command = {command}\n{}", r.render());
    print!("{text}");
    fs::write(out.join(CONFIG_FILE), text)?;
    Ok(())
}

fn with_jobs<T: Send>(jobs: usize, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Usage(format!("cannot start {jobs} worker threads: {e}")))?;
    pool.install(f)
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let mut r = Resolver::new(a.common.config.as_deref())?;
    let sh = shared(&mut r, &a.common, "train-out")?;
    let desc = schedule_from(&mut r, &a.schedule)?;
    let defaults = TrainConfig::default();
    let mode: TrainMode = r.get("mode", a.mode.clone(), defaults.mode.as_str().to_string())?.parse()?;
    let config = TrainConfig {
        learning_rate: r.get("lr", a.lr, defaults.learning_rate)?,
        batch_size: r.get("batch", a.batch, defaults.batch_size)?,
        max_iterations: r.get("iters", a.iters, defaults.max_iterations)?,
        seed: sh.seed,
        mode,
        ..defaults
    };
    config.validate().map_err(|e| Error::Usage(e.to_string()))?;
    let dataset = dataset_from(&mut r, &a.data, sh.seed)?
        .0
        .ok_or_else(|| Error::Usage("training needs --data DIR or --synthetic N".into()))?;
    persist_config(&r, "train", &sh.out)?;

    let schedule = VarianceSchedule::from_descriptor(desc)?;
    let (c, _, _) = dataset.pair(0).0.shape();
    let arch = Architecture {
        image_channels: c,
        ..Architecture::default()
    };
    let net = ConvDenoiser::init(arch, StreamKey::new(sh.seed))?;
    let outcome = with_jobs(sh.jobs, || train(&dataset, net, &config, &schedule))?;
    outcome.checkpoint.save(&sh.out.join(CHECKPOINT_FILE))?;
    write_loss_csv(&outcome.history, &sh.out.join(LOSS_FILE))?;
    if let Some(last) = outcome.history.last() {
        println!("final loss = {}", fmt_real(last.loss));
    }
    Ok(())
}

/// Output seed for image `k`, independent of thread scheduling.
fn image_seed(seed: u64, k: usize) -> u64 {
    StreamKey::new(seed).derive(Role::Split, &[k as u64]).raw()
}

fn cmd_sample(a: &SampleArgs) -> Result<()> {
    let mut r = Resolver::new(a.common.config.as_deref())?;
    let sh = shared(&mut r, &a.common, "sample-out")?;
    let (predictor, schedule, mode) = predictor_from(&mut r, &a.predictor, &a.schedule)?;
    let sampler_name = r.get("sampler", a.sampler.clone(), "dpm".to_string())?;
    let nfe = r.opt("nfe", a.nfe)?;
    let rk4_steps = r.get("rk4_steps", a.rk4_steps, 25)?;
    let kind = parse_sampler(&sampler_name, nfe, rk4_steps)?;
    let (dataset, size) = dataset_from(&mut r, &a.data, sh.seed)?;
    let count = r.get("count", a.count, 1)?;
    persist_config(&r, "sample", &sh.out)?;

    // The direct-regression baseline maps the condition to the output in one pass.
    if mode == Some(TrainMode::Baseline) {
        return Err(Error::Usage(
            "this checkpoint was trained as a direct baseline; diffusion samplers need a ddpm checkpoint"
                .into(),
        ));
    }
    let conds: Vec<Option<ImageTensor>> = match &dataset {
        Some(ds) => ds.pairs().iter().map(|(l, _)| Some(l.clone())).collect(),
        None => vec![None; count],
    };
    let shape = match &dataset {
        Some(ds) => ds.pair(0).0.shape(),
        None => (1, size, size),
    };
    let results = with_jobs(sh.jobs, || {
        conds
            .par_iter()
            .enumerate()
            .map(|(k, cond)| {
                let options = SampleOptions::seeded(image_seed(sh.seed, k));
                run_sampler(kind, cond.as_ref(), shape, &predictor, &schedule, &options)
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let dirs = ["samples", "traces"].map(|d| sh.out.join(d));
    for d in &dirs {
        fs::create_dir_all(d)?;
    }
    let window = dataset.as_ref().and_then(|d| d.window).unwrap_or((0.0, 1.0));
    for (k, (img, trace)) in results.iter().enumerate() {
        let name = format!("pair_{k}");
        save_tensor(img, &dirs[0].join(format!("{name}.imgt")))?;
        export_display_png(img, window.0, window.1, &dirs[0].join(format!("{name}.png")))?;
        fs::write(dirs[1].join(format!("{name}.csv")), trace.to_csv())?;
    }
    if let Some(ds) = &dataset {
        for (sub, pick) in [("reference", 1usize), ("noisy", 0)] {
            let dir = sh.out.join(sub);
            fs::create_dir_all(&dir)?;
            for (k, pair) in ds.pairs().iter().enumerate() {
                let t = if pick == 1 { &pair.1 } else { &pair.0 };
                save_tensor(t, &dir.join(format!("pair_{k}.imgt")))?;
            }
        }
    }
    let nfe = results.first().map(|(_, t)| t.nfe).unwrap_or(0);
    println!("{} images with {} ({nfe} predictor calls each)", results.len(), kind.label());
    Ok(())
}

fn tensor_names(dir: &Path) -> Result<BTreeSet<String>> {
    let mut names = BTreeSet::new();
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.ends_with(".imgt") {
            names.insert(name);
        }
    }
    Ok(names)
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let mut r = Resolver::new(a.common.config.as_deref())?;
    let sh = shared(&mut r, &a.common, "eval-out")?;
    let reference = r
        .path("reference", a.reference.clone())?
        .ok_or_else(|| Error::Usage("eval needs --reference DIR".into()))?;
    let test = r
        .path("test", a.test.clone())?
        .ok_or_else(|| Error::Usage("eval needs --test DIR".into()))?;
    let peak = r.get("peak", a.peak, 1.0)?;
    persist_config(&r, "eval", &sh.out)?;

    let ref_names = tensor_names(&reference)?;
    let test_names = tensor_names(&test)?;
    if ref_names.is_empty() {
        return Err(Error::Data(format!("no .imgt files in {}", reference.display())));
    }
    if ref_names != test_names {
        let missing: Vec<_> = ref_names.symmetric_difference(&test_names).cloned().collect();
        return Err(Error::Data(format!(
            "reference and test directories differ in: {}",
            missing.join(", ")
        )));
    }
    let mut report = MetricReport::new(test.display().to_string());
    let mut csv = String::from("image,psnr,ssim\n");
    for name in &ref_names {
        let a = load_tensor(&reference.join(name))?;
        let b = load_tensor(&test.join(name))?;
        let (p, s) = (psnr(&a, &b, peak)?, ssim(&a, &b, peak)?);
        report.psnr.push(p);
        report.ssim.push(s);
        csv.push_str(&format!("{name},{},{}\n", fmt_real(p), fmt_real(s)));
    }
    csv.push_str(&format!(
        "mean,{},{}\n",
        fmt_real(report.mean_psnr()),
        fmt_real(report.mean_ssim())
    ));
    fs::write(sh.out.join("metrics.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}

fn cmd_bench(a: &BenchArgs) -> Result<()> {
    let mut r = Resolver::new(a.common.config.as_deref())?;
    let sh = shared(&mut r, &a.common, "bench-out")?;
    let (predictor, schedule, _) = predictor_from(&mut r, &a.predictor, &a.schedule)?;
    let labels = r.get("samplers", a.samplers.clone(), "ancestral,dpm-50".to_string())?;
    let kinds = labels
        .split(',')
        .map(parse_sampler_label)
        .collect::<Result<Vec<_>>>()?;
    let repetitions = r.get("repetitions", a.repetitions, MIN_BENCH_REPETITIONS)?;
    let size = r.get("size", a.size, DEFAULT_PHANTOM_SIZE)?;
    let dose = r.get("dose", a.dose, 0.25)?;
    if repetitions < MIN_BENCH_REPETITIONS {
        eprintln!("warning: timing from fewer than {MIN_BENCH_REPETITIONS} runs is not meaningful");
        return Err(Error::Usage(format!(
            "--repetitions must be at least {MIN_BENCH_REPETITIONS}, got {repetitions}"
        )));
    }
    persist_config(&r, "bench", &sh.out)?;

    let pair = PairedDataset::synthetic(1, size, dose, sh.seed)?;
    let (ldct, ndct) = pair.pair(0);
    let cond = match predictor {
        Predictor::Net(_) => Some(ldct),
        Predictor::Oracle(_) => None,
    };
    let options = SampleOptions::seeded(image_seed(sh.seed, 0));
    let mut reports = Vec::new();
    // Timing runs on one thread so concurrent load does not skew the ratios.
    with_jobs(1, || {
        for kind in &kinds {
            let (img, _) = run_sampler(*kind, cond, ndct.shape(), &predictor, &schedule, &options)?;
            let timing = bench(
                || run_sampler(*kind, cond, ndct.shape(), &predictor, &schedule, &options).map(|(_, t)| t),
                repetitions,
            )?;
            let mut rep = MetricReport::new(kind.label());
            rep.push(ndct, &img, 1.0)?;
            rep.seconds_per_image = Some(timing.mean_seconds);
            rep.nfe = Some(timing.nfe);
            reports.push(rep);
        }
        Ok(())
    })?;
    let csv = report_csv(&reports);
    fs::write(sh.out.join("bench.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}

fn cmd_orders(a: &OrdersArgs) -> Result<()> {
    let mut r = Resolver::new(a.common.config.as_deref())?;
    let sh = shared(&mut r, &a.common, "orders-out")?;
    let schedule = VarianceSchedule::from_descriptor(schedule_from(&mut r, &a.schedule)?)?;
    let defaults = StudyConfig::default();
    let default_ladder = DEFAULT_LADDER.map(|n| n.to_string()).join(",");
    let config = StudyConfig {
        mu0: r.get("mu0", a.mu0, defaults.mu0)?,
        s0: r.get("s0", a.s0, defaults.s0)?,
        ladder: parse_list(&r.get("ladder", a.ladder.clone(), default_ladder)?)?,
        ..defaults
    };
    persist_config(&r, "orders", &sh.out)?;

    let fits = run_study(&config, &schedule)?;
    let mut errors = String::from("order,steps,error\n");
    for f in &fits {
        for (n, e) in config.ladder.iter().zip(&f.errors) {
            errors.push_str(&format!("{},{n},{e:.17e}\n", f.order));
        }
    }
    fs::write(sh.out.join("orders_errors.csv"), errors)?;
    let csv = study_csv(&fits);
    fs::write(sh.out.join("orders.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Sample(a) => cmd_sample(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Orders(a) => cmd_orders(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
