use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use diffusion_core::dataset::{generate_phantom, save_tensor};
use diffusion_core::denoiser::{Checkpoint, TrainMode};
use diffusion_core::rng::{normal_tensor, Role, StreamKey};

fn ddpm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ddpm"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = ddpm(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    ddpm(args).status.code().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn trace_calls(csv: &str) -> usize {
    csv.lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse::<usize>().unwrap())
        .sum()
}

fn train_small(dir: &Path, extra: &[&str]) {
    let mut args = vec!["train", "--synthetic", "4", "--size", "16", "--iters", "5", "--out", p(dir)];
    args.extend_from_slice(extra);
    ok(&args);
}

#[test]
fn training_twice_gives_identical_files() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for d in [&a, &b] {
        ok(&["train", "--synthetic", "16", "--iters", "500", "--seed", "7", "--out", p(d)]);
    }
    for f in ["model.ckpt", "loss.csv", "config.txt"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_eq!(fs::read_to_string(a.join("loss.csv")).unwrap().lines().count(), 501);
}

#[test]
fn training_without_data_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&["train", "--iters", "5", "--out", p(tmp.path())]), 1);
    assert_eq!(code(&["train", "--synthetic", "2", "--lr", "-1", "--out", p(tmp.path())]), 1);
    assert_eq!(code(&["train", "--synthetic", "2", "--mode", "gan", "--out", p(tmp.path())]), 1);
    assert_eq!(code(&["frobnicate"]), 1);
}

#[test]
fn missing_dataset_directory_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope");
    assert_eq!(code(&["train", "--data", p(&missing), "--out", p(tmp.path())]), 2);
}

#[test]
fn baseline_mode_is_recorded_in_the_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    train_small(tmp.path(), &["--mode", "baseline"]);
    let c = Checkpoint::load(&tmp.path().join("model.ckpt")).unwrap();
    assert_eq!(c.meta.mode, TrainMode::Baseline);
    assert_eq!(c.meta.iterations, 5);
}

#[test]
fn config_file_is_overridden_by_flags_and_persisted() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.cfg");
    fs::write(&cfg, "iters = 3\nbatch = 2\nsynthetic = 2\nsize = 16\n").unwrap();
    let out = tmp.path().join("o");
    let stdout = ok(&["train", "--config", p(&cfg), "--iters", "2", "--out", p(&out)]);
    let saved = fs::read_to_string(out.join("config.txt")).unwrap();
    assert!(saved.contains("iters = 2\n") && saved.contains("batch = 2\n"), "{saved}");
    assert!(stdout.starts_with(&saved));
    assert_eq!(fs::read_to_string(out.join("loss.csv")).unwrap().lines().count(), 3);
    // The persisted file reproduces the run on its own.
    let again = tmp.path().join("again");
    let saved_cfg = tmp.path().join("saved.cfg");
    fs::write(&saved_cfg, saved.replace("command = train\n", "")).unwrap();
    ok(&["train", "--config", p(&saved_cfg), "--out", p(&again)]);
    assert_eq!(fs::read(out.join("model.ckpt")).unwrap(), fs::read(again.join("model.ckpt")).unwrap());

    fs::write(&cfg, "iterations = 3\n").unwrap();
    assert_eq!(code(&["train", "--config", p(&cfg), "--synthetic", "2", "--out", p(&out)]), 1);
}

#[test]
fn sample_traces_count_predictor_calls() {
    let tmp = tempfile::tempdir().unwrap();
    train_small(&tmp.path().join("t"), &[]);
    let ckpt = tmp.path().join("t/model.ckpt");
    let out = tmp.path().join("s");
    ok(&["sample", "--checkpoint", p(&ckpt), "--synthetic", "2", "--size", "16", "--sampler", "dpm", "--nfe", "15", "--out", p(&out)]);
    for k in 0..2 {
        let trace = fs::read_to_string(out.join(format!("traces/pair_{k}.csv"))).unwrap();
        assert_eq!(trace_calls(&trace), 15);
        assert_eq!(trace.lines().count(), 6);
        assert!(out.join(format!("samples/pair_{k}.png")).exists());
        assert!(out.join(format!("reference/pair_{k}.imgt")).exists());
    }

    let anc = tmp.path().join("anc");
    ok(&["sample", "--oracle-gaussian", "0.2,0.5", "--size", "16", "--sampler", "ancestral", "--out", p(&anc)]);
    let trace = fs::read_to_string(anc.join("traces/pair_0.csv")).unwrap();
    assert_eq!(trace_calls(&trace), 1000);

    let rk = tmp.path().join("rk");
    ok(&["sample", "--oracle-gaussian", "0.2,0.5", "--size", "16", "--sampler", "rk4", "--rk4-steps", "6", "--count", "2", "--out", p(&rk)]);
    assert_eq!(trace_calls(&fs::read_to_string(rk.join("traces/pair_1.csv")).unwrap()), 24);
}

#[test]
fn sample_rejects_bad_requests() {
    let tmp = tempfile::tempdir().unwrap();
    let o = p(tmp.path());
    assert_eq!(code(&["sample", "--oracle-gaussian", "0,1", "--sampler", "dpm", "--nfe", "0", "--out", o]), 1);
    assert_eq!(code(&["sample", "--oracle-gaussian", "0,1", "--sampler", "euler", "--out", o]), 1);
    assert_eq!(code(&["sample", "--sampler", "dpm", "--nfe", "5", "--out", o]), 1);
    let junk = tmp.path().join("junk.ckpt");
    fs::write(&junk, b"not a checkpoint").unwrap();
    assert_eq!(code(&["sample", "--checkpoint", p(&junk), "--nfe", "5", "--out", o]), 2);
}

#[test]
fn sampling_twice_gives_identical_files() {
    let tmp = tempfile::tempdir().unwrap();
    train_small(&tmp.path().join("t"), &[]);
    let ckpt = tmp.path().join("t/model.ckpt");
    let dirs = [tmp.path().join("a"), tmp.path().join("b")];
    for (d, jobs) in dirs.iter().zip(["1", "2"]) {
        ok(&["sample", "--checkpoint", p(&ckpt), "--synthetic", "3", "--size", "16", "--nfe", "10", "--seed", "4", "--jobs", jobs, "--out", p(d)]);
    }
    for k in 0..3 {
        for f in [format!("samples/pair_{k}.imgt"), format!("samples/pair_{k}.png"), format!("traces/pair_{k}.csv")] {
            assert_eq!(fs::read(dirs[0].join(&f)).unwrap(), fs::read(dirs[1].join(&f)).unwrap(), "{f}");
        }
    }
}

#[test]
fn eval_scores_directories() {
    let tmp = tempfile::tempdir().unwrap();
    let (r, t) = (tmp.path().join("ref"), tmp.path().join("test"));
    fs::create_dir_all(&r).unwrap();
    fs::create_dir_all(&t).unwrap();
    let mut expected = Vec::new();
    for k in 0..3u64 {
        let clean = generate_phantom(16, k).unwrap();
        let noise = normal_tensor(&mut StreamKey::new(k).stream(Role::Split, &[]), clean.shape());
        let noisy = clean.lincomb(1.0, &noise, 0.05);
        // Independent reference computation of PSNR with peak 1.
        let mse: f64 = clean
            .as_slice()
            .iter()
            .zip(noisy.as_slice())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / clean.len() as f64;
        expected.push(-10.0 * mse.log10());
        save_tensor(&clean, &r.join(format!("img_{k}.imgt"))).unwrap();
        save_tensor(&noisy, &t.join(format!("img_{k}.imgt"))).unwrap();
    }
    let out = tmp.path().join("e");
    ok(&["eval", "--reference", p(&r), "--test", p(&t), "--out", p(&out)]);
    let csv = fs::read_to_string(out.join("metrics.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "image,psnr,ssim");
    for (k, want) in expected.iter().enumerate() {
        let got: f64 = rows[k + 1].split(',').nth(1).unwrap().parse().unwrap();
        assert!((got - want).abs() < 0.1, "{got} vs {want}");
    }
    let mean: f64 = rows[4].split(',').nth(1).unwrap().parse().unwrap();
    assert!((mean - expected.iter().sum::<f64>() / 3.0).abs() < 1e-5);

    ok(&["eval", "--reference", p(&r), "--test", p(&r), "--out", p(&out)]);
    let csv = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(csv.lines().last().unwrap().starts_with("mean,inf,1.000000"), "{csv}");

    let empty = tmp.path().join("empty");
    fs::create_dir_all(&empty).unwrap();
    assert_eq!(code(&["eval", "--reference", p(&empty), "--test", p(&empty), "--out", p(&out)]), 2);
    fs::remove_file(t.join("img_2.imgt")).unwrap();
    assert_eq!(code(&["eval", "--reference", p(&r), "--test", p(&t), "--out", p(&out)]), 2);
}

#[test]
fn bench_reports_nfe_and_enforces_repetitions() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("b");
    ok(&["bench", "--oracle-gaussian", "0.3,0.7", "--size", "16", "--samplers", "ancestral,dpm-50", "--out", p(&out)]);
    let csv = fs::read_to_string(out.join("bench.csv")).unwrap();
    let rows: Vec<Vec<&str>> = csv.lines().map(|l| l.split(',').collect()).collect();
    assert_eq!(rows[0], ["method", "psnr", "ssim", "seconds_per_image", "nfe"]);
    assert_eq!((rows[1][0], rows[1][4]), ("ancestral", "1000"));
    assert_eq!((rows[2][0], rows[2][4]), ("dpm-50", "50"));
    let r = ddpm(&["bench", "--oracle-gaussian", "0.3,0.7", "--repetitions", "1", "--out", p(&out)]);
    assert_eq!(r.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&r.stderr).contains("warning"));
}

#[test]
fn orders_reports_three_slopes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    ok(&["orders", "--out", p(&out)]);
    let csv = fs::read_to_string(out.join("orders.csv")).unwrap();
    let rows: Vec<Vec<f64>> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 3);
    for (row, (want, tol)) in rows.iter().zip([(1.0, 0.3), (2.0, 0.3), (3.0, 0.4)]) {
        assert!((row[1] - want).abs() < tol && row[2] >= 0.95, "{row:?}");
    }
    assert_eq!(fs::read_to_string(out.join("orders_errors.csv")).unwrap().lines().count(), 19);
}
