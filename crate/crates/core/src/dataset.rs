//! Synthetic phantoms, a Gaussian low-dose noise model, paired datasets and
//! tensor / display-image file I/O.
//!
//! The noise model is deliberately non-physical (image-domain Gaussian, not
//! sinogram-domain Poisson): it only has to produce a meaningful denoising task.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::{Role, StreamKey};
use crate::tensor::ImageTensor;

pub const TENSOR_MAGIC: &[u8; 4] = b"IMGT";
pub const DEFAULT_PHANTOM_SIZE: usize = 32;
pub const MIN_PHANTOM_SIZE: usize = 16;
/// Per-pixel noise std at full dose.
pub const BASE_NOISE_STD: f64 = 0.02;

/// Piecewise-constant phantom: a background disk carrying 3–8 ellipses of
/// distinct intensities, all values in `[0, 1]`.
pub fn generate_phantom(size: usize, seed: u64) -> Result<ImageTensor> {
    if size < MIN_PHANTOM_SIZE {
        return Err(Error::domain(format!(
            "phantom size must be at least {MIN_PHANTOM_SIZE}, got {size}"
        )));
    }
    let mut rng = StreamKey::new(seed).stream(Role::Phantom, &[]);
    let n = size as f64;
    let centre = (n - 1.0) / 2.0;
    let radius = 0.45 * n;
    let background = rng.random_range(0.15..0.35);

    struct Ellipse {
        cx: f64,
        cy: f64,
        a: f64,
        b: f64,
        cos: f64,
        sin: f64,
        value: f64,
    }
    let count = rng.random_range(3..=8);
    let mut values: Vec<f64> = vec![background];
    let mut ellipses = Vec::with_capacity(count);
    for _ in 0..count {
        let value = loop {
            let v: f64 = rng.random_range(0.0..=1.0);
            if values.iter().all(|u| (u - v).abs() >= 0.05) {
                break v;
            }
        };
        values.push(value);
        let r = radius * 0.7 * rng.random::<f64>().sqrt();
        let phi = rng.random_range(0.0..std::f64::consts::TAU);
        let theta = rng.random_range(0.0..std::f64::consts::PI);
        ellipses.push(Ellipse {
            cx: centre + r * phi.cos(),
            cy: centre + r * phi.sin(),
            a: rng.random_range(0.08..0.3) * n,
            b: rng.random_range(0.05..0.2) * n,
            cos: theta.cos(),
            sin: theta.sin(),
            value,
        });
    }

    let mut img = ImageTensor::zeros((1, size, size));
    for y in 0..size {
        for x in 0..size {
            let (px, py) = (x as f64, y as f64);
            if (px - centre).powi(2) + (py - centre).powi(2) > radius * radius {
                continue;
            }
            let mut v = background;
            for e in &ellipses {
                let (dx, dy) = (px - e.cx, py - e.cy);
                let u = dx * e.cos + dy * e.sin;
                let w = -dx * e.sin + dy * e.cos;
                if (u / e.a).powi(2) + (w / e.b).powi(2) <= 1.0 {
                    v = e.value;
                }
            }
            img[(0, y, x)] = v;
        }
    }
    Ok(img)
}

/// Adds zero-mean Gaussian noise of std `0.02·√(1/dose − 1)` and clamps to `[0, 1]`.
pub fn simulate_low_dose(ndct: &ImageTensor, dose_factor: f64, seed: u64) -> Result<ImageTensor> {
    if !(dose_factor > 0.0 && dose_factor <= 1.0) {
        return Err(Error::domain(format!("dose factor {dose_factor} outside (0, 1]")));
    }
    let std = low_dose_noise_std(dose_factor);
    let mut rng = StreamKey::new(seed).stream(Role::DoseNoise, &[]);
    let mut out = ndct.clone();
    for v in out.as_mut_slice() {
        let n: f64 = StandardNormal.sample(&mut rng);
        *v = (*v + std * n).clamp(0.0, 1.0);
    }
    Ok(out)
}

pub fn low_dose_noise_std(dose_factor: f64) -> f64 {
    BASE_NOISE_STD * (1.0 / dose_factor - 1.0).sqrt()
}

pub fn tensor_to_bytes(t: &ImageTensor) -> Vec<u8> {
    let (c, h, w) = t.shape();
    let mut out = Vec::with_capacity(16 + 8 * t.len());
    out.extend_from_slice(TENSOR_MAGIC);
    for d in [c, h, w] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in t.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn tensor_from_bytes(buf: &[u8]) -> Result<ImageTensor> {
    if buf.len() < 16 {
        return Err(Error::Corrupt(format!("tensor file has {} bytes, header needs 16", buf.len())));
    }
    if &buf[..4] != TENSOR_MAGIC {
        return Err(Error::Corrupt("bad tensor magic".into()));
    }
    let dim = |i: usize| u32::from_le_bytes(buf[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let shape = (dim(0), dim(1), dim(2));
    let count = shape
        .0
        .checked_mul(shape.1)
        .and_then(|n| n.checked_mul(shape.2))
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Corrupt(format!("invalid tensor dims {shape:?}")))?;
    let body = &buf[16..];
    if body.len() != count * 8 {
        return Err(Error::Corrupt(format!(
            "tensor dims {shape:?} need {} data bytes, file has {}",
            count * 8,
            body.len()
        )));
    }
    let data = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    ImageTensor::from_vec(shape, data).map_err(|e| Error::Corrupt(e.to_string()))
}

pub fn save_tensor(t: &ImageTensor, path: &Path) -> Result<()> {
    fs::write(path, tensor_to_bytes(t))?;
    Ok(())
}

pub fn load_tensor(path: &Path) -> Result<ImageTensor> {
    tensor_from_bytes(&fs::read(path)?)
        .map_err(|e| match e {
            Error::Corrupt(msg) => Error::Corrupt(format!("{}: {msg}", path.display())),
            other => other,
        })
}

/// Linear display mapping `[low, high] → [0, 255]`, clamped, rounded half-to-even.
pub fn window_to_u8(value: f64, low: f64, high: f64) -> u8 {
    let scaled = (value - low) / (high - low) * 255.0;
    scaled.clamp(0.0, 255.0).round_ties_even() as u8
}

/// Writes a single-channel tensor as an 8-bit grayscale PNG through a display window.
pub fn export_display_png(t: &ImageTensor, window_low: f64, window_high: f64, path: &Path) -> Result<()> {
    if !(window_high > window_low) || !window_low.is_finite() || !window_high.is_finite() {
        return Err(Error::domain(format!("invalid display window [{window_low}, {window_high}]")));
    }
    if t.channels() != 1 {
        return Err(Error::Data(format!(
            "display export needs a single-channel tensor, got {} channels",
            t.channels()
        )));
    }
    let pixels: Vec<u8> = t
        .as_slice()
        .iter()
        .map(|&v| window_to_u8(v, window_low, window_high))
        .collect();
    let file = fs::File::create(path)?;
    let mut enc = png::Encoder::new(BufWriter::new(file), t.width() as u32, t.height() as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc
        .write_header()
        .map_err(|e| Error::Data(format!("png header: {e}")))?;
    writer
        .write_image_data(&pixels)
        .map_err(|e| Error::Data(format!("png data: {e}")))?;
    Ok(())
}

/// Paired low-dose / normal-dose images.
#[derive(Debug, Clone, Default)]
pub struct PairedDataset {
    pairs: Vec<(ImageTensor, ImageTensor)>,
    pub source: String,
    /// Display window (e.g. in HU) the normalized values came from, if known.
    pub window: Option<(f64, f64)>,
}

impl PairedDataset {
    pub fn new(pairs: Vec<(ImageTensor, ImageTensor)>, source: impl Into<String>) -> Result<Self> {
        for (i, (l, n)) in pairs.iter().enumerate() {
            l.ensure_same_shape(n)
                .map_err(|e| Error::Data(format!("pair {i}: {e}")))?;
        }
        Ok(Self {
            pairs,
            source: source.into(),
            window: None,
        })
    }

    /// `count` phantoms of `size × size` with simulated low-dose partners.
    /// Pair k depends only on (seed, k).
    pub fn synthetic(count: usize, size: usize, dose_factor: f64, seed: u64) -> Result<Self> {
        let key = StreamKey::new(seed);
        let pairs = (0..count as u64)
            .map(|k| {
                let ndct = generate_phantom(size, key.derive(Role::Phantom, &[k]).raw())?;
                let ldct = simulate_low_dose(&ndct, dose_factor, key.derive(Role::DoseNoise, &[k]).raw())?;
                Ok((ldct, ndct))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(
            pairs,
            format!("synthetic(count={count}, size={size}, dose={dose_factor}, seed={seed})"),
        )
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// `(ldct, ndct)` at index `i`.
    pub fn pair(&self, i: usize) -> (&ImageTensor, &ImageTensor) {
        let (l, n) = &self.pairs[i];
        (l, n)
    }

    pub fn pairs(&self) -> &[(ImageTensor, ImageTensor)] {
        &self.pairs
    }

    /// `(min, max)` over all normal-dose images.
    pub fn value_range(&self) -> Option<(f64, f64)> {
        self.pairs.iter().fold(None, |acc, (_, n)| {
            let (lo, hi) = (n.min(), n.max());
            Some(acc.map_or((lo, hi), |(a, b): (f64, f64)| (a.min(lo), b.max(hi))))
        })
    }

    /// Loads `pair_<k>_ldct.imgt` / `pair_<k>_ndct.imgt` files, ordered by k,
    /// plus an optional `metadata.txt` with `window_low` / `window_high`.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mut found: BTreeMap<u64, (Option<PathBuf>, Option<PathBuf>)> = BTreeMap::new();
        for entry in fs::read_dir(dir)? {
            let path = entry?.path();
            let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
                continue;
            };
            let Some(stem) = name.strip_prefix("pair_").and_then(|s| s.strip_suffix(".imgt")) else {
                continue;
            };
            let Some((k, kind)) = stem.rsplit_once('_') else {
                continue;
            };
            let Ok(k) = k.parse::<u64>() else { continue };
            let slot = found.entry(k).or_default();
            match kind {
                "ldct" => slot.0 = Some(path),
                "ndct" => slot.1 = Some(path),
                _ => {}
            }
        }
        if found.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let pairs = found
            .into_iter()
            .map(|(k, slot)| match slot {
                (Some(l), Some(n)) => Ok((load_tensor(&l)?, load_tensor(&n)?)),
                _ => Err(Error::Data(format!("pair {k} is missing its ldct or ndct file"))),
            })
            .collect::<Result<Vec<_>>>()?;
        let mut ds = Self::new(pairs, dir.display().to_string())?;
        let meta = dir.join("metadata.txt");
        if meta.exists() {
            let kv = crate::cli::config::parse_key_values(&fs::read_to_string(&meta)?)?;
            if let (Some(lo), Some(hi)) = (kv.get("window_low"), kv.get("window_high")) {
                let parse = |s: &String| {
                    s.parse::<f64>()
                        .map_err(|_| Error::Data(format!("bad window value `{s}` in metadata")))
                };
                ds.window = Some((parse(lo)?, parse(hi)?));
            }
        }
        Ok(ds)
    }

    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for (k, (l, n)) in self.pairs.iter().enumerate() {
            save_tensor(l, &dir.join(format!("pair_{k}_ldct.imgt")))?;
            save_tensor(n, &dir.join(format!("pair_{k}_ndct.imgt")))?;
        }
        let mut meta = BufWriter::new(fs::File::create(dir.join("metadata.txt"))?);
        writeln!(meta, "source = {}", self.source)?;
        if let Some((lo, hi)) = self.window {
            writeln!(meta, "window_low = {lo}")?;
            writeln!(meta, "window_high = {hi}")?;
        }
        meta.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::psnr;

    #[test]
    fn phantom_is_deterministic_and_bounded() {
        let a = generate_phantom(32, 5).unwrap();
        let b = generate_phantom(32, 5).unwrap();
        assert_eq!(a, b);
        assert!(a.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(generate_phantom(15, 5).is_err());
    }

    #[test]
    fn different_seeds_give_different_phantoms() {
        for seed in 0..20u64 {
            let a = generate_phantom(32, seed).unwrap();
            let b = generate_phantom(32, seed + 1000).unwrap();
            let differing = a
                .as_slice()
                .iter()
                .zip(b.as_slice())
                .filter(|(x, y)| x != y)
                .count();
            assert!(differing * 100 >= a.len(), "seed {seed}: {differing}");
        }
    }

    #[test]
    fn phantom_has_several_levels() {
        let a = generate_phantom(64, 1).unwrap();
        let mut levels: Vec<f64> = a.as_slice().to_vec();
        levels.sort_by(f64::total_cmp);
        levels.dedup();
        assert!(levels.len() >= 3, "{levels:?}");
    }

    #[test]
    fn full_dose_adds_nothing() {
        let a = generate_phantom(32, 2).unwrap();
        assert_eq!(simulate_low_dose(&a, 1.0, 3).unwrap(), a);
        assert!(simulate_low_dose(&a, 0.0, 3).is_err());
        assert!(simulate_low_dose(&a, 1.5, 3).is_err());
    }

    #[test]
    fn quarter_dose_noise_level() {
        // Mid-grey input keeps clamping out of play.
        let grey = ImageTensor::filled((1, 320, 320), 0.5);
        let noisy = simulate_low_dose(&grey, 0.25, 11).unwrap();
        let n = noisy.len() as f64;
        let var = noisy.as_slice().iter().map(|v| (v - 0.5).powi(2)).sum::<f64>() / n;
        let expected = 0.02 * 3f64.sqrt();
        assert!((low_dose_noise_std(0.25) - 0.034641).abs() < 1e-6);
        assert!((var.sqrt() / expected - 1.0).abs() < 0.02, "{}", var.sqrt());
    }

    #[test]
    fn lower_dose_means_lower_psnr() {
        let a = generate_phantom(32, 4).unwrap();
        let quarter = simulate_low_dose(&a, 0.25, 9).unwrap();
        let half = simulate_low_dose(&a, 0.5, 9).unwrap();
        assert!(psnr(&a, &quarter, 1.0).unwrap() < psnr(&a, &half, 1.0).unwrap());
        assert_eq!(quarter.shape(), a.shape());
        assert!(quarter.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn tensor_file_round_trip_and_size() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.imgt");
        let t = ImageTensor::scalar(-1.25);
        save_tensor(&t, &p).unwrap();
        assert_eq!(fs::metadata(&p).unwrap().len(), 24);
        assert_eq!(load_tensor(&p).unwrap(), t);

        let big = generate_phantom(16, 1).unwrap();
        save_tensor(&big, &p).unwrap();
        let back = load_tensor(&p).unwrap();
        assert_eq!(
            back.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            big.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn corrupt_tensor_files_are_rejected() {
        let bytes = tensor_to_bytes(&generate_phantom(16, 1).unwrap());
        assert!(matches!(tensor_from_bytes(&bytes[..bytes.len() - 1]), Err(Error::Corrupt(_))));
        assert!(matches!(tensor_from_bytes(&bytes[..10]), Err(Error::Corrupt(_))));
        let mut bad = bytes.clone();
        bad[1] = b'X';
        assert!(matches!(tensor_from_bytes(&bad), Err(Error::Corrupt(_))));
        let mut zero_dim = bytes;
        zero_dim[4..8].copy_from_slice(&0u32.to_le_bytes());
        assert!(matches!(tensor_from_bytes(&zero_dim), Err(Error::Corrupt(_))));
    }

    #[test]
    fn display_window_mapping() {
        assert_eq!(window_to_u8(-160.0, -160.0, 240.0), 0);
        assert_eq!(window_to_u8(240.0, -160.0, 240.0), 255);
        assert_eq!(window_to_u8(40.0, -160.0, 240.0), 128); // 127.5 rounds to even
        assert_eq!(window_to_u8(-500.0, -160.0, 240.0), 0);
        assert_eq!(window_to_u8(900.0, -160.0, 240.0), 255);
    }

    #[test]
    fn png_export() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("img.png");
        let t = ImageTensor::from_vec((1, 1, 3), vec![0.0, 0.5, 1.0]).unwrap();
        export_display_png(&t, 0.0, 1.0, &p).unwrap();
        let decoder = png::Decoder::new(std::io::BufReader::new(fs::File::open(&p).unwrap()));
        let mut reader = decoder.read_info().unwrap();
        let mut buf = vec![0; reader.output_buffer_size().unwrap()];
        let info = reader.next_frame(&mut buf).unwrap();
        assert_eq!((info.width, info.height), (3, 1));
        assert_eq!(info.color_type, png::ColorType::Grayscale);
        assert_eq!(&buf[..3], &[0, 128, 255]);
        assert!(export_display_png(&t, 1.0, 1.0, &p).is_err());
    }

    #[test]
    fn dataset_directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut ds = PairedDataset::synthetic(3, 16, 0.25, 7).unwrap();
        ds.window = Some((-160.0, 240.0));
        ds.save_dir(dir.path()).unwrap();
        let back = PairedDataset::load_dir(dir.path()).unwrap();
        assert_eq!(back.len(), 3);
        assert_eq!(back.pairs(), ds.pairs());
        assert_eq!(back.window, Some((-160.0, 240.0)));

        fs::remove_file(dir.path().join("pair_1_ndct.imgt")).unwrap();
        assert!(PairedDataset::load_dir(dir.path()).is_err());
        let empty = tempfile::tempdir().unwrap();
        assert!(matches!(PairedDataset::load_dir(empty.path()), Err(Error::EmptyDataset)));
    }

    #[test]
    fn synthetic_pairs_are_reproducible() {
        let a = PairedDataset::synthetic(4, 16, 0.25, 1).unwrap();
        let b = PairedDataset::synthetic(4, 16, 0.25, 1).unwrap();
        assert_eq!(a.pairs(), b.pairs());
        assert_ne!(a.pair(0).1, a.pair(1).1);
    }
}
