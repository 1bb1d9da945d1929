//! Binary checkpoint: denoiser parameters, schedule descriptor, training metadata.
//!
//! All integers and reals are little-endian:
//!
//! | field              | type      |
//! |--------------------|-----------|
//! | magic `DDPMCKPT`   | 8 bytes   |
//! | format version     | u32       |
//! | T                  | u64       |
//! | beta_start         | f64       |
//! | beta_end           | f64       |
//! | image channels     | u32       |
//! | hidden channels    | u32       |
//! | time embedding dim | u32       |
//! | training mode      | u32 (0 = ddpm, 1 = baseline) |
//! | iterations         | u64       |
//! | seed               | u64       |
//! | parameter count    | u64       |
//! | parameters         | f64 × n, layer order |

use std::fs;
use std::io::Write;
use std::path::Path;

use super::conv::{Architecture, ConvDenoiser};
use crate::error::{Error, Result};
use crate::schedule::{ScheduleDescriptor, VarianceSchedule};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DDPMCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Objective the parameters were trained with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TrainMode {
    /// ε-prediction on noised targets.
    #[default]
    Ddpm,
    /// Direct supervised mapping from the low-dose input to the target.
    Baseline,
}

impl TrainMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TrainMode::Ddpm => "ddpm",
            TrainMode::Baseline => "baseline",
        }
    }

    fn code(self) -> u32 {
        match self {
            TrainMode::Ddpm => 0,
            TrainMode::Baseline => 1,
        }
    }

    fn from_code(code: u32) -> Result<Self> {
        match code {
            0 => Ok(TrainMode::Ddpm),
            1 => Ok(TrainMode::Baseline),
            other => Err(Error::Corrupt(format!("unknown training mode code {other}"))),
        }
    }
}

impl std::str::FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ddpm" => Ok(TrainMode::Ddpm),
            "baseline" => Ok(TrainMode::Baseline),
            other => Err(Error::Usage(format!("unknown mode `{other}` (ddpm | baseline)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TrainingMeta {
    pub mode: TrainMode,
    pub iterations: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub schedule: ScheduleDescriptor,
    pub net: ConvDenoiser,
    pub meta: TrainingMeta,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::Corrupt(format!("checkpoint truncated while reading {what}"))
        })?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let arch = self.net.architecture();
        let params = self.net.params();
        let mut out = Vec::with_capacity(80 + 8 * params.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.schedule.steps as u64).to_le_bytes());
        out.extend_from_slice(&self.schedule.beta_start.to_le_bytes());
        out.extend_from_slice(&self.schedule.beta_end.to_le_bytes());
        for c in [arch.image_channels, arch.hidden_channels, arch.time_embed_dim] {
            out.extend_from_slice(&(c as u32).to_le_bytes());
        }
        out.extend_from_slice(&self.meta.mode.code().to_le_bytes());
        out.extend_from_slice(&self.meta.iterations.to_le_bytes());
        out.extend_from_slice(&self.meta.seed.to_le_bytes());
        out.extend_from_slice(&(params.len() as u64).to_le_bytes());
        for p in params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(8, "magic")? != CHECKPOINT_MAGIC {
            return Err(Error::Corrupt("bad checkpoint magic".into()));
        }
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Corrupt(format!("unsupported checkpoint version {version}")));
        }
        let steps = r.u64("T")?;
        let schedule = ScheduleDescriptor {
            steps: usize::try_from(steps).map_err(|_| Error::Corrupt("T overflows".into()))?,
            beta_start: r.f64("beta_start")?,
            beta_end: r.f64("beta_end")?,
        };
        VarianceSchedule::from_descriptor(schedule)
            .map_err(|e| Error::Corrupt(format!("invalid schedule descriptor: {e}")))?;
        let arch = Architecture {
            image_channels: r.u32("architecture")? as usize,
            hidden_channels: r.u32("architecture")? as usize,
            time_embed_dim: r.u32("architecture")? as usize,
        };
        let meta = TrainingMeta {
            mode: TrainMode::from_code(r.u32("mode")?)?,
            iterations: r.u64("iterations")?,
            seed: r.u64("seed")?,
        };
        let count = r.u64("parameter count")? as usize;
        let raw = r.take(
            count
                .checked_mul(8)
                .ok_or_else(|| Error::Corrupt("parameter count overflows".into()))?,
            "parameters",
        )?;
        if r.pos != buf.len() {
            return Err(Error::Corrupt(format!(
                "{} trailing bytes after parameters",
                buf.len() - r.pos
            )));
        }
        let params = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let net = ConvDenoiser::from_params(arch, params)
            .map_err(|e| Error::Corrupt(format!("checkpoint parameters: {e}")))?;
        Ok(Self { schedule, net, meta })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    pub fn variance_schedule(&self) -> Result<VarianceSchedule> {
        VarianceSchedule::from_descriptor(self.schedule)
    }
}
