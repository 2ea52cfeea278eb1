//! Run configuration, readable from `key = value` text with `#` comments.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::arch::{ArchSpec, Family};
use crate::data::GenerateConfig;
use crate::error::{Error, Result};
use crate::loss::LossConfig;
use crate::nn::AdamConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub family: Family,
    pub multiplier: usize,
    pub depth: usize,
    pub psi: f64,
    pub smooth_eps: f64,
    pub threshold: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub thickness: usize,
    pub image_size: usize,
    pub samples: usize,
    pub num_horizons: usize,
    pub noise_level: f64,
    pub fractions: [f64; 3],
}

impl Default for RunConfig {
    fn default() -> Self {
        let g = GenerateConfig::default();
        RunConfig {
            family: Family::Dnfs,
            multiplier: 4,
            depth: crate::arch::DEFAULT_DEPTH,
            psi: 0.5,
            smooth_eps: 1.0,
            threshold: 0.5,
            learning_rate: 1e-3,
            batch_size: 8,
            epochs: 20,
            seed: g.seed,
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("run"),
            thickness: g.thickness,
            image_size: g.height,
            samples: g.samples,
            num_horizons: g.num_horizons,
            noise_level: g.noise_level,
            fractions: g.fractions,
        }
    }
}

pub const KEYS: [&str; 18] = [
    "arch",
    "multiplier",
    "depth",
    "psi",
    "smooth_eps",
    "threshold",
    "learning_rate",
    "batch_size",
    "epochs",
    "seed",
    "data_dir",
    "out_dir",
    "thickness",
    "image_size",
    "samples",
    "num_horizons",
    "noise_level",
    "fractions",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::invalid(format!("bad value {value:?} for {key}")))
}

impl RunConfig {
    /// Set one key. `arch` accepts a family (`dnfs`, `unet-like`) or a
    /// preset (`dnfs-8`), the latter also setting the multiplier.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key.trim() {
            "arch" => match value.parse::<Family>() {
                Ok(f) => self.family = f,
                Err(_) => {
                    let spec = ArchSpec::from_preset(value)?;
                    self.family = spec.family;
                    self.multiplier = spec.multiplier;
                }
            },
            "multiplier" => self.multiplier = parse(key, value)?,
            "depth" => self.depth = parse(key, value)?,
            "psi" => self.psi = parse(key, value)?,
            "smooth_eps" => self.smooth_eps = parse(key, value)?,
            "threshold" => self.threshold = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "data_dir" => self.data_dir = PathBuf::from(value),
            "out_dir" => self.out_dir = PathBuf::from(value),
            "thickness" => self.thickness = parse(key, value)?,
            "image_size" => self.image_size = parse(key, value)?,
            "samples" => self.samples = parse(key, value)?,
            "num_horizons" => self.num_horizons = parse(key, value)?,
            "noise_level" => self.noise_level = parse(key, value)?,
            "fractions" => {
                let parts: Vec<f64> = value
                    .split(',')
                    .map(|p| parse(key, p.trim()))
                    .collect::<Result<_>>()?;
                self.fractions = parts.try_into().map_err(|_| {
                    Error::invalid(format!("fractions needs three values, got {value:?}"))
                })?;
            }
            other => {
                return Err(Error::invalid(format!(
                    "unknown config key {other:?}; known keys: {}",
                    KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// Apply `key = value` lines on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::invalid(format!("config line {}: expected key = value", i + 1))
            })?;
            self.set(k, v)
                .map_err(|e| Error::invalid(format!("config line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = RunConfig::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "arch = {}", self.family);
        let _ = writeln!(s, "multiplier = {}", self.multiplier);
        let _ = writeln!(s, "depth = {}", self.depth);
        let _ = writeln!(s, "psi = {}", self.psi);
        let _ = writeln!(s, "smooth_eps = {}", self.smooth_eps);
        let _ = writeln!(s, "threshold = {}", self.threshold);
        let _ = writeln!(s, "learning_rate = {}", self.learning_rate);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "epochs = {}", self.epochs);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "data_dir = {}", self.data_dir.display());
        let _ = writeln!(s, "out_dir = {}", self.out_dir.display());
        let _ = writeln!(s, "thickness = {}", self.thickness);
        let _ = writeln!(s, "image_size = {}", self.image_size);
        let _ = writeln!(s, "samples = {}", self.samples);
        let _ = writeln!(s, "num_horizons = {}", self.num_horizons);
        let _ = writeln!(s, "noise_level = {}", self.noise_level);
        let _ = writeln!(
            s,
            "fractions = {},{},{}",
            self.fractions[0], self.fractions[1], self.fractions[2]
        );
        s
    }

    pub fn arch_spec(&self) -> ArchSpec {
        ArchSpec {
            family: self.family,
            multiplier: self.multiplier,
            depth: self.depth,
            input_channels: 1,
        }
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            psi: self.psi,
            smooth_eps: self.smooth_eps,
            threshold: self.threshold,
        }
    }

    pub fn adam_config(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            ..AdamConfig::default()
        }
    }

    pub fn generate_config(&self) -> GenerateConfig {
        GenerateConfig {
            samples: self.samples,
            height: self.image_size,
            width: self.image_size,
            num_horizons: self.num_horizons,
            thickness: self.thickness,
            noise_level: self.noise_level,
            fractions: self.fractions,
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.arch_spec().validate()?;
        self.loss_config().validate()?;
        self.adam_config().validate()?;
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        if self.thickness == 0 {
            return Err(Error::invalid("thickness must be positive"));
        }
        if self.image_size == 0 || !self.image_size.is_multiple_of(self.arch_spec().spatial_multiple()) {
            return Err(Error::invalid(format!(
                "image_size {} must be a positive multiple of {}",
                self.image_size,
                self.arch_spec().spatial_multiple()
            )));
        }
        if !(self.noise_level >= 0.0) {
            return Err(Error::invalid("noise_level must be non-negative"));
        }
        Ok(())
    }
}
