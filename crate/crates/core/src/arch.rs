//! Encoder-decoder builders: the compact DNFS network and a U-Net-like
//! reference with doubled convolution blocks.
//!
//! Both share one topology. Each encoder level `l` runs a 3x3 convolution
//! to `m * 2^l` channels, relu, records a skip, and max-pools. A bottleneck
//! at `m * 2^depth` channels joins encoder and decoder. Each decoder level
//! upsamples with a stride-2 transposed convolution that halves channels,
//! concatenates the matching skip, and merges back to the skip width. A 1x1
//! head and a sigmoid produce per-pixel boundary probabilities.
//!
//! DNFS uses one convolution per block and a single bottleneck layer; the
//! U-Net-like reference uses two everywhere.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::nn::{Layer, Network};
use crate::tensor::Real;

/// Kernel size of every hidden convolution.
pub const CONV_KERNEL: usize = 3;
/// Kernel size of the stride-2 transposed convolutions in the decoder.
pub const UPSAMPLE_KERNEL: usize = 3;
/// Filter-scale multipliers exposed as named presets.
pub const PRESET_MULTIPLIERS: [usize; 8] = [1, 2, 4, 8, 16, 32, 64, 128];
pub const DEFAULT_DEPTH: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Family {
    Dnfs,
    UnetLike,
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::Dnfs => "dnfs",
            Family::UnetLike => "unet-like",
        }
    }

    fn convs_per_block(&self) -> usize {
        match self {
            Family::Dnfs => 1,
            Family::UnetLike => 2,
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dnfs" => Ok(Family::Dnfs),
            "unet-like" | "unet_like" => Ok(Family::UnetLike),
            other => Err(Error::invalid(format!(
                "unknown architecture family {other:?} (expected dnfs or unet-like)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ArchSpec {
    pub family: Family,
    pub multiplier: usize,
    pub depth: usize,
    pub input_channels: usize,
}

impl ArchSpec {
    pub fn new(family: Family, multiplier: usize) -> Self {
        ArchSpec {
            family,
            multiplier,
            depth: DEFAULT_DEPTH,
            input_channels: 1,
        }
    }

    pub fn dnfs(multiplier: usize) -> Self {
        Self::new(Family::Dnfs, multiplier)
    }

    pub fn unet_like(multiplier: usize) -> Self {
        Self::new(Family::UnetLike, multiplier)
    }

    pub fn validate(&self) -> Result<()> {
        if self.multiplier == 0 {
            return Err(Error::invalid("multiplier must be positive"));
        }
        if self.depth == 0 || self.depth > 12 {
            return Err(Error::invalid(format!(
                "depth must be in 1..=12, got {}",
                self.depth
            )));
        }
        if self.input_channels == 0 {
            return Err(Error::invalid("input_channels must be positive"));
        }
        Ok(())
    }

    /// Input height and width must be multiples of this.
    pub fn spatial_multiple(&self) -> usize {
        1 << self.depth
    }

    /// Channel width at encoder level `level`; `level == depth` is the bottleneck.
    pub fn width(&self, level: usize) -> usize {
        self.multiplier << level
    }

    pub fn preset_name(&self) -> String {
        format!("{}-{}", self.family, self.multiplier)
    }

    /// Resolve a preset such as `dnfs-8` or `unet-like-32`.
    pub fn from_preset(name: &str) -> Result<Self> {
        let parsed = name.rsplit_once('-').and_then(|(fam, m)| {
            let family = fam.parse::<Family>().ok()?;
            let m = m.parse::<usize>().ok()?;
            PRESET_MULTIPLIERS
                .contains(&m)
                .then(|| ArchSpec::new(family, m))
        });
        parsed.ok_or_else(|| {
            Error::invalid(format!(
                "unknown preset {name:?}; available presets: {}",
                preset_names().join(", ")
            ))
        })
    }

    /// Build the network this spec describes, uninitialized.
    pub fn build<T: Real>(&self) -> Result<Network<T>> {
        match self.family {
            Family::Dnfs => build_dnfs(self),
            Family::UnetLike => build_unet_like(self),
        }
    }
}

/// Canonical text form `dnfs-8;depth=3;in=1`, used in checkpoints.
impl fmt::Display for ArchSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}-{};depth={};in={}",
            self.family, self.multiplier, self.depth, self.input_channels
        )
    }
}

impl FromStr for ArchSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.split(';');
        let head = parts.next().unwrap_or_default().trim();
        let (fam, m) = head
            .rsplit_once('-')
            .ok_or_else(|| Error::invalid(format!("malformed architecture {s:?}")))?;
        let mut spec = ArchSpec::new(
            fam.parse()?,
            m.parse()
                .map_err(|_| Error::invalid(format!("bad multiplier in {s:?}")))?,
        );
        for part in parts {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("malformed architecture option {part:?}")))?;
            let v: usize = v
                .trim()
                .parse()
                .map_err(|_| Error::invalid(format!("bad value in {part:?}")))?;
            match k.trim() {
                "depth" => spec.depth = v,
                "in" => spec.input_channels = v,
                other => {
                    return Err(Error::invalid(format!(
                        "unknown architecture option {other:?}"
                    )))
                }
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}

pub fn preset_names() -> Vec<String> {
    [Family::Dnfs, Family::UnetLike]
        .iter()
        .flat_map(|f| {
            PRESET_MULTIPLIERS
                .iter()
                .map(move |m| ArchSpec::new(*f, *m).preset_name())
        })
        .collect()
}

fn conv_block<T: Real>(
    layers: &mut Vec<Layer<T>>,
    prefix: &str,
    c_in: usize,
    c_out: usize,
    n: usize,
) {
    let mut c = c_in;
    for i in 0..n {
        let tag = if n == 1 {
            String::new()
        } else {
            format!("{i}")
        };
        layers.push(Layer::conv(
            format!("{prefix}.conv{tag}"),
            c,
            c_out,
            CONV_KERNEL,
        ));
        layers.push(Layer::relu(format!("{prefix}.relu{tag}")));
        c = c_out;
    }
}

fn build<T: Real>(spec: &ArchSpec) -> Result<Network<T>> {
    spec.validate()?;
    let per = spec.family.convs_per_block();
    let mut layers = Vec::new();
    let mut c = spec.input_channels;
    for level in 0..spec.depth {
        let w = spec.width(level);
        conv_block(&mut layers, &format!("enc{level}"), c, w, per);
        layers.push(Layer::skip_source(format!("enc{level}.skip")));
        layers.push(Layer::maxpool(format!("enc{level}.pool")));
        c = w;
    }
    let bottleneck = spec.width(spec.depth);
    conv_block(&mut layers, "bottleneck", c, bottleneck, per);
    c = bottleneck;
    for level in (0..spec.depth).rev() {
        let w = spec.width(level);
        layers.push(Layer::upsample2(
            format!("dec{level}.up"),
            c,
            w,
            UPSAMPLE_KERNEL,
        ));
        layers.push(Layer::skip_sink(
            format!("dec{level}.cat"),
            format!("enc{level}.skip"),
        ));
        conv_block(&mut layers, &format!("dec{level}"), 2 * w, w, per);
        c = w;
    }
    layers.push(Layer::output_head("head", c, 1));
    layers.push(Layer::sigmoid("head.sigmoid"));
    let side = spec.spatial_multiple();
    Network::new(layers, (spec.input_channels, side, side))
}

pub fn build_dnfs<T: Real>(spec: &ArchSpec) -> Result<Network<T>> {
    if spec.family != Family::Dnfs {
        return Err(Error::invalid(format!(
            "{} is not a dnfs spec",
            spec.preset_name()
        )));
    }
    build(spec)
}

pub fn build_unet_like<T: Real>(spec: &ArchSpec) -> Result<Network<T>> {
    if spec.family != Family::UnetLike {
        return Err(Error::invalid(format!(
            "{} is not a unet-like spec",
            spec.preset_name()
        )));
    }
    build(spec)
}

/// Number of stored parameters, counted by walking every layer's tensors.
pub fn count_parameters<T: Real>(net: &Network<T>) -> usize {
    net.num_parameters()
}

/// Closed-form parameter count: `(K*K*C_in + 1) * C_out` per convolution,
/// `K*K*C_in*C_out + C_out` per transposed convolution.
pub fn analytic_parameter_count(spec: &ArchSpec) -> Result<usize> {
    spec.validate()?;
    let conv = |k: usize, ci: usize, co: usize| (k * k * ci + 1) * co;
    let tconv = |k: usize, ci: usize, co: usize| k * k * ci * co + co;
    let per = spec.family.convs_per_block();
    let block =
        |ci: usize, co: usize| conv(CONV_KERNEL, ci, co) + (per - 1) * conv(CONV_KERNEL, co, co);
    let mut total = 0;
    let mut c = spec.input_channels;
    for level in 0..spec.depth {
        total += block(c, spec.width(level));
        c = spec.width(level);
    }
    total += block(c, spec.width(spec.depth));
    for level in 0..spec.depth {
        let w = spec.width(level);
        total += tconv(UPSAMPLE_KERNEL, 2 * w, w) + block(2 * w, w);
    }
    total += conv(1, spec.width(0), 1);
    Ok(total)
}
