//! Versioned binary snapshot of a network and its optimizer.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! "DNFS"                      magic
//! u32                         format version (1)
//! u32 len, bytes              architecture string, e.g. "dnfs-8;depth=3;in=1"
//! u32                         completed epochs
//! u64                         data-order seed (per-epoch shuffles derive from it)
//! u32 count, count x tensor   parameters
//! u64                         optimizer step
//! f64 x 4                     learning rate, beta1, beta2, epsilon
//! u32 count, count x tensor   first moments then second moments
//!
//! tensor := u32 len, name bytes, u32 rank, rank x u32 dims, f32 values
//! ```

use std::fs;
use std::path::Path;

use crate::arch::ArchSpec;
use crate::error::{Error, Result};
use crate::nn::{AdamConfig, Network, OptimizerState};

pub const MAGIC: &[u8; 4] = b"DNFS";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<u32>,
    pub values: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub arch: ArchSpec,
    pub epoch: u32,
    pub seed: u64,
    pub params: Vec<NamedTensor>,
    pub optimizer_step: u64,
    pub optimizer_config: AdamConfig,
    pub moments: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn capture(
        arch: &ArchSpec,
        net: &Network<f32>,
        opt: &OptimizerState<f32>,
        epoch: u32,
        seed: u64,
    ) -> Self {
        let named = net.named_parameters();
        let params = named
            .iter()
            .map(|(name, shape, values)| NamedTensor {
                name: name.clone(),
                dims: param_dims(name, shape.dims()),
                values: values.to_vec(),
            })
            .collect();
        let mut moments = Vec::with_capacity(2 * named.len());
        for (suffix, store) in [("m", &opt.first_moments), ("v", &opt.second_moments)] {
            for ((name, shape, _), values) in named.iter().zip(store) {
                moments.push(NamedTensor {
                    name: format!("{name}.{suffix}"),
                    dims: param_dims(name, shape.dims()),
                    values: values.clone(),
                });
            }
        }
        Checkpoint {
            version: FORMAT_VERSION,
            arch: *arch,
            epoch,
            seed,
            params,
            optimizer_step: opt.step,
            optimizer_config: opt.config,
            moments,
        }
    }

    /// Rebuild the network and optimizer, verifying every tensor name and
    /// shape against the architecture.
    pub fn restore(&self) -> Result<(Network<f32>, OptimizerState<f32>)> {
        let mut net: Network<f32> = self.arch.build()?;
        let expected: Vec<(String, Vec<u32>)> = net
            .named_parameters()
            .iter()
            .map(|(n, s, _)| (n.clone(), param_dims(n, s.dims())))
            .collect();
        if expected.len() != self.params.len() {
            return Err(Error::invalid(format!(
                "checkpoint holds {} parameter tensors, architecture {} needs {}",
                self.params.len(),
                self.arch,
                expected.len()
            )));
        }
        let mut flat = Vec::with_capacity(net.num_parameters());
        for ((name, dims), t) in expected.iter().zip(&self.params) {
            if &t.name != name || &t.dims != dims {
                return Err(Error::invalid(format!(
                    "checkpoint tensor {} {:?} does not match architecture tensor {name} {dims:?}",
                    t.name, t.dims
                )));
            }
            flat.extend_from_slice(&t.values);
        }
        net.set_flat_parameters(&flat)?;

        let mut opt = OptimizerState::for_network(self.optimizer_config, &net);
        opt.step = self.optimizer_step;
        let n = expected.len();
        if self.moments.len() != 2 * n {
            return Err(Error::invalid(format!(
                "checkpoint holds {} moment tensors, expected {}",
                self.moments.len(),
                2 * n
            )));
        }
        for (i, t) in self.moments.iter().enumerate() {
            let (name, dims) = &expected[i % n];
            let suffix = if i < n { "m" } else { "v" };
            if t.name != format!("{name}.{suffix}") || &t.dims != dims {
                return Err(Error::invalid(format!(
                    "optimizer tensor {} does not match {name}.{suffix}",
                    t.name
                )));
            }
            let store = if i < n {
                &mut opt.first_moments[i]
            } else {
                &mut opt.second_moments[i - n]
            };
            store.copy_from_slice(&t.values);
        }
        Ok((net, opt))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        put_str(&mut out, &self.arch.to_string());
        out.extend_from_slice(&self.epoch.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        put_tensors(&mut out, &self.params);
        out.extend_from_slice(&self.optimizer_step.to_le_bytes());
        let c = &self.optimizer_config;
        for v in [c.learning_rate, c.beta1, c.beta2, c.epsilon] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        put_tensors(&mut out, &self.moments);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("not a checkpoint: bad magic".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let arch: ArchSpec = r.string()?.parse()?;
        let epoch = r.u32()?;
        let seed = r.u64()?;
        let params = r.tensors()?;
        let optimizer_step = r.u64()?;
        let optimizer_config = AdamConfig {
            learning_rate: r.f64()?,
            beta1: r.f64()?,
            beta2: r.f64()?,
            epsilon: r.f64()?,
        };
        let moments = r.tensors()?;
        if r.pos != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after checkpoint",
                bytes.len() - r.pos
            )));
        }
        Ok(Checkpoint {
            version,
            arch,
            epoch,
            seed,
            params,
            optimizer_step,
            optimizer_config,
            moments,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(|t| t.values.len()).sum()
    }
}

/// Biases are stored as rank-1 tensors, kernels as rank 4.
fn param_dims(name: &str, dims: [usize; 4]) -> Vec<u32> {
    if name.ends_with(".bias") {
        vec![dims[3] as u32]
    } else {
        dims.iter().map(|&d| d as u32).collect()
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn put_tensors(out: &mut Vec<u8>, tensors: &[NamedTensor]) {
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        put_str(out, &t.name);
        out.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
        for d in &t.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in &t.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format(format!(
                "truncated checkpoint at byte {} (wanted {n} more)",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Format("checkpoint string is not UTF-8".into()))
    }

    fn tensors(&mut self) -> Result<Vec<NamedTensor>> {
        let count = self.u32()? as usize;
        let mut out = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let name = self.string()?;
            let rank = self.u32()? as usize;
            if rank > 8 {
                return Err(Error::Format(format!("tensor {name} has rank {rank}")));
            }
            let dims = (0..rank).map(|_| self.u32()).collect::<Result<Vec<_>>>()?;
            let len = dims.iter().map(|&d| d as usize).product::<usize>();
            let raw = self.take(
                len.checked_mul(4)
                    .ok_or_else(|| Error::Format(format!("tensor {name} is too large")))?,
            )?;
            let values = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            out.push(NamedTensor { name, dims, values });
        }
        Ok(out)
    }
}
