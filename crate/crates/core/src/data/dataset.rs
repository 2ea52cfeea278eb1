//! On-disk dataset layout: `images/<id>.pgm`, `masks/<id>.pgm`,
//! `manifest.tsv`.

use std::fs;
use std::path::{Path, PathBuf};

use crate::data::facies::{boundary_mask, generate_facies_model, render_seismic};
use crate::data::grid::{Image, Mask};
use crate::data::pgm::{read_image_pgm, read_mask_pgm, write_image_pgm, write_mask_pgm};
use crate::data::split::{split_dataset, Split, SplitManifest};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub const MANIFEST_FILE: &str = "manifest.tsv";

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: Image,
    pub mask: Mask,
}

impl Sample {
    pub fn new(id: impl Into<String>, image: Image, mask: Mask) -> Result<Self> {
        if !image.same_dims(&mask) {
            return Err(Error::shape(format!(
                "image {}x{} and mask {}x{} differ",
                image.height, image.width, mask.height, mask.width
            )));
        }
        if !mask.is_binary() {
            return Err(Error::invalid("mask must be binary"));
        }
        Ok(Sample {
            id: id.into(),
            image,
            mask,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenerateConfig {
    pub samples: usize,
    pub height: usize,
    pub width: usize,
    pub num_horizons: usize,
    pub thickness: usize,
    pub noise_level: f64,
    pub fractions: [f64; 3],
    pub seed: u64,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        GenerateConfig {
            samples: 200,
            height: 64,
            width: 64,
            num_horizons: 4,
            thickness: 3,
            noise_level: 0.1,
            fractions: [0.8, 0.1, 0.1],
            seed: 42,
        }
    }
}

/// SplitMix64 finalizer; derives independent per-sample seeds.
pub fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed
        ^ index
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(0x632B_E59B_D9B4_E019);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn sample_id(index: usize) -> String {
    format!("s{index:05}")
}

/// The `index`-th sample of the dataset described by `cfg`; depends only on
/// `(cfg, index)`.
pub fn generate_sample(cfg: &GenerateConfig, index: usize) -> Result<Sample> {
    let seed = mix_seed(cfg.seed, index as u64);
    let labels = generate_facies_model(cfg.height, cfg.width, cfg.num_horizons, seed)?;
    let mask = boundary_mask(&labels, cfg.thickness)?;
    let image = render_seismic(&labels, cfg.noise_level, mix_seed(seed, 1))?;
    Sample::new(sample_id(index), image, mask)
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub samples: Vec<Sample>,
    pub manifest: SplitManifest,
}

impl Dataset {
    pub fn image_path(root: &Path, id: &str) -> PathBuf {
        root.join("images").join(format!("{id}.pgm"))
    }

    pub fn mask_path(root: &Path, id: &str) -> PathBuf {
        root.join("masks").join(format!("{id}.pgm"))
    }

    /// Generate samples in memory and write them with their manifest.
    pub fn generate(root: impl AsRef<Path>, cfg: &GenerateConfig) -> Result<Dataset> {
        let root = root.as_ref().to_path_buf();
        let samples = (0..cfg.samples)
            .map(|i| generate_sample(cfg, i))
            .collect::<Result<Vec<_>>>()?;
        let ids: Vec<String> = samples.iter().map(|s| s.id.clone()).collect();
        let manifest = split_dataset(&ids, cfg.fractions, cfg.seed)?;
        let ds = Dataset {
            root,
            samples,
            manifest,
        };
        ds.write()?;
        Ok(ds)
    }

    pub fn write(&self) -> Result<()> {
        for sub in ["images", "masks"] {
            let dir = self.root.join(sub);
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        for s in &self.samples {
            write_image_pgm(Self::image_path(&self.root, &s.id), &s.image)?;
            write_mask_pgm(Self::mask_path(&self.root, &s.id), &s.mask)?;
        }
        let path = self.root.join(MANIFEST_FILE);
        fs::write(&path, self.manifest.to_tsv()).map_err(|e| Error::io(&path, e))
    }

    pub fn load(root: impl AsRef<Path>) -> Result<Dataset> {
        let root = root.as_ref().to_path_buf();
        let path = root.join(MANIFEST_FILE);
        if !path.exists() {
            return Err(Error::invalid(format!(
                "no dataset at {}: {MANIFEST_FILE} is missing",
                root.display()
            )));
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest = SplitManifest::from_tsv(&text)?;
        let mut samples = Vec::with_capacity(manifest.len());
        for split in Split::ALL {
            for id in manifest.ids(split) {
                let image = read_image_pgm(Self::image_path(&root, id))?;
                let mask = read_mask_pgm(Self::mask_path(&root, id))?;
                samples.push(Sample::new(id.clone(), image, mask)?);
            }
        }
        Ok(Dataset {
            root,
            samples,
            manifest,
        })
    }

    pub fn get(&self, id: &str) -> Option<&Sample> {
        self.samples.iter().find(|s| s.id == id)
    }

    /// Samples of `split` in manifest order.
    pub fn split(&self, split: Split) -> Result<Vec<&Sample>> {
        self.manifest
            .ids(split)
            .iter()
            .map(|id| {
                self.get(id)
                    .ok_or_else(|| Error::invalid(format!("manifest id {id} has no sample")))
            })
            .collect()
    }
}

pub fn image_tensor<T: Real>(image: &Image) -> Tensor<T> {
    let data = image.data.iter().map(|&v| T::from_f64(v as f64)).collect();
    Tensor::from_vec([1, 1, image.height, image.width], data).expect("grid dims match data")
}

pub fn mask_tensor<T: Real>(mask: &Mask) -> Tensor<T> {
    let data = mask.data.iter().map(|&v| T::from_f64(v as f64)).collect();
    Tensor::from_vec([1, 1, mask.height, mask.width], data).expect("grid dims match data")
}

/// Stack samples into `(N, 1, H, W)` image and mask tensors.
pub fn batch_tensors<T: Real>(samples: &[&Sample]) -> Result<(Tensor<T>, Tensor<T>)> {
    let images: Vec<Tensor<T>> = samples.iter().map(|s| image_tensor(&s.image)).collect();
    let masks: Vec<Tensor<T>> = samples.iter().map(|s| mask_tensor(&s.mask)).collect();
    Ok((Tensor::stack(&images)?, Tensor::stack(&masks)?))
}
