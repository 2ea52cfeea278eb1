//! Synthetic facies data, boundary masks, splits and PGM I/O.

pub mod dataset;
pub mod facies;
pub mod grid;
pub mod pgm;
pub mod split;

pub use dataset::{
    batch_tensors, generate_sample, image_tensor, mask_tensor, Dataset, GenerateConfig, Sample,
};
pub use facies::{
    boundary_mask, generate_facies_model, render_seismic, seismic_response, FaciesLabelMap,
};
pub use grid::{Grid, Image, Mask};
pub use split::{split_dataset, Split, SplitManifest};
