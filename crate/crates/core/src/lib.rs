// `!(x > 0.0)` style checks are deliberate: they reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Binary boundary segmentation of seismic facies with a compact
//! encoder-decoder network, written from first principles.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`] and [`ops`]: rank-4 tensors and differentiable primitives
//!   with hand-derived backward passes.
//! * [`nn`]: layers, the skip-connected network and the Adam optimizer.
//! * [`arch`]: DNFS and U-Net-like builders plus parameter counting.
//! * [`loss`]: cross-entropy/Jaccard composite loss, IoU and black-pixel recall.
//! * [`data`]: synthetic facies sections, boundary masks, splits, PGM files.
//! * [`checkpoint`], [`config`], [`train`]: run plumbing.

pub mod arch;
pub mod checkpoint;
pub mod config;
pub mod data;
mod error;
pub mod loss;
pub mod nn;
pub mod ops;
pub mod tensor;
pub mod train;

pub use arch::{ArchSpec, Family};
pub use checkpoint::Checkpoint;
pub use config::RunConfig;
pub use error::{Error, Result};
pub use loss::{LossConfig, MaskPair};
pub use nn::{Mode, Network};
pub use tensor::{Real, Shape, Tensor};
