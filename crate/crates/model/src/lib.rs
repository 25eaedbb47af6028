//! A small joint panoptic segmentation and captioning network on the `ppk-autodiff`
//! tape.
//!
//! The pixel module produces grid features `F` and per-pixel embeddings `E`; a
//! query decoder turns `F` into class distributions and soft masks over `E`; a
//! transformer caption decoder reads the same `F`. Training minimizes
//! `L_seg + λ L_cap` so that caption gradients reach the shared pixel module.

pub mod audit;
pub mod beam;
pub mod config;
mod error;
pub mod infer;
pub mod layers;
pub mod loss;
pub mod network;
pub mod params;
pub mod predict;
pub mod saliency;
pub mod train;

pub use config::{Config, ModelConfig, TrainConfig};
pub use error::{Error, Result};
pub use network::{Model, PredictionSet};
pub use train::{EpochMetrics, Sample, Trainer};
