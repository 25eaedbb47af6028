//! Core of the panoptic perception toolkit.
//!
//! Everything here is pure data manipulation over plain Rust values:
//!
//! * [`panoptic`]: category registry, panoptic id rasters, binary masks, image records.
//! * [`codec`]: the raw `PIDM` raster format and the COCO-compatible RGB-PNG id encoding.
//! * [`annotation`]: the dataset-level annotation JSON and on-disk layout.
//! * [`pq`]: Panoptic Quality (PQ/SQ/RQ) evaluation with things/stuff splits.
//! * [`text`] and [`bleu`]: caption tokenization, vocabulary and BLEU-4.
//! * [`matching`]: cost construction and an exact Hungarian solver for set prediction.
//! * [`consistency`]: caption count extraction checked against panoptic instances.
//! * [`synth`]: deterministic synthetic airport scenes with captions.

pub mod annotation;
pub mod bleu;
pub mod codec;
pub mod consistency;
mod error;
pub mod matching;
pub mod panoptic;
pub mod pq;
pub mod synth;
pub mod text;

pub use error::{Error, Result};
pub use panoptic::{
    BinaryMask, CaptionRecord, Category, CategoryRegistry, ImageRecord, PanopticMap, Segment,
};
