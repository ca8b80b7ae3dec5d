//! fsod-bench: a benchmark-construction and evaluation toolkit for few-shot
//! object detection.
//!
//! The pieces, bottom up:
//!
//! - [`geometry`]: box arithmetic (area, IoU, clipping, crop regions)
//! - [`matching`]: per-class Hungarian assignment and TP/FP/FN derivation
//! - [`metrics`]: F1 across the 50-threshold IoU sweep, mF1, Mean IoU of
//!   true positives, micro/macro aggregation
//! - [`split`]: two-phase example/test split optimization with SSS-ranked
//!   seed search
//! - [`dataset`]: corpus ingestion (COCO JSON / CSV), synthetic fixtures,
//!   K-shot support assembly, crop extraction
//! - [`backends`]: detector / classifier / segmenter clients over a JSON
//!   wire protocol, plus deterministic oracle backends for offline runs
//! - [`runner`]: the four experiment pipelines, resumable run records,
//!   evaluation and result tables

pub mod backends;
pub mod dataset;
pub mod error;
pub mod geometry;
pub mod matching;
pub mod metrics;
pub mod runner;
pub mod split;
mod util;

pub use error::{Error, Result};
pub use util::round_half_even;
