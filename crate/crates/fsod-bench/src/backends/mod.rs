//! Uniform client interface to detector / classifier / segmenter services
//! over a fixed JSON wire protocol, plus deterministic in-process oracle
//! backends that let the whole harness run offline.

mod oracle;
mod remote;
pub mod fake_server;
pub mod wire;

pub use oracle::{OracleClassifier, OracleConfig, OracleDetector, OracleSegmenter};
pub use remote::{BackendConfig, RemoteClassifier, RemoteClient, RemoteDetector, RemoteSegmenter};

use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::dataset::{ImageRecord, SupportSet};
use crate::error::Result;
use crate::geometry::{clip, iou, BBox, ImageDims};

fn default_true() -> bool {
    true
}

/// One predicted box with its class label and optional confidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    pub label: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    /// False when the backend answered with a label outside the experiment
    /// vocabulary; such predictions can never match and count as FPs.
    #[serde(default = "default_true")]
    pub in_vocab: bool,
}

/// Inputs for one detection call.
pub struct DetectRequest<'a> {
    pub image: &'a ImageRecord,
    pub vocab: &'a [String],
    pub prompt: Option<&'a str>,
    pub support: Option<&'a SupportSet>,
}

/// Inputs for one crop classification call. The region lives in the source
/// image's coordinate frame; `margin` controls the pixel crop padding.
pub struct ClassifyRequest<'a> {
    pub image: &'a ImageRecord,
    pub region: BBox,
    pub vocab: &'a [String],
    pub prompt: Option<&'a str>,
    pub support: Option<&'a SupportSet>,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifyResponse {
    pub label: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(default = "default_true")]
    pub in_vocab: bool,
}

pub trait Detector: Send + Sync {
    fn detect(&self, req: &DetectRequest) -> Result<Vec<Detection>>;
}

pub trait Classifier: Send + Sync {
    fn classify(&self, req: &ClassifyRequest) -> Result<ClassifyResponse>;
}

pub trait Segmenter: Send + Sync {
    fn segment(&self, image: &ImageRecord) -> Result<Vec<BBox>>;
}

/// Map a raw label onto the vocabulary by trimmed, case-insensitive exact
/// match. Anything else is preserved verbatim and marked out-of-vocabulary.
pub fn map_label(raw: &str, vocab: &[String]) -> (String, bool) {
    let needle = raw.trim();
    for v in vocab {
        if v.eq_ignore_ascii_case(needle) {
            return (v.clone(), true);
        }
    }
    (raw.to_string(), false)
}

/// Drop near-duplicate proposals: a box is kept unless it overlaps an
/// already kept box with IoU above `thresh` (0.95 for segmenters).
pub fn dedup_proposals(boxes: Vec<BBox>, thresh: f64) -> Vec<BBox> {
    let mut kept: Vec<BBox> = Vec::with_capacity(boxes.len());
    for b in boxes {
        if kept.iter().all(|k| iou(k, &b) <= thresh) {
            kept.push(b);
        }
    }
    kept
}

/// Clip a raw backend box to the image, returning `None` (caller logs a
/// warning) when nothing remains.
pub fn clip_to_image(b: &BBox, dims: &ImageDims) -> Option<BBox> {
    clip(b, dims)
}

/// Shared sink for retry and warning events. Appends are serialized; tests
/// and the runner read snapshots.
#[derive(Debug, Default)]
pub struct EventLog {
    events: Mutex<Vec<String>>,
}

impl EventLog {
    pub fn push(&self, event: String) {
        log::warn!("{event}");
        self.events.lock().expect("event log poisoned").push(event);
    }

    pub fn snapshot(&self) -> Vec<String> {
        self.events.lock().expect("event log poisoned").clone()
    }

    pub fn count_containing(&self, needle: &str) -> usize {
        self.snapshot().iter().filter(|e| e.contains(needle)).count()
    }
}
