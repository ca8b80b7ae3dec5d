//! JSON wire protocol shared by remote backends and the fake server.
//!
//! Requests are HTTP POSTs with a JSON body; images travel as base64 PNG.
//! Field names are part of the contract and documented in
//! `docs/wire_protocol.md`:
//!
//! request: `{"image", "vocab", "prompt"?, "support"?: [{"image", "label"}]}`
//! detect response: `{"detections": [{"bbox": [x_min, y_min, x_max, y_max], "label", "score"?}]}`
//! classify response: `{"label", "score"?}`
//! segment response: `{"boxes": [[x_min, y_min, x_max, y_max]]}`

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireRequest {
    pub image: String,
    pub vocab: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub support: Option<Vec<WireSupportItem>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireSupportItem {
    pub image: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireDetection {
    pub bbox: [f64; 4],
    pub label: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireDetectResponse {
    pub detections: Vec<WireDetection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireClassifyResponse {
    pub label: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireSegmentResponse {
    pub boxes: Vec<[f64; 4]>,
}
