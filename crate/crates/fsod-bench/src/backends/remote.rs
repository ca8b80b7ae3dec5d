//! HTTP clients for remote detector / classifier / segmenter services:
//! one POST per request, exponential backoff with jitter on 429/5xx and
//! transport errors, auth via environment variables only.

use std::sync::Arc;
use std::time::Duration;

use base64::Engine;
use rand::Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::dataset::{extract_crop, ImageRecord, SupportSet};
use crate::error::{Error, Result};
use crate::geometry::BBox;

use super::wire::{
    WireClassifyResponse, WireDetectResponse, WireRequest, WireSegmentResponse, WireSupportItem,
};
use super::{
    clip_to_image, map_label, ClassifyRequest, ClassifyResponse, Classifier, DetectRequest,
    Detection, Detector, EventLog, Segmenter,
};

fn default_timeout() -> f64 {
    30.0
}
fn default_retries() -> u32 {
    3
}
fn default_backoff() -> f64 {
    0.5
}
fn default_parallel() -> usize {
    4
}

/// Connection settings for one remote service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub endpoint: String,
    /// Name of the environment variable holding the bearer token. Tokens
    /// never appear in config files or flags.
    #[serde(default)]
    pub auth_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_s: f64,
    /// Total attempts per request, including the first.
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff")]
    pub backoff_base_s: f64,
    #[serde(default = "default_parallel")]
    pub max_parallel: usize,
}

impl BackendConfig {
    pub fn validate(&self) -> Result<()> {
        if self.timeout_s <= 0.0 {
            return Err(Error::Validation("backend timeout must be positive".into()));
        }
        if self.max_parallel < 1 {
            return Err(Error::Validation("max_parallel must be at least 1".into()));
        }
        if self.max_retries < 1 {
            return Err(Error::Validation("max_retries must be at least 1".into()));
        }
        Ok(())
    }
}

/// Shared request machinery: serialization, auth header, retry loop.
pub struct RemoteClient {
    cfg: BackendConfig,
    http: reqwest::blocking::Client,
    token: Option<String>,
    log: Arc<EventLog>,
}

impl RemoteClient {
    pub fn new(cfg: BackendConfig, log: Arc<EventLog>) -> Result<Self> {
        cfg.validate()?;
        let token = match &cfg.auth_env {
            Some(var) => std::env::var(var).ok(),
            None => None,
        };
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(cfg.timeout_s))
            .build()
            .map_err(|e| Error::Validation(format!("http client: {e}")))?;
        Ok(RemoteClient {
            cfg,
            http,
            token,
            log,
        })
    }

    pub fn config(&self) -> &BackendConfig {
        &self.cfg
    }

    fn backoff_delay(&self, attempt: u32) -> Duration {
        let cap = self.cfg.backoff_base_s * 2f64.powi(attempt as i32 - 1);
        let jittered = rand::thread_rng().gen_range(0.0..=cap.max(f64::MIN_POSITIVE));
        Duration::from_secs_f64(jittered)
    }

    /// POST the request, retrying 429/5xx and transport failures with
    /// jittered exponential backoff, up to `max_retries` total attempts.
    pub fn post<R: DeserializeOwned>(&self, body: &WireRequest) -> Result<R> {
        let mut last_reason = String::new();
        for attempt in 0..self.cfg.max_retries {
            if attempt > 0 {
                std::thread::sleep(self.backoff_delay(attempt));
                self.log.push(format!(
                    "retry {attempt} of {} to {} after {last_reason}",
                    self.cfg.max_retries - 1,
                    self.cfg.endpoint
                ));
            }
            let mut req = self.http.post(&self.cfg.endpoint).json(body);
            if let Some(token) = &self.token {
                req = req.bearer_auth(token);
            }
            match req.send() {
                Ok(resp) => {
                    let status = resp.status();
                    if status.as_u16() == 429 || status.is_server_error() {
                        last_reason = format!("status {status}");
                        continue;
                    }
                    if !status.is_success() {
                        return Err(Error::BackendExhausted {
                            attempts: attempt + 1,
                            reason: format!("non-retryable status {status}"),
                        });
                    }
                    let text = resp.text().map_err(|e| Error::MalformedResponse {
                        reason: e.to_string(),
                    })?;
                    return serde_json::from_str(&text).map_err(|e| {
                        // the verbatim body goes to the run log for diagnosis
                        self.log
                            .push(format!("malformed response from {}: {text}", self.cfg.endpoint));
                        Error::MalformedResponse {
                            reason: e.to_string(),
                        }
                    });
                }
                Err(e) => {
                    last_reason = format!("transport error: {e}");
                    continue;
                }
            }
        }
        Err(Error::BackendExhausted {
            attempts: self.cfg.max_retries,
            reason: last_reason,
        })
    }
}

fn encode_image(record: &ImageRecord) -> Result<String> {
    let bytes = std::fs::read(&record.path)?;
    Ok(base64::engine::general_purpose::STANDARD.encode(bytes))
}

fn encode_support(support: &SupportSet) -> Result<Vec<WireSupportItem>> {
    let mut items = Vec::new();
    for crops in support.classes.values() {
        for crop in crops {
            let rec = ImageRecord {
                image_id: crop.image_id.clone(),
                path: crop.path.clone(),
                dims: crop.dims,
                source: String::new(),
            };
            // the region is already padded and clipped, so extract it as-is
            let png = extract_crop(&rec, &crop.region, 0.0)?;
            items.push(WireSupportItem {
                image: base64::engine::general_purpose::STANDARD.encode(png),
                label: crop.class_label.clone(),
            });
        }
    }
    Ok(items)
}

fn build_request(
    image: &ImageRecord,
    vocab: &[String],
    prompt: Option<&str>,
    support: Option<&SupportSet>,
) -> Result<WireRequest> {
    Ok(WireRequest {
        image: encode_image(image)?,
        vocab: vocab.to_vec(),
        prompt: prompt.map(str::to_string),
        support: support.map(encode_support).transpose()?,
    })
}

/// Remote open-vocabulary detector.
pub struct RemoteDetector {
    client: RemoteClient,
    log: Arc<EventLog>,
}

impl RemoteDetector {
    pub fn new(cfg: BackendConfig, log: Arc<EventLog>) -> Result<Self> {
        Ok(RemoteDetector {
            client: RemoteClient::new(cfg, log.clone())?,
            log,
        })
    }
}

impl Detector for RemoteDetector {
    fn detect(&self, req: &DetectRequest) -> Result<Vec<Detection>> {
        if req.vocab.is_empty() {
            return Err(Error::Validation("detect needs a non-empty vocabulary".into()));
        }
        let body = build_request(req.image, req.vocab, req.prompt, req.support)?;
        let resp: WireDetectResponse = self.client.post(&body)?;
        let mut out = Vec::new();
        for d in resp.detections {
            let [x0, y0, x1, y1] = d.bbox;
            let raw = BBox {
                x_min: x0,
                y_min: y0,
                x_max: x1,
                y_max: y1,
            };
            if raw.validate().is_err() {
                self.log.push(format!(
                    "dropped degenerate box {:?} from {}",
                    d.bbox, req.image.image_id
                ));
                continue;
            }
            let clipped = match clip_to_image(&raw, &req.image.dims) {
                Some(b) => {
                    if b != raw {
                        self.log.push(format!(
                            "clipped out-of-image box {:?} on {}",
                            d.bbox, req.image.image_id
                        ));
                    }
                    b
                }
                None => {
                    self.log.push(format!(
                        "dropped fully out-of-image box {:?} on {}",
                        d.bbox, req.image.image_id
                    ));
                    continue;
                }
            };
            let (label, in_vocab) = map_label(&d.label, req.vocab);
            if !in_vocab {
                self.log.push(format!(
                    "out-of-vocabulary label '{label}' on {}",
                    req.image.image_id
                ));
            }
            out.push(Detection {
                bbox: clipped,
                label,
                score: d.score,
                in_vocab,
            });
        }
        Ok(out)
    }
}

/// Remote crop classifier.
pub struct RemoteClassifier {
    client: RemoteClient,
}

impl RemoteClassifier {
    pub fn new(cfg: BackendConfig, log: Arc<EventLog>) -> Result<Self> {
        Ok(RemoteClassifier {
            client: RemoteClient::new(cfg, log)?,
        })
    }
}

impl Classifier for RemoteClassifier {
    fn classify(&self, req: &ClassifyRequest) -> Result<ClassifyResponse> {
        if req.vocab.is_empty() {
            return Err(Error::Validation("classify needs a non-empty vocabulary".into()));
        }
        let crop = extract_crop(req.image, &req.region, req.margin)?;
        let body = WireRequest {
            image: base64::engine::general_purpose::STANDARD.encode(crop),
            vocab: req.vocab.to_vec(),
            prompt: req.prompt.map(str::to_string),
            support: req.support.map(encode_support).transpose()?,
        };
        let resp: WireClassifyResponse = self.client.post(&body)?;
        let (label, in_vocab) = map_label(&resp.label, req.vocab);
        Ok(ClassifyResponse {
            label,
            score: resp.score,
            in_vocab,
        })
    }
}

/// Remote class-agnostic segmenter.
pub struct RemoteSegmenter {
    client: RemoteClient,
    log: Arc<EventLog>,
}

impl RemoteSegmenter {
    pub fn new(cfg: BackendConfig, log: Arc<EventLog>) -> Result<Self> {
        Ok(RemoteSegmenter {
            client: RemoteClient::new(cfg, log.clone())?,
            log,
        })
    }
}

impl Segmenter for RemoteSegmenter {
    fn segment(&self, image: &ImageRecord) -> Result<Vec<BBox>> {
        let body = WireRequest {
            image: encode_image(image)?,
            vocab: Vec::new(),
            prompt: None,
            support: None,
        };
        let resp: WireSegmentResponse = self.client.post(&body)?;
        let mut boxes = Vec::new();
        for raw in resp.boxes {
            let [x0, y0, x1, y1] = raw;
            let b = BBox {
                x_min: x0,
                y_min: y0,
                x_max: x1,
                y_max: y1,
            };
            if b.validate().is_err() {
                self.log
                    .push(format!("dropped degenerate proposal {raw:?} on {}", image.image_id));
                continue;
            }
            match clip_to_image(&b, &image.dims) {
                Some(c) => boxes.push(c),
                None => self
                    .log
                    .push(format!("dropped out-of-image proposal {raw:?} on {}", image.image_id)),
            }
        }
        Ok(super::dedup_proposals(boxes, 0.95))
    }
}
