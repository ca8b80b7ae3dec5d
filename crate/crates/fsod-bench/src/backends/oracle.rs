//! Deterministic in-process stand-ins for remote models, parameterized by
//! noise, drop, flip and spurious-box rates. Oracles read ground truth from
//! the dataset index; RNG streams are keyed per image so results do not
//! depend on request order or thread scheduling.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::DatasetIndex;
use crate::error::{Error, Result};
use crate::geometry::{clip, iou, BBox, ImageDims};
use crate::util::fnv1a64;

use super::{
    dedup_proposals, ClassifyRequest, ClassifyResponse, Classifier, DetectRequest, Detection,
    Detector, Segmenter,
};

/// Noise model for oracle backends.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    /// Additive uniform coordinate noise in [-sigma, sigma] pixels.
    #[serde(default)]
    pub sigma: f64,
    /// Probability of dropping a ground-truth box.
    #[serde(default)]
    pub drop_p: f64,
    /// Probability of flipping a label to a different vocabulary entry.
    #[serde(default)]
    pub flip_q: f64,
    /// Expected number of spurious boxes per image.
    #[serde(default)]
    pub spurious_r: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            sigma: 0.0,
            drop_p: 0.0,
            flip_q: 0.0,
            spurious_r: 0.0,
            seed: 0,
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.drop_p) || !(0.0..=1.0).contains(&self.flip_q) {
            return Err(Error::Validation(
                "oracle drop and flip probabilities must lie in [0, 1]".into(),
            ));
        }
        if self.sigma < 0.0 || self.spurious_r < 0.0 {
            return Err(Error::Validation(
                "oracle sigma and spurious rate must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

fn stream_rng(seed: u64, tag: &str, image_id: &str) -> ChaCha8Rng {
    let mut key = seed;
    key ^= fnv1a64(tag.as_bytes()).rotate_left(17);
    key ^= fnv1a64(image_id.as_bytes());
    ChaCha8Rng::seed_from_u64(key)
}

fn jitter_box(b: &BBox, sigma: f64, dims: &ImageDims, rng: &mut ChaCha8Rng) -> Option<BBox> {
    if sigma == 0.0 {
        return clip(b, dims);
    }
    let mut j = || rng.gen_range(-sigma..=sigma);
    let moved = BBox {
        x_min: b.x_min + j(),
        y_min: b.y_min + j(),
        x_max: b.x_max + j(),
        y_max: b.y_max + j(),
    };
    if moved.x_min >= moved.x_max || moved.y_min >= moved.y_max {
        return None;
    }
    clip(&moved, dims)
}

fn flipped_label<'a>(
    truth: &'a str,
    vocab: &'a [String],
    q: f64,
    rng: &mut ChaCha8Rng,
) -> &'a str {
    if q > 0.0 && rng.gen::<f64>() < q {
        let others: Vec<&String> = vocab.iter().filter(|v| v.as_str() != truth).collect();
        if !others.is_empty() {
            return others[rng.gen_range(0..others.len())];
        }
    }
    truth
}

fn spurious_count(rate: f64, rng: &mut ChaCha8Rng) -> u64 {
    let whole = rate.floor() as u64;
    let frac = rate - rate.floor();
    whole + u64::from(frac > 0.0 && rng.gen::<f64>() < frac)
}

fn random_box(dims: &ImageDims, rng: &mut ChaCha8Rng) -> BBox {
    let (w, h) = (dims.width as f64, dims.height as f64);
    let bw = rng.gen_range(0.05..0.25) * w;
    let bh = rng.gen_range(0.05..0.25) * h;
    let x0 = rng.gen_range(0.0..(w - bw));
    let y0 = rng.gen_range(0.0..(h - bh));
    BBox {
        x_min: x0,
        y_min: y0,
        x_max: x0 + bw,
        y_max: y0 + bh,
    }
}

/// Detector oracle: ground truth with drops, jitter, label flips and
/// spurious boxes.
pub struct OracleDetector {
    index: Arc<DatasetIndex>,
    cfg: OracleConfig,
}

impl OracleDetector {
    pub fn new(index: Arc<DatasetIndex>, cfg: OracleConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(OracleDetector { index, cfg })
    }
}

impl Detector for OracleDetector {
    fn detect(&self, req: &DetectRequest) -> Result<Vec<Detection>> {
        let mut rng = stream_rng(self.cfg.seed, "detect", &req.image.image_id);
        let mut out = Vec::new();
        for ann in self.index.annotations_for(&req.image.image_id) {
            if self.cfg.drop_p > 0.0 && rng.gen::<f64>() < self.cfg.drop_p {
                continue;
            }
            let Some(bbox) = jitter_box(&ann.bbox, self.cfg.sigma, &req.image.dims, &mut rng)
            else {
                continue;
            };
            let label =
                flipped_label(&ann.class_label, req.vocab, self.cfg.flip_q, &mut rng).to_string();
            out.push(Detection {
                bbox,
                label,
                score: None,
                in_vocab: true,
            });
        }
        if !req.vocab.is_empty() {
            for _ in 0..spurious_count(self.cfg.spurious_r, &mut rng) {
                let bbox = random_box(&req.image.dims, &mut rng);
                let label = req.vocab[rng.gen_range(0..req.vocab.len())].clone();
                out.push(Detection {
                    bbox,
                    label,
                    score: None,
                    in_vocab: true,
                });
            }
        }
        Ok(out)
    }
}

/// Segmenter oracle: class-agnostic ground-truth boxes under the same noise
/// model, deduplicated at IoU > 0.95.
pub struct OracleSegmenter {
    index: Arc<DatasetIndex>,
    cfg: OracleConfig,
}

impl OracleSegmenter {
    pub fn new(index: Arc<DatasetIndex>, cfg: OracleConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(OracleSegmenter { index, cfg })
    }
}

impl Segmenter for OracleSegmenter {
    fn segment(&self, image: &crate::dataset::ImageRecord) -> Result<Vec<BBox>> {
        let mut rng = stream_rng(self.cfg.seed, "segment", &image.image_id);
        let mut boxes = Vec::new();
        for ann in self.index.annotations_for(&image.image_id) {
            if self.cfg.drop_p > 0.0 && rng.gen::<f64>() < self.cfg.drop_p {
                continue;
            }
            if let Some(b) = jitter_box(&ann.bbox, self.cfg.sigma, &image.dims, &mut rng) {
                boxes.push(b);
            }
        }
        for _ in 0..spurious_count(self.cfg.spurious_r, &mut rng) {
            boxes.push(random_box(&image.dims, &mut rng));
        }
        Ok(dedup_proposals(boxes, 0.95))
    }
}

/// Classifier oracle: labels a crop with the class of the ground-truth box
/// that overlaps the region best, flipped with probability q.
pub struct OracleClassifier {
    index: Arc<DatasetIndex>,
    cfg: OracleConfig,
}

impl OracleClassifier {
    pub fn new(index: Arc<DatasetIndex>, cfg: OracleConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(OracleClassifier { index, cfg })
    }
}

impl Classifier for OracleClassifier {
    fn classify(&self, req: &ClassifyRequest) -> Result<ClassifyResponse> {
        // the region participates in the stream key so every crop of an
        // image draws independently
        let region_tag = format!(
            "classify:{:x}:{:x}:{:x}:{:x}",
            req.region.x_min.to_bits(),
            req.region.y_min.to_bits(),
            req.region.x_max.to_bits(),
            req.region.y_max.to_bits()
        );
        let mut rng = stream_rng(self.cfg.seed, &region_tag, &req.image.image_id);

        let mut best: Option<(f64, &str)> = None;
        for ann in self.index.annotations_for(&req.image.image_id) {
            let overlap = iou(&ann.bbox, &req.region);
            if overlap > 0.0 && best.map_or(true, |(b, _)| overlap > b) {
                best = Some((overlap, &ann.class_label));
            }
        }
        match best {
            Some((_, truth)) => {
                let label =
                    flipped_label(truth, req.vocab, self.cfg.flip_q, &mut rng).to_string();
                Ok(ClassifyResponse {
                    label,
                    score: Some(1.0),
                    in_vocab: true,
                })
            }
            None => {
                if req.vocab.is_empty() {
                    return Err(Error::Validation("classify needs a vocabulary".into()));
                }
                let label = req.vocab[rng.gen_range(0..req.vocab.len())].clone();
                Ok(ClassifyResponse {
                    label,
                    score: Some(0.0),
                    in_vocab: true,
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synth_fixture, SynthSpec};

    fn fixture() -> (tempfile::TempDir, Arc<DatasetIndex>) {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec::simple("t", 6, &[("a", 12), ("b", 9)], 21);
        let index = Arc::new(synth_fixture(&spec, dir.path()).unwrap());
        (dir, index)
    }

    fn vocab(index: &DatasetIndex) -> Vec<String> {
        index.classes.clone()
    }

    #[test]
    fn identity_oracle_reproduces_ground_truth() {
        let (_dir, index) = fixture();
        let det = OracleDetector::new(index.clone(), OracleConfig::default()).unwrap();
        let v = vocab(&index);
        for rec in &index.images {
            let got = det
                .detect(&DetectRequest {
                    image: rec,
                    vocab: &v,
                    prompt: None,
                    support: None,
                })
                .unwrap();
            let want = index.annotations_for(&rec.image_id);
            assert_eq!(got.len(), want.len());
            for (d, a) in got.iter().zip(want) {
                assert_eq!(d.bbox, a.bbox);
                assert_eq!(d.label, a.class_label);
            }
        }
    }

    #[test]
    fn full_drop_yields_nothing() {
        let (_dir, index) = fixture();
        let det = OracleDetector::new(
            index.clone(),
            OracleConfig {
                drop_p: 1.0,
                ..OracleConfig::default()
            },
        )
        .unwrap();
        let v = vocab(&index);
        for rec in &index.images {
            assert!(det
                .detect(&DetectRequest {
                    image: rec,
                    vocab: &v,
                    prompt: None,
                    support: None
                })
                .unwrap()
                .is_empty());
        }
    }

    #[test]
    fn oracle_is_deterministic() {
        let (_dir, index) = fixture();
        let cfg = OracleConfig {
            sigma: 2.5,
            drop_p: 0.3,
            flip_q: 0.2,
            spurious_r: 0.7,
            seed: 99,
        };
        let a = OracleDetector::new(index.clone(), cfg).unwrap();
        let b = OracleDetector::new(index.clone(), cfg).unwrap();
        let v = vocab(&index);
        for rec in &index.images {
            let req = DetectRequest {
                image: rec,
                vocab: &v,
                prompt: None,
                support: None,
            };
            assert_eq!(a.detect(&req).unwrap(), b.detect(&req).unwrap());
        }
    }

    #[test]
    fn flip_q_one_with_two_classes_always_lies() {
        let (_dir, index) = fixture();
        let det = OracleDetector::new(
            index.clone(),
            OracleConfig {
                flip_q: 1.0,
                ..OracleConfig::default()
            },
        )
        .unwrap();
        let v = vocab(&index);
        assert_eq!(v.len(), 2);
        for rec in &index.images {
            let got = det
                .detect(&DetectRequest {
                    image: rec,
                    vocab: &v,
                    prompt: None,
                    support: None,
                })
                .unwrap();
            for (d, a) in got.iter().zip(index.annotations_for(&rec.image_id)) {
                assert_ne!(d.label, a.class_label);
            }
        }
    }

    #[test]
    fn segmenter_strips_labels_and_dedups() {
        let (_dir, index) = fixture();
        let seg = OracleSegmenter::new(index.clone(), OracleConfig::default()).unwrap();
        for rec in &index.images {
            let got = seg.segment(rec).unwrap();
            let want = dedup_proposals(
                index
                    .annotations_for(&rec.image_id)
                    .iter()
                    .map(|a| a.bbox)
                    .collect(),
                0.95,
            );
            assert_eq!(got, want);
        }
    }

    #[test]
    fn classifier_oracle_labels_exact_regions() {
        let (_dir, index) = fixture();
        let cls = OracleClassifier::new(index.clone(), OracleConfig::default()).unwrap();
        let v = vocab(&index);
        for rec in &index.images {
            for ann in index.annotations_for(&rec.image_id) {
                let got = cls
                    .classify(&ClassifyRequest {
                        image: rec,
                        region: ann.bbox,
                        vocab: &v,
                        prompt: None,
                        support: None,
                        margin: 0.0,
                    })
                    .unwrap();
                assert_eq!(got.label, ann.class_label);
                assert!(got.in_vocab);
            }
        }
    }
}
