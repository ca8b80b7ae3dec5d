//! Experiment orchestration: validate a declarative config, execute one of
//! the four pipeline modes over the test split with resumable persistence,
//! evaluate records into metric reports, and render result tables.

mod evaluate;
mod record;
mod report;

pub use evaluate::evaluate;
pub use record::{read_record, RunEntry, RunHeader, RunRecord, RunStatus};
pub use report::{render_csv, render_tables};

use std::collections::{BTreeSet, VecDeque};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backends::{
    BackendConfig, ClassifyRequest, Classifier, DetectRequest, Detection, Detector, EventLog,
    OracleClassifier, OracleConfig, OracleDetector, OracleSegmenter, RemoteClassifier,
    RemoteDetector, RemoteSegmenter, Segmenter,
};
use crate::dataset::{
    assert_support_from_examples, build_support, load_index, DatasetIndex, ImageRecord,
    IndexFormat, SupportSet,
};
use crate::error::{Error, Result};
use crate::geometry::DEFAULT_CROP_MARGIN;
use crate::split::{read_split_file, Role};

/// The four experiment configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Text prompt only, true zero-shot detection.
    ZeroShotT,
    /// Visual support crops only, no text.
    FewShotV,
    /// Text prompt plus support crops, end-to-end detection.
    FewShotMmd,
    /// Cascade: class-agnostic segmentation, then per-crop classification.
    FewShotMmc,
}

impl Mode {
    pub fn needs_support(self) -> bool {
        !matches!(self, Mode::ZeroShotT)
    }
}

/// What to do with predictions whose label fell outside the vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InvalidLabelPolicy {
    /// Keep them; they can never match, so they score as false positives.
    #[default]
    CountFp,
    /// Drop them before evaluation.
    Drop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRef {
    pub index: PathBuf,
    pub format: IndexFormat,
    pub split: PathBuf,
}

/// One backend slot: a deterministic oracle or a remote service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendBinding {
    Oracle(OracleConfig),
    Remote(BackendConfig),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BackendBindings {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detector: Option<BackendBinding>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segmenter: Option<BackendBinding>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classifier: Option<BackendBinding>,
}

fn default_margin() -> f64 {
    DEFAULT_CROP_MARGIN
}

/// Declarative experiment description, loaded from a TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Row label in reports, e.g. the model name.
    pub method: String,
    pub mode: Mode,
    /// Support shots per class: 0 for zero-shot, else 1, 3 or 6.
    pub k: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_margin")]
    pub crop_margin: f64,
    /// Text file with {vocab} and {K} placeholders for detection prompts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_template: Option<PathBuf>,
    /// Same, for the cascade's classification prompts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classify_prompt_template: Option<PathBuf>,
    #[serde(default)]
    pub invalid_label_policy: InvalidLabelPolicy,
    /// Worker pool size; defaults to the smallest bound backend parallelism.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    pub dataset: DatasetRef,
    pub backends: BackendBindings,
}

const DEFAULT_DETECT_PROMPT: &str =
    "Detect every instance of the following categories in the image and return one bounding box with a label per object: {vocab}.";
const DEFAULT_CLASSIFY_PROMPT: &str =
    "Classify the object shown in the image as exactly one of: {vocab}. You have {K} example crops per category.";

impl ExperimentConfig {
    pub fn from_toml_file(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path)?;
        let mut config: ExperimentConfig =
            toml::from_str(&text).map_err(|e| Error::Parse {
                path: path.display().to_string(),
                reason: e.to_string(),
            })?;
        let dir = path.parent().unwrap_or_else(|| Path::new("."));
        config.resolve_paths(dir);
        config.validate()?;
        Ok(config)
    }

    /// Make relative paths absolute with respect to `dir`.
    pub fn resolve_paths(&mut self, dir: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        fix(&mut self.dataset.index);
        fix(&mut self.dataset.split);
        if let Some(p) = &mut self.prompt_template {
            fix(p);
        }
        if let Some(p) = &mut self.classify_prompt_template {
            fix(p);
        }
    }

    /// Enforce the mode invariants before anything runs.
    pub fn validate(&self) -> Result<()> {
        match self.mode {
            Mode::ZeroShotT => {
                if self.k != 0 {
                    return Err(Error::Validation(format!(
                        "zero_shot_t requires k = 0 and carries no support, got k = {}",
                        self.k
                    )));
                }
            }
            _ => {
                if ![1, 3, 6].contains(&self.k) {
                    return Err(Error::Validation(format!(
                        "few-shot modes require k in {{1, 3, 6}}, got {}",
                        self.k
                    )));
                }
            }
        }
        let need = |slot: &Option<BackendBinding>, name: &str| -> Result<()> {
            if slot.is_none() {
                return Err(Error::Validation(format!(
                    "mode {:?} requires a {name} backend",
                    self.mode
                )));
            }
            Ok(())
        };
        let forbid = |slot: &Option<BackendBinding>, name: &str| -> Result<()> {
            if slot.is_some() {
                return Err(Error::Validation(format!(
                    "mode {:?} does not use a {name} backend",
                    self.mode
                )));
            }
            Ok(())
        };
        match self.mode {
            Mode::FewShotMmc => {
                need(&self.backends.segmenter, "segmenter")?;
                need(&self.backends.classifier, "classifier")?;
                forbid(&self.backends.detector, "detector")?;
            }
            _ => {
                need(&self.backends.detector, "detector")?;
                forbid(&self.backends.segmenter, "segmenter")?;
                forbid(&self.backends.classifier, "classifier")?;
            }
        }
        if !(self.crop_margin.is_finite() && self.crop_margin >= 0.0) {
            return Err(Error::Validation("crop_margin must be finite and >= 0".into()));
        }
        if self.workers == Some(0) {
            return Err(Error::Validation("workers must be at least 1".into()));
        }
        Ok(())
    }

    fn load_template(&self, path: &Option<PathBuf>, fallback: &str) -> Result<String> {
        match path {
            Some(p) => Ok(std::fs::read_to_string(p)?),
            None => Ok(fallback.to_string()),
        }
    }

    fn render_prompt(&self, template: &str, vocab: &[String]) -> String {
        template
            .replace("{vocab}", &vocab.join(", "))
            .replace("{K}", &self.k.to_string())
    }

    /// Content-addressed configuration identity. Paths are replaced by the
    /// referenced file contents (prompt text, index and split digests), so
    /// the hash survives relocation but changes when inputs change.
    pub fn config_hash(&self) -> Result<String> {
        #[derive(Serialize)]
        struct HashView<'a> {
            method: &'a str,
            mode: Mode,
            k: u32,
            seed: u64,
            crop_margin: f64,
            invalid_label_policy: InvalidLabelPolicy,
            prompt_text: String,
            classify_prompt_text: String,
            backends: &'a BackendBindings,
            dataset_format: IndexFormat,
            index_digest: String,
            split_digest: String,
        }
        let digest_of = |p: &Path| -> Result<String> {
            let bytes = std::fs::read(p)?;
            Ok(hex::encode(Sha256::digest(&bytes)))
        };
        let view = HashView {
            method: &self.method,
            mode: self.mode,
            k: self.k,
            seed: self.seed,
            crop_margin: self.crop_margin,
            invalid_label_policy: self.invalid_label_policy,
            prompt_text: self.load_template(&self.prompt_template, DEFAULT_DETECT_PROMPT)?,
            classify_prompt_text: self
                .load_template(&self.classify_prompt_template, DEFAULT_CLASSIFY_PROMPT)?,
            backends: &self.backends,
            dataset_format: self.dataset.format,
            index_digest: digest_of(&self.dataset.index)?,
            split_digest: digest_of(&self.dataset.split)?,
        };
        let canonical = serde_json::to_vec(&view)?;
        Ok(hex::encode(Sha256::digest(&canonical)))
    }
}

struct BoundBackends {
    detector: Option<Box<dyn Detector>>,
    segmenter: Option<Box<dyn Segmenter>>,
    classifier: Option<Box<dyn Classifier>>,
    min_parallel: Option<usize>,
}

fn bind_backends(
    config: &ExperimentConfig,
    index: &Arc<DatasetIndex>,
    log: &Arc<EventLog>,
) -> Result<BoundBackends> {
    let mut min_parallel: Option<usize> = None;
    let mut track = |cfg: &BackendConfig| {
        min_parallel = Some(min_parallel.map_or(cfg.max_parallel, |m| m.min(cfg.max_parallel)));
    };
    let detector: Option<Box<dyn Detector>> = match &config.backends.detector {
        Some(BackendBinding::Oracle(cfg)) => {
            Some(Box::new(OracleDetector::new(index.clone(), *cfg)?))
        }
        Some(BackendBinding::Remote(cfg)) => {
            track(cfg);
            Some(Box::new(RemoteDetector::new(cfg.clone(), log.clone())?))
        }
        None => None,
    };
    let segmenter: Option<Box<dyn Segmenter>> = match &config.backends.segmenter {
        Some(BackendBinding::Oracle(cfg)) => {
            Some(Box::new(OracleSegmenter::new(index.clone(), *cfg)?))
        }
        Some(BackendBinding::Remote(cfg)) => {
            track(cfg);
            Some(Box::new(RemoteSegmenter::new(cfg.clone(), log.clone())?))
        }
        None => None,
    };
    let classifier: Option<Box<dyn Classifier>> = match &config.backends.classifier {
        Some(BackendBinding::Oracle(cfg)) => {
            Some(Box::new(OracleClassifier::new(index.clone(), *cfg)?))
        }
        Some(BackendBinding::Remote(cfg)) => {
            track(cfg);
            Some(Box::new(RemoteClassifier::new(cfg.clone(), log.clone())?))
        }
        None => None,
    };
    Ok(BoundBackends {
        detector,
        segmenter,
        classifier,
        min_parallel,
    })
}

fn now_unix_ms() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

fn process_image(
    config: &ExperimentConfig,
    backends: &BoundBackends,
    rec: &ImageRecord,
    vocab: &[String],
    detect_prompt: &str,
    classify_prompt: &str,
    support: Option<&SupportSet>,
) -> Result<Vec<Detection>> {
    match config.mode {
        Mode::ZeroShotT => backends
            .detector
            .as_ref()
            .expect("validated config")
            .detect(&DetectRequest {
                image: rec,
                vocab,
                prompt: Some(detect_prompt),
                support: None,
            }),
        Mode::FewShotV => backends
            .detector
            .as_ref()
            .expect("validated config")
            .detect(&DetectRequest {
                image: rec,
                vocab,
                prompt: None,
                support,
            }),
        Mode::FewShotMmd => backends
            .detector
            .as_ref()
            .expect("validated config")
            .detect(&DetectRequest {
                image: rec,
                vocab,
                prompt: Some(detect_prompt),
                support,
            }),
        Mode::FewShotMmc => {
            let segmenter = backends.segmenter.as_ref().expect("validated config");
            let classifier = backends.classifier.as_ref().expect("validated config");
            let proposals = segmenter.segment(rec)?;
            let mut out = Vec::with_capacity(proposals.len());
            for region in proposals {
                let resp = classifier.classify(&ClassifyRequest {
                    image: rec,
                    region,
                    vocab,
                    prompt: Some(classify_prompt),
                    support,
                    margin: config.crop_margin,
                })?;
                out.push(Detection {
                    bbox: region,
                    label: resp.label,
                    score: resp.score,
                    in_vocab: resp.in_vocab,
                });
            }
            Ok(out)
        }
    }
}

/// Execute the experiment over the test split, appending to `record_path`.
/// Rerunning with an identical config resumes: images already ok are
/// skipped, failed ones are retried.
pub fn run(
    config: &ExperimentConfig,
    record_path: &Path,
    log: &Arc<EventLog>,
) -> Result<RunRecord> {
    config.validate()?;
    let index = Arc::new(load_index(&config.dataset.index, config.dataset.format)?);
    index.verify_totals()?;
    let split = read_split_file(&config.dataset.split)?;
    let config_hash = config.config_hash()?;

    let vocab = index.classes.clone();
    let detect_prompt = config.render_prompt(
        &config.load_template(&config.prompt_template, DEFAULT_DETECT_PROMPT)?,
        &vocab,
    );
    let classify_prompt = config.render_prompt(
        &config.load_template(&config.classify_prompt_template, DEFAULT_CLASSIFY_PROMPT)?,
        &vocab,
    );

    let support = if config.mode.needs_support() {
        let s = build_support(&index, &split, config.k, config.seed, config.crop_margin)?;
        // re-assert the leak guard at run time
        assert_support_from_examples(&s, &split)?;
        Some(s)
    } else {
        None
    };

    let test_ids: Vec<String> = split
        .ids_with(Role::Test)
        .into_iter()
        .map(str::to_string)
        .collect();
    for id in &test_ids {
        if index.image(id).is_none() {
            return Err(Error::Validation(format!(
                "split references image '{id}' that the index does not contain"
            )));
        }
    }

    // resume or start fresh
    let mut done: BTreeSet<String> = BTreeSet::new();
    let mut writer = if record_path.exists() {
        let (existing, writer) = record::RecordWriter::resume(record_path)?;
        if existing.header.config_hash != config_hash {
            return Err(Error::ConfigHashMismatch {
                recorded: existing.header.config_hash,
                current: config_hash,
            });
        }
        for e in existing.entries.values() {
            if e.status == RunStatus::Ok {
                done.insert(e.image_id.clone());
            }
        }
        writer
    } else {
        record::RecordWriter::create(
            record_path,
            &RunHeader {
                kind: "header".into(),
                config_hash: config_hash.clone(),
                config: config.clone(),
                created_unix_ms: now_unix_ms(),
            },
        )?
    };

    let backends = bind_backends(config, &index, log)?;
    let workers = config
        .workers
        .or(backends.min_parallel)
        .unwrap_or(4)
        .max(1);

    let pending: VecDeque<&str> = test_ids
        .iter()
        .filter(|id| !done.contains(*id))
        .map(String::as_str)
        .collect();
    let queue = Mutex::new(pending);
    let sink: Mutex<&mut record::RecordWriter> = Mutex::new(&mut writer);
    let io_error: Mutex<Option<Error>> = Mutex::new(None);

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let Some(id) = queue.lock().expect("queue poisoned").pop_front() else {
                    return;
                };
                let rec = index.image(id).expect("validated above");
                let started = Instant::now();
                let entry = match process_image(
                    config,
                    &backends,
                    rec,
                    &vocab,
                    &detect_prompt,
                    &classify_prompt,
                    support.as_ref(),
                ) {
                    Ok(predictions) => RunEntry {
                        image_id: id.to_string(),
                        status: RunStatus::Ok,
                        predictions,
                        latency_ms: started.elapsed().as_millis() as u64,
                        error: None,
                    },
                    Err(e) => {
                        log.push(format!("image {id} failed: {e}"));
                        RunEntry {
                            image_id: id.to_string(),
                            status: RunStatus::Failed,
                            predictions: Vec::new(),
                            latency_ms: started.elapsed().as_millis() as u64,
                            error: Some(e.to_string()),
                        }
                    }
                };
                let mut sink = sink.lock().expect("writer poisoned");
                if let Err(e) = sink.write_entry(&entry) {
                    io_error.lock().expect("err slot").get_or_insert(e);
                    return;
                }
            });
        }
    });
    if let Some(e) = io_error.into_inner().expect("err slot") {
        return Err(e);
    }

    read_record(record_path)
}
