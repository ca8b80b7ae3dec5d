//! Append-only JSONL run persistence. The first line is a header binding the
//! file to a config hash; every following line is one image entry. Partial
//! trailing lines from a killed run are ignored on resume.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backends::Detection;
use crate::error::{Error, Result};

use super::ExperimentConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Failed,
    Skipped,
}

/// Result row for one test image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub image_id: String,
    pub status: RunStatus,
    pub predictions: Vec<Detection>,
    pub latency_ms: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunHeader {
    pub kind: String,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub created_unix_ms: u64,
}

/// In-memory view of a run file: last entry per image wins, keyed by id.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub header: RunHeader,
    pub entries: BTreeMap<String, RunEntry>,
}

impl RunRecord {
    /// Entries with volatile fields (latency, timestamps) zeroed, for
    /// resume-equality comparisons.
    pub fn canonical_entries(&self) -> BTreeMap<String, RunEntry> {
        self.entries
            .iter()
            .map(|(id, e)| {
                let mut e = e.clone();
                e.latency_ms = 0;
                (id.clone(), e)
            })
            .collect()
    }

    pub fn ok_ids(&self) -> Vec<&str> {
        self.entries
            .values()
            .filter(|e| e.status == RunStatus::Ok)
            .map(|e| e.image_id.as_str())
            .collect()
    }

    pub fn failed_count(&self) -> usize {
        self.entries
            .values()
            .filter(|e| e.status != RunStatus::Ok)
            .count()
    }
}

pub struct RecordWriter {
    file: std::fs::File,
}

impl RecordWriter {
    /// Create a fresh record file with its header line.
    pub fn create(path: &Path, header: &RunHeader) -> Result<RecordWriter> {
        let mut file = std::fs::File::create(path)?;
        writeln!(file, "{}", serde_json::to_string(header)?)?;
        file.sync_data()?;
        Ok(RecordWriter { file })
    }

    /// Reopen an existing record for appending. The file is first truncated
    /// back to its last durable line, so a torn tail from a killed run never
    /// corrupts the next entry.
    pub fn resume(path: &Path) -> Result<(RunRecord, RecordWriter)> {
        let (record, valid_bytes) = scan_record(path)?;
        let mut file = std::fs::OpenOptions::new().write(true).open(path)?;
        file.set_len(valid_bytes)?;
        std::io::Seek::seek(&mut file, std::io::SeekFrom::End(0))?;
        Ok((record, RecordWriter { file }))
    }

    /// Append one entry; each line is flushed so a kill loses at most the
    /// line being written.
    pub fn write_entry(&mut self, entry: &RunEntry) -> Result<()> {
        writeln!(self.file, "{}", serde_json::to_string(entry)?)?;
        self.file.sync_data()?;
        Ok(())
    }
}

/// Read a record file, tolerating a truncated final line.
pub fn read_record(path: &Path) -> Result<RunRecord> {
    Ok(scan_record(path)?.0)
}

/// Parse the record and report how many leading bytes form durable lines
/// (newline-terminated and parseable). Anything past that point is a torn
/// tail from a killed run and is ignored.
fn scan_record(path: &Path) -> Result<(RunRecord, u64)> {
    let file = std::fs::File::open(path)?;
    let mut reader = BufReader::new(file);

    let mut line = String::new();
    let header_bytes = reader.read_line(&mut line)?;
    if header_bytes == 0 || !line.ends_with('\n') {
        return Err(Error::Parse {
            path: path.display().to_string(),
            reason: "empty or torn run record header".into(),
        });
    }
    let header: RunHeader = serde_json::from_str(&line).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        reason: format!("bad header: {e}"),
    })?;
    if header.kind != "header" {
        return Err(Error::Parse {
            path: path.display().to_string(),
            reason: "first line is not a run header".into(),
        });
    }

    let mut entries = BTreeMap::new();
    let mut valid_bytes = header_bytes as u64;
    loop {
        line.clear();
        let n = reader.read_line(&mut line)?;
        if n == 0 {
            break;
        }
        if !line.ends_with('\n') {
            break;
        }
        if line.trim().is_empty() {
            valid_bytes += n as u64;
            continue;
        }
        match serde_json::from_str::<RunEntry>(&line) {
            Ok(entry) => {
                entries.insert(entry.image_id.clone(), entry);
                valid_bytes += n as u64;
            }
            Err(_) => break,
        }
    }
    Ok((RunRecord { header, entries }, valid_bytes))
}
