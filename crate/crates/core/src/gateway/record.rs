//! Call manifests: the persistent record of every backend call in a run,
//! written as JSONL and read back for replay.
//!
//! The first line is a header carrying run identity (id, timestamp); all
//! following lines are call records. Keeping identity out of the call
//! records means the body of a manifest is byte-for-byte reproducible
//! across runs with the same inputs, which is what the replay guarantee
//! is checked against.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{canonical_hash, Backend, CallCtx, Conversation, GatewayError, Stage};

/// Run identity line at the top of a manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub run_id: String,
    pub created_at: DateTime<Utc>,
    pub model_name: String,
    pub seed: u64,
}

/// One recorded backend call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    pub case_id: String,
    pub stage: Stage,
    /// Per-(case, stage) call counter, starting at 0. Disambiguates repeated
    /// calls within one stage (multi-turn conversations, re-asks).
    pub turn_index: u32,
    /// Canonical hash of `request`; replay looks records up by this first.
    pub request_hash: String,
    pub request: Conversation,
    pub response: String,
    pub model_name: String,
    pub temperature: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum ManifestLine {
    Header(ManifestHeader),
    Call(CallRecord),
}

/// A parsed manifest: header plus call records in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub header: ManifestHeader,
    pub records: Vec<CallRecord>,
}

impl Manifest {
    /// Serialize to JSONL. Record order is preserved; callers that need a
    /// canonical order sort `records` first.
    pub fn write_to(&self, path: &Path) -> Result<(), GatewayError> {
        let file = File::create(path).map_err(|e| manifest_io(path, &e))?;
        let mut out = BufWriter::new(file);
        write_line(&mut out, path, &ManifestLine::Header(self.header.clone()))?;
        for record in &self.records {
            write_line(&mut out, path, &ManifestLine::Call(record.clone()))?;
        }
        out.flush().map_err(|e| manifest_io(path, &e))
    }

    /// Sort call records by `key`, ties broken by stage then turn index.
    /// Used to put concurrent runs into dataset order before writing.
    pub fn sort_records_by<F: Fn(&CallRecord) -> usize>(&mut self, key: F) {
        self.records
            .sort_by_key(|r| (key(r), r.stage, r.turn_index));
    }
}

fn write_line(out: &mut impl Write, path: &Path, line: &ManifestLine) -> Result<(), GatewayError> {
    let json = serde_json::to_string(line)
        .map_err(|e| GatewayError::Manifest(format!("serialize failed: {e}")))?;
    writeln!(out, "{json}").map_err(|e| manifest_io(path, &e))
}

fn manifest_io(path: &Path, e: &std::io::Error) -> GatewayError {
    GatewayError::Manifest(format!("{}: {e}", path.display()))
}

/// Parse a manifest file. The first line must be a header; every later
/// line must be a call record. Errors carry 1-based line numbers.
pub fn read_manifest(path: &Path) -> Result<Manifest, GatewayError> {
    let file = File::open(path).map_err(|e| manifest_io(path, &e))?;
    let mut header = None;
    let mut records = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| manifest_io(path, &e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: ManifestLine = serde_json::from_str(&line).map_err(|e| {
            GatewayError::Manifest(format!("{}:{line_no}: {e}", path.display()))
        })?;
        match parsed {
            ManifestLine::Header(h) if header.is_none() && records.is_empty() => header = Some(h),
            ManifestLine::Header(_) => {
                return Err(GatewayError::Manifest(format!(
                    "{}:{line_no}: unexpected second header",
                    path.display()
                )))
            }
            ManifestLine::Call(r) if header.is_some() => records.push(r),
            ManifestLine::Call(_) => {
                return Err(GatewayError::Manifest(format!(
                    "{}:{line_no}: call record before header",
                    path.display()
                )))
            }
        }
    }
    let header = header.ok_or_else(|| {
        GatewayError::Manifest(format!("{}: missing header line", path.display()))
    })?;
    Ok(Manifest { header, records })
}

/// Destination for call records as they happen.
pub trait ManifestSink: Send + Sync {
    fn append(&self, record: &CallRecord) -> Result<(), GatewayError>;
}

/// Streams records to a JSONL file, header first, flushing per record so a
/// crashed run still leaves a readable prefix.
pub struct JsonlSink {
    path: std::path::PathBuf,
    out: Mutex<BufWriter<File>>,
}

impl JsonlSink {
    pub fn create(path: &Path, header: &ManifestHeader) -> Result<Self, GatewayError> {
        let file = File::create(path).map_err(|e| manifest_io(path, &e))?;
        let mut out = BufWriter::new(file);
        write_line(&mut out, path, &ManifestLine::Header(header.clone()))?;
        out.flush().map_err(|e| manifest_io(path, &e))?;
        Ok(Self {
            path: path.to_path_buf(),
            out: Mutex::new(out),
        })
    }
}

impl ManifestSink for JsonlSink {
    fn append(&self, record: &CallRecord) -> Result<(), GatewayError> {
        let mut out = self.out.lock().unwrap();
        write_line(&mut *out, &self.path, &ManifestLine::Call(record.clone()))?;
        out.flush().map_err(|e| manifest_io(&self.path, &e))
    }
}

/// Collects records in memory; the pipeline uses this to sort before the
/// final write, and tests use it for assertions.
#[derive(Default)]
pub struct MemorySink {
    records: Mutex<Vec<CallRecord>>,
}

impl MemorySink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn records(&self) -> Vec<CallRecord> {
        self.records.lock().unwrap().clone()
    }

    pub fn into_manifest(self, header: ManifestHeader) -> Manifest {
        Manifest {
            header,
            records: self.records.into_inner().unwrap(),
        }
    }
}

impl ManifestSink for MemorySink {
    fn append(&self, record: &CallRecord) -> Result<(), GatewayError> {
        self.records.lock().unwrap().push(record.clone());
        Ok(())
    }
}

/// Wraps any backend and writes a [`CallRecord`] for every successful call.
/// A sink failure fails the call: a manifest with silently missing records
/// would break the replay guarantee in ways that only surface much later.
pub struct RecordingBackend {
    inner: Arc<dyn Backend>,
    sink: Arc<dyn ManifestSink>,
    turns: Mutex<HashMap<(String, Stage), u32>>,
}

impl RecordingBackend {
    pub fn new(inner: Arc<dyn Backend>, sink: Arc<dyn ManifestSink>) -> Self {
        Self {
            inner,
            sink,
            turns: Mutex::new(HashMap::new()),
        }
    }
}

impl Backend for RecordingBackend {
    fn complete(&self, ctx: &CallCtx, conversation: &Conversation) -> Result<String, GatewayError> {
        let request_hash = canonical_hash(conversation);
        let response = self.inner.complete(ctx, conversation)?;
        let turn_index = {
            let mut turns = self.turns.lock().unwrap();
            let counter = turns.entry((ctx.case_id.clone(), ctx.stage)).or_insert(0);
            let idx = *counter;
            *counter += 1;
            idx
        };
        let info = self.inner.info();
        self.sink.append(&CallRecord {
            case_id: ctx.case_id.clone(),
            stage: ctx.stage,
            turn_index,
            request_hash,
            request: conversation.clone(),
            response: response.clone(),
            model_name: info.model_name,
            temperature: info.temperature,
        })?;
        Ok(response)
    }

    fn info(&self) -> super::BackendInfo {
        self.inner.info()
    }
}
