//! Case records, condition names, and dataset ingestion.
//!
//! A dataset is a JSONL file, one case object per line, with image files on
//! disk referenced by paths relative to the dataset file's directory. All
//! types here are immutable after construction and safe to share across
//! pipeline workers.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

/// Errors from case construction and dataset ingestion.
#[derive(Debug, thiserror::Error)]
pub enum CaseError {
    #[error("condition name contains no letters: {0:?}")]
    EmptyName(String),
    #[error("malformed case record at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate case_id {0:?}")]
    DuplicateCaseId(String),
    #[error("case {0:?} has no images")]
    EmptyImages(String),
    #[error("image {path:?}: content does not match {declared} magic bytes")]
    MediaTypeMismatch { path: String, declared: MediaType },
    #[error("image {0:?}: unrecognized format (expected JPEG or PNG)")]
    UnknownMediaType(String),
    #[error("io error on {path:?}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// A skin condition name, kept both as written and in normalized form.
///
/// Normalization lowercases, trims, collapses internal whitespace and strips
/// terminal `.` `,` `;` `!` `?`. Internal punctuation (hyphens, parentheses)
/// is preserved since condition names may legitimately contain it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConditionName {
    raw: String,
    normalized: String,
}

impl ConditionName {
    /// Errors with [`CaseError::EmptyName`] when `raw` contains no letters.
    pub fn new(raw: impl Into<String>) -> Result<Self, CaseError> {
        let raw = raw.into();
        if !raw.chars().any(|c| c.is_alphabetic()) {
            return Err(CaseError::EmptyName(raw));
        }
        let normalized = normalize_text(&raw);
        Ok(Self { raw, normalized })
    }

    pub fn raw(&self) -> &str {
        &self.raw
    }

    pub fn normalized(&self) -> &str {
        &self.normalized
    }
}

/// Equality and hashing are by normalized form: "Chronic Eczema" and
/// "chronic eczema." are the same condition.
impl PartialEq for ConditionName {
    fn eq(&self, other: &Self) -> bool {
        self.normalized == other.normalized
    }
}

impl Eq for ConditionName {}

impl std::hash::Hash for ConditionName {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.normalized.hash(state);
    }
}

impl fmt::Display for ConditionName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.normalized)
    }
}

fn normalize_text(raw: &str) -> String {
    let lower = raw.to_lowercase();
    let collapsed: String = lower.split_whitespace().collect::<Vec<_>>().join(" ");
    collapsed
        .trim_end_matches(['.', ',', ';', '!', '?', ' '])
        .to_string()
}

/// Normalize a raw condition name.
pub fn normalize_condition(raw: &str) -> Result<ConditionName, CaseError> {
    ConditionName::new(raw)
}

/// Image container format, detected from magic bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MediaType {
    Jpeg,
    Png,
}

impl MediaType {
    pub fn from_magic(bytes: &[u8]) -> Option<Self> {
        if bytes.starts_with(&[0xFF, 0xD8, 0xFF]) {
            Some(Self::Jpeg)
        } else if bytes.starts_with(&[0x89, 0x50, 0x4E, 0x47, 0x0D, 0x0A, 0x1A, 0x0A]) {
            Some(Self::Png)
        } else {
            None
        }
    }

    pub fn mime(&self) -> &'static str {
        match self {
            Self::Jpeg => "image/jpeg",
            Self::Png => "image/png",
        }
    }
}

impl fmt::Display for MediaType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Jpeg => f.write_str("jpeg"),
            Self::Png => f.write_str("png"),
        }
    }
}

/// Raw image bytes plus where they came from. Payloads pass through the
/// pipeline verbatim; no resizing or preprocessing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImagePayload {
    source_path: String,
    media_type: MediaType,
    #[serde(with = "base64_bytes")]
    bytes: Vec<u8>,
}

mod base64_bytes {
    use base64::Engine;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], ser: S) -> Result<S::Ok, S::Error> {
        ser.serialize_str(&base64::engine::general_purpose::STANDARD.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(de)?;
        base64::engine::general_purpose::STANDARD
            .decode(s.as_bytes())
            .map_err(serde::de::Error::custom)
    }
}

impl ImagePayload {
    /// Detects the media type from magic bytes; errors on unknown formats.
    pub fn new(source_path: impl Into<String>, bytes: Vec<u8>) -> Result<Self, CaseError> {
        let source_path = source_path.into();
        let media_type =
            MediaType::from_magic(&bytes).ok_or_else(|| CaseError::UnknownMediaType(source_path.clone()))?;
        Ok(Self {
            source_path,
            media_type,
            bytes,
        })
    }

    pub fn from_file(path: &Path, source_path: impl Into<String>) -> Result<Self, CaseError> {
        let bytes = fs::read(path).map_err(|source| CaseError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::new(source_path, bytes)
    }

    pub fn source_path(&self) -> &str {
        &self.source_path
    }

    pub fn media_type(&self) -> MediaType {
        self.media_type
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    /// Base64 encoding of the raw bytes, derived on demand.
    pub fn encoded(&self) -> String {
        use base64::Engine;
        base64::engine::general_purpose::STANDARD.encode(&self.bytes)
    }
}

/// Dataset split a case belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

/// One patient case: free-text query (may be empty for context-independent
/// cases), at least one image, and an optional ground-truth condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DermCase {
    pub case_id: String,
    pub query: String,
    pub images: Vec<ImagePayload>,
    pub ground_truth: Option<ConditionName>,
    pub split: Split,
    /// Doctor-written reference response, when the corpus provides one.
    /// Used only by the text metrics; absent cases are skipped there.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_response: Option<String>,
}

impl DermCase {
    pub fn new(
        case_id: impl Into<String>,
        query: impl Into<String>,
        images: Vec<ImagePayload>,
        ground_truth: Option<ConditionName>,
        split: Split,
    ) -> Result<Self, CaseError> {
        let case_id = case_id.into();
        if images.is_empty() {
            return Err(CaseError::EmptyImages(case_id));
        }
        Ok(Self {
            case_id,
            query: query.into(),
            images,
            ground_truth,
            split,
            reference_response: None,
        })
    }
}

/// Case counts; recomputable from the case list at any time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetCounts {
    pub total: usize,
    pub with_ground_truth: usize,
}

/// An ordered, id-unique collection of cases.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    cases: Vec<DermCase>,
    counts: DatasetCounts,
}

impl Dataset {
    pub fn new(cases: Vec<DermCase>) -> Result<Self, CaseError> {
        let mut seen = HashSet::new();
        for case in &cases {
            if !seen.insert(case.case_id.clone()) {
                return Err(CaseError::DuplicateCaseId(case.case_id.clone()));
            }
            if case.images.is_empty() {
                return Err(CaseError::EmptyImages(case.case_id.clone()));
            }
        }
        let counts = Self::count(&cases);
        Ok(Self { cases, counts })
    }

    fn count(cases: &[DermCase]) -> DatasetCounts {
        DatasetCounts {
            total: cases.len(),
            with_ground_truth: cases.iter().filter(|c| c.ground_truth.is_some()).count(),
        }
    }

    pub fn cases(&self) -> &[DermCase] {
        &self.cases
    }

    pub fn counts(&self) -> DatasetCounts {
        self.counts
    }

    /// Recompute counts from the case list (must always equal `counts()`).
    pub fn recount(&self) -> DatasetCounts {
        Self::count(&self.cases)
    }

    pub fn get(&self, case_id: &str) -> Option<&DermCase> {
        self.cases.iter().find(|c| c.case_id == case_id)
    }
}

/// On-disk JSONL record for one case. `image_paths` are relative to the
/// dataset file's directory.
#[derive(Debug, Serialize, Deserialize)]
struct CaseRecord {
    case_id: String,
    #[serde(default)]
    query: String,
    image_paths: Vec<String>,
    ground_truth: Option<String>,
    split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    reference_response: Option<String>,
}

/// Load a JSONL dataset. Cases whose `ground_truth` is absent or null are
/// kept but flagged; evaluation later skips them.
pub fn load_dataset(path: &Path) -> Result<Dataset, CaseError> {
    let file = fs::File::open(path).map_err(|source| CaseError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let base_dir = path.parent().unwrap_or_else(|| Path::new("."));
    let mut cases = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| CaseError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: CaseRecord = serde_json::from_str(&line).map_err(|e| CaseError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        cases.push(case_from_record(record, base_dir, line_no)?);
    }
    Dataset::new(cases)
}

fn case_from_record(record: CaseRecord, base_dir: &Path, line: usize) -> Result<DermCase, CaseError> {
    if record.image_paths.is_empty() {
        return Err(CaseError::Parse {
            line,
            message: format!("case {:?} lists no image_paths", record.case_id),
        });
    }
    let mut images = Vec::with_capacity(record.image_paths.len());
    for rel in &record.image_paths {
        images.push(ImagePayload::from_file(&base_dir.join(rel), rel.clone())?);
    }
    let ground_truth = match record.ground_truth {
        Some(raw) => Some(ConditionName::new(raw).map_err(|e| CaseError::Parse {
            line,
            message: e.to_string(),
        })?),
        None => None,
    };
    let mut case = DermCase::new(record.case_id, record.query, images, ground_truth, record.split)
        .map_err(|e| CaseError::Parse {
            line,
            message: e.to_string(),
        })?;
    case.reference_response = record.reference_response;
    Ok(case)
}

/// Write a dataset back out as JSONL. Image bytes are not rewritten; the
/// records keep their relative `image_paths`, so a round trip through
/// `save_dataset` + `load_dataset` in the same directory yields an equal
/// dataset.
pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<(), CaseError> {
    let mut out = fs::File::create(path).map_err(|source| CaseError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    for case in dataset.cases() {
        let record = CaseRecord {
            case_id: case.case_id.clone(),
            query: case.query.clone(),
            image_paths: case.images.iter().map(|i| i.source_path().to_string()).collect(),
            ground_truth: case.ground_truth.as_ref().map(|g| g.raw().to_string()),
            split: case.split,
            reference_response: case.reference_response.clone(),
        };
        let line = serde_json::to_string(&record).map_err(|e| CaseError::Parse {
            line: 0,
            message: e.to_string(),
        })?;
        writeln!(out, "{line}").map_err(|source| CaseError::Io {
            path: path.to_path_buf(),
            source,
        })?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Smallest byte sequences that pass magic detection; fine for tests
    /// since payloads are never decoded.
    pub(crate) const TINY_JPEG: &[u8] = &[0xFF, 0xD8, 0xFF, 0xE0, 0x00, 0x10, 0x4A, 0x46];
    pub(crate) const TINY_PNG: &[u8] = &[0x89, 0x50, 0x4E, 0x47, 0x0D, 0x0A, 0x1A, 0x0A, 0x00];

    fn write_dataset(dir: &Path, records: &[serde_json::Value]) -> PathBuf {
        let img = dir.join("img.jpg");
        fs::write(&img, TINY_JPEG).unwrap();
        let path = dir.join("cases.jsonl");
        let mut text = String::new();
        for r in records {
            text.push_str(&r.to_string());
            text.push('\n');
        }
        fs::write(&path, text).unwrap();
        path
    }

    fn record(case_id: &str, ground_truth: Option<&str>) -> serde_json::Value {
        serde_json::json!({
            "case_id": case_id,
            "query": "itchy rash",
            "image_paths": ["img.jpg"],
            "ground_truth": ground_truth,
            "split": "validation",
        })
    }

    #[test]
    fn normalizes_case_and_whitespace() {
        assert_eq!(normalize_condition("Chronic Eczema").unwrap().normalized(), "chronic eczema");
        assert_eq!(normalize_condition("  Myxoid   Cyst.").unwrap().normalized(), "myxoid cyst");
        assert_eq!(
            normalize_condition("Prurigo Nodularis").unwrap().normalized(),
            "prurigo nodularis"
        );
    }

    #[test]
    fn normalization_is_idempotent() {
        for raw in ["Chronic Eczema", "  Myxoid   Cyst.", "a-b.c!?", "LICHEN  simplex ;"] {
            let once = normalize_condition(raw).unwrap();
            let twice = normalize_condition(once.normalized()).unwrap();
            assert_eq!(once.normalized(), twice.normalized());
        }
    }

    #[test]
    fn internal_punctuation_preserved() {
        assert_eq!(
            normalize_condition("Allergic or irritant contact-dermatitis.").unwrap().normalized(),
            "allergic or irritant contact-dermatitis"
        );
    }

    #[test]
    fn rejects_letterless_names() {
        assert!(matches!(normalize_condition("  12. "), Err(CaseError::EmptyName(_))));
        assert!(matches!(normalize_condition(""), Err(CaseError::EmptyName(_))));
    }

    #[test]
    fn media_type_magic_detection() {
        assert_eq!(MediaType::from_magic(TINY_JPEG), Some(MediaType::Jpeg));
        assert_eq!(MediaType::from_magic(TINY_PNG), Some(MediaType::Png));
        assert_eq!(MediaType::from_magic(b"GIF89a"), None);
    }

    #[test]
    fn image_payload_round_trips_base64() {
        let img = ImagePayload::new("x.jpg", TINY_JPEG.to_vec()).unwrap();
        use base64::Engine;
        let decoded = base64::engine::general_purpose::STANDARD
            .decode(img.encoded())
            .unwrap();
        assert_eq!(decoded, img.bytes());
    }

    #[test]
    fn loads_counts_56_total_47_known() {
        let dir = tempfile::tempdir().unwrap();
        let mut records = Vec::new();
        for i in 0..56 {
            let gt = if i < 47 { Some("chronic eczema") } else { None };
            records.push(record(&format!("case-{i:03}"), gt));
        }
        let path = write_dataset(dir.path(), &records);
        let ds = load_dataset(&path).unwrap();
        assert_eq!(ds.counts().total, 56);
        assert_eq!(ds.counts().with_ground_truth, 47);
        assert_eq!(ds.recount(), ds.counts());
    }

    #[test]
    fn empty_file_is_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cases.jsonl");
        fs::write(&path, "").unwrap();
        let ds = load_dataset(&path).unwrap();
        assert_eq!(ds.counts().total, 0);
        assert_eq!(ds.counts().with_ground_truth, 0);
    }

    #[test]
    fn duplicate_case_id_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_dataset(dir.path(), &[record("dup", None), record("dup", None)]);
        assert!(matches!(load_dataset(&path), Err(CaseError::DuplicateCaseId(id)) if id == "dup"));
    }

    #[test]
    fn malformed_record_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cases.jsonl");
        fs::write(&path, format!("{}\nnot json\n", record("ok", None))).unwrap();
        fs::write(dir.path().join("img.jpg"), TINY_JPEG).unwrap();
        match load_dataset(&path) {
            Err(CaseError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected Parse error, got {other:?}"),
        }
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_dataset(
            dir.path(),
            &[record("a", Some("Psoriasis")), record("b", None)],
        );
        let ds = load_dataset(&path).unwrap();
        let out = dir.path().join("copy.jsonl");
        save_dataset(&ds, &out).unwrap();
        let reloaded = load_dataset(&out).unwrap();
        assert_eq!(ds, reloaded);
    }

    #[test]
    fn condition_equality_is_by_normalized_form() {
        let a = ConditionName::new("Chronic Eczema").unwrap();
        let b = ConditionName::new("chronic   eczema.").unwrap();
        assert_eq!(a, b);
    }
}
