//! Activation-trace container (`.rpt`).
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! "RPLT"                      4 bytes magic
//! u32 format_version          = 1
//! u32 metadata_len
//! metadata JSON               metadata_len bytes, UTF-8
//! u64 record_count
//! per record:
//!   u32 header_len
//!   header JSON               {question_id, difficulty, reasoning_token_counts, answer_token_counts}
//!   f32 x n_layers*d_model    layer-major
//! ```
//!
//! Activations are the residual stream at the `<think>` position, captured
//! before any token is generated.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"RPLT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("bad magic bytes {0:02x?}, expected \"RPLT\"")]
    BadMagic([u8; 4]),

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("stream truncated in {0}")]
    Truncated(Location),

    #[error("non-finite activation in record {record} (layer {layer}, index {index})")]
    NonFinite {
        record: usize,
        layer: usize,
        index: usize,
    },

    #[error("shape mismatch in {location}: {detail}")]
    ShapeMismatch { location: Location, detail: String },

    #[error("duplicate question id {0:?}")]
    DuplicateId(String),

    #[error("invalid metadata: {0}")]
    Metadata(String),

    #[error("invalid header JSON in record {record}: {source}")]
    RecordHeader {
        record: usize,
        source: serde_json::Error,
    },

    #[error("{0} trailing bytes after the last record")]
    TrailingBytes(usize),

    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Where in a stream a problem was found.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Location {
    Header,
    Record(usize),
}

impl std::fmt::Display for Location {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Location::Header => f.write_str("file header"),
            Location::Record(i) => write!(f, "record {i}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CapturePosition {
    PreGenerationThinkToken,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CapturePoint {
    #[default]
    PostBlockResidual,
    PreBlockResidual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceMetadata {
    pub format_version: u32,
    pub model_name: String,
    pub n_layers: usize,
    pub d_model: usize,
    pub think_token_id: u32,
    pub end_think_token_id: u32,
    pub eos_token_id: u32,
    pub difficulty_levels: Vec<u32>,
    pub capture_position: CapturePosition,
    pub capture_point: CapturePoint,
}

impl TraceMetadata {
    pub fn validate(&self) -> Result<(), TraceError> {
        if self.format_version != FORMAT_VERSION {
            return Err(TraceError::UnsupportedVersion(self.format_version));
        }
        if self.n_layers == 0 || self.d_model == 0 {
            return Err(TraceError::Metadata(format!(
                "n_layers and d_model must be >= 1 (got {} x {})",
                self.n_layers, self.d_model
            )));
        }
        if self.difficulty_levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(TraceError::Metadata(
                "difficulty_levels must be sorted ascending and unique".into(),
            ));
        }
        if self.think_token_id == self.end_think_token_id {
            return Err(TraceError::Metadata(
                "think_token_id and end_think_token_id must differ".into(),
            ));
        }
        Ok(())
    }

    pub fn values_per_record(&self) -> usize {
        self.n_layers * self.d_model
    }
}

/// One question: its `<think>`-position activations at every layer plus the
/// observed token counts of each rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationRecord {
    pub question_id: String,
    pub difficulty: u32,
    /// `n_layers * d_model` values, layer-major.
    pub activations: Vec<f32>,
    pub reasoning_token_counts: Vec<u32>,
    pub answer_token_counts: Vec<u32>,
    /// Per-rollout truncation flags written by capture tools; absent for
    /// synthetic traces.
    pub truncated: Option<Vec<bool>>,
}

impl ActivationRecord {
    pub fn layer(&self, layer: usize, d_model: usize) -> &[f32] {
        &self.activations[layer * d_model..(layer + 1) * d_model]
    }

    pub fn mean_reasoning_tokens(&self) -> f64 {
        let n = self.reasoning_token_counts.len().max(1) as f64;
        self.reasoning_token_counts.iter().map(|&c| c as f64).sum::<f64>() / n
    }

    fn header(&self) -> RecordHeader<'_> {
        RecordHeader {
            question_id: std::borrow::Cow::Borrowed(&self.question_id),
            difficulty: self.difficulty,
            reasoning_token_counts: std::borrow::Cow::Borrowed(&self.reasoning_token_counts),
            answer_token_counts: std::borrow::Cow::Borrowed(&self.answer_token_counts),
            truncated: self.truncated.as_deref().map(std::borrow::Cow::Borrowed),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordHeader<'a> {
    question_id: std::borrow::Cow<'a, str>,
    difficulty: u32,
    reasoning_token_counts: std::borrow::Cow<'a, [u32]>,
    answer_token_counts: std::borrow::Cow<'a, [u32]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    truncated: Option<std::borrow::Cow<'a, [bool]>>,
}

/// Validated, immutable collection of activation records.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceDataset {
    metadata: TraceMetadata,
    records: Vec<ActivationRecord>,
}

impl TraceDataset {
    pub fn new(metadata: TraceMetadata, records: Vec<ActivationRecord>) -> Result<Self, TraceError> {
        metadata.validate()?;
        let mut seen = HashSet::with_capacity(records.len());
        for (i, rec) in records.iter().enumerate() {
            check_record(&metadata, rec, i)?;
            if !seen.insert(rec.question_id.as_str()) {
                return Err(TraceError::DuplicateId(rec.question_id.clone()));
            }
        }
        Ok(Self { metadata, records })
    }

    pub fn metadata(&self) -> &TraceMetadata {
        &self.metadata
    }

    pub fn records(&self) -> &[ActivationRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn into_parts(self) -> (TraceMetadata, Vec<ActivationRecord>) {
        (self.metadata, self.records)
    }

    pub fn find(&self, question_id: &str) -> Option<&ActivationRecord> {
        self.records.iter().find(|r| r.question_id == question_id)
    }

    /// Subset with the same metadata; indices are assumed valid and unique.
    fn select(&self, indices: &[usize]) -> TraceDataset {
        TraceDataset {
            metadata: self.metadata.clone(),
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
        }
    }
}

fn check_record(meta: &TraceMetadata, rec: &ActivationRecord, index: usize) -> Result<(), TraceError> {
    let loc = Location::Record(index);
    if rec.activations.len() != meta.values_per_record() {
        return Err(TraceError::ShapeMismatch {
            location: loc,
            detail: format!(
                "expected {} activations, found {}",
                meta.values_per_record(),
                rec.activations.len()
            ),
        });
    }
    if let Some(pos) = rec.activations.iter().position(|v| !v.is_finite()) {
        return Err(TraceError::NonFinite {
            record: index,
            layer: pos / meta.d_model,
            index: pos % meta.d_model,
        });
    }
    if rec.reasoning_token_counts.is_empty() {
        return Err(TraceError::ShapeMismatch {
            location: loc,
            detail: "reasoning_token_counts is empty".into(),
        });
    }
    if rec.reasoning_token_counts.len() != rec.answer_token_counts.len() {
        return Err(TraceError::ShapeMismatch {
            location: loc,
            detail: format!(
                "{} reasoning counts but {} answer counts",
                rec.reasoning_token_counts.len(),
                rec.answer_token_counts.len()
            ),
        });
    }
    if let Some(flags) = &rec.truncated {
        if flags.len() != rec.reasoning_token_counts.len() {
            return Err(TraceError::ShapeMismatch {
                location: loc,
                detail: "truncated flags do not match rollout count".into(),
            });
        }
    }
    if meta.difficulty_levels.binary_search(&rec.difficulty).is_err() {
        return Err(TraceError::ShapeMismatch {
            location: loc,
            detail: format!("difficulty {} not among declared levels", rec.difficulty),
        });
    }
    Ok(())
}

/// Serializes `dataset` into `sink`, returning the number of bytes written.
pub fn write_trace<W: Write>(dataset: &TraceDataset, mut sink: W) -> Result<u64, TraceError> {
    dataset.metadata.validate()?;

    let meta = serde_json::to_vec(&dataset.metadata).map_err(|e| TraceError::Metadata(e.to_string()))?;
    let mut written = 0u64;
    let mut put = |sink: &mut W, bytes: &[u8]| -> io::Result<()> {
        sink.write_all(bytes)?;
        written += bytes.len() as u64;
        Ok(())
    };

    put(&mut sink, &MAGIC)?;
    put(&mut sink, &FORMAT_VERSION.to_le_bytes())?;
    put(&mut sink, &len_u32(meta.len())?.to_le_bytes())?;
    put(&mut sink, &meta)?;
    put(&mut sink, &(dataset.records.len() as u64).to_le_bytes())?;

    let mut floats = Vec::with_capacity(dataset.metadata.values_per_record() * 4);
    for (i, rec) in dataset.records.iter().enumerate() {
        let header = serde_json::to_vec(&rec.header()).map_err(|source| TraceError::RecordHeader { record: i, source })?;
        put(&mut sink, &len_u32(header.len())?.to_le_bytes())?;
        put(&mut sink, &header)?;
        floats.clear();
        for v in &rec.activations {
            floats.extend_from_slice(&v.to_le_bytes());
        }
        put(&mut sink, &floats)?;
    }
    sink.flush()?;
    Ok(written)
}

fn len_u32(n: usize) -> Result<u32, TraceError> {
    u32::try_from(n).map_err(|_| TraceError::Metadata(format!("JSON block of {n} bytes exceeds u32")))
}

/// Parses a complete trace, rejecting anything that violates the format or
/// the dataset invariants.
pub fn read_trace<R: Read>(source: R) -> Result<TraceDataset, TraceError> {
    let mut src = source;

    let mut magic = [0u8; 4];
    fill(&mut src, &mut magic, Location::Header)?;
    if magic != MAGIC {
        return Err(TraceError::BadMagic(magic));
    }
    let version = read_u32(&mut src, Location::Header)?;
    if version != FORMAT_VERSION {
        return Err(TraceError::UnsupportedVersion(version));
    }
    let meta_len = read_u32(&mut src, Location::Header)? as usize;
    let meta_bytes = read_block(&mut src, meta_len, Location::Header)?;
    let metadata: TraceMetadata =
        serde_json::from_slice(&meta_bytes).map_err(|e| TraceError::Metadata(e.to_string()))?;
    metadata.validate()?;

    let count = read_u64(&mut src, Location::Header)?;
    let per_record = metadata.values_per_record();
    let mut records = Vec::with_capacity(count.min(1 << 16) as usize);
    let mut seen = HashSet::new();
    for i in 0..count as usize {
        let loc = Location::Record(i);
        let header_len = read_u32(&mut src, loc)? as usize;
        let header_bytes = read_block(&mut src, header_len, loc)?;
        let header: RecordHeader<'_> =
            serde_json::from_slice(&header_bytes).map_err(|source| TraceError::RecordHeader { record: i, source })?;
        let raw = read_block(&mut src, per_record * 4, loc)?;
        let activations = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let rec = ActivationRecord {
            question_id: header.question_id.into_owned(),
            difficulty: header.difficulty,
            activations,
            reasoning_token_counts: header.reasoning_token_counts.into_owned(),
            answer_token_counts: header.answer_token_counts.into_owned(),
            truncated: header.truncated.map(|t| t.into_owned()),
        };
        check_record(&metadata, &rec, i)?;
        if !seen.insert(rec.question_id.clone()) {
            return Err(TraceError::DuplicateId(rec.question_id));
        }
        records.push(rec);
    }

    let mut rest = Vec::new();
    src.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(TraceError::TrailingBytes(rest.len()));
    }
    Ok(TraceDataset { metadata, records })
}

fn fill<R: Read>(src: &mut R, buf: &mut [u8], loc: Location) -> Result<(), TraceError> {
    src.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => TraceError::Truncated(loc),
        _ => TraceError::Io(e),
    })
}

fn read_u32<R: Read>(src: &mut R, loc: Location) -> Result<u32, TraceError> {
    let mut b = [0u8; 4];
    fill(src, &mut b, loc)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(src: &mut R, loc: Location) -> Result<u64, TraceError> {
    let mut b = [0u8; 8];
    fill(src, &mut b, loc)?;
    Ok(u64::from_le_bytes(b))
}

// Reads through `take` so a corrupt length cannot trigger a huge allocation.
fn read_block<R: Read>(src: &mut R, len: usize, loc: Location) -> Result<Vec<u8>, TraceError> {
    let mut buf = Vec::new();
    src.by_ref().take(len as u64).read_to_end(&mut buf)?;
    if buf.len() != len {
        return Err(TraceError::Truncated(loc));
    }
    Ok(buf)
}

pub fn write_trace_file(dataset: &TraceDataset, path: impl AsRef<Path>) -> Result<u64> {
    let file = File::create(path)?;
    Ok(write_trace(dataset, BufWriter::new(file))?)
}

pub fn read_trace_file(path: impl AsRef<Path>) -> Result<TraceDataset> {
    let file = File::open(path)?;
    Ok(read_trace(BufReader::new(file))?)
}

/// Random train/test partition. Both halves keep the original record order.
pub fn split_dataset(dataset: &TraceDataset, test_fraction: f64, seed: u64) -> Result<(TraceDataset, TraceDataset)> {
    let n = dataset.len();
    if n < 2 {
        return Err(Error::Empty(format!("split needs at least 2 records, got {n}")));
    }
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Config(format!("test_fraction must lie in (0,1), got {test_fraction}")));
    }
    let n_test = ((test_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut is_test = vec![false; n];
    for i in rand::seq::index::sample(&mut rng, n, n_test) {
        is_test[i] = true;
    }
    let (test_idx, train_idx): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| is_test[i]);
    Ok((dataset.select(&train_idx), dataset.select(&test_idx)))
}

/// Records grouped by difficulty. Every declared level has an entry, possibly empty.
pub fn group_by_difficulty(dataset: &TraceDataset) -> BTreeMap<u32, Vec<&ActivationRecord>> {
    let mut groups: BTreeMap<u32, Vec<&ActivationRecord>> = dataset
        .metadata
        .difficulty_levels
        .iter()
        .map(|&l| (l, Vec::new()))
        .collect();
    for rec in &dataset.records {
        groups.entry(rec.difficulty).or_default().push(rec);
    }
    groups
}
