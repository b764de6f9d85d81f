//! Per-sentence model output records exchanged between a model runtime and
//! the scoring core, plus a deterministic mock backend.
//!
//! Record files are JSON lines. Each record carries the sentence's tokens
//! (special tokens excluded), the natural-log probability the model assigns
//! to each observed token with nothing masked, the attention each token
//! receives (averaged over layers, heads and query positions, so it sums to
//! one), and a sentence embedding.

use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::hash;

/// Allowed deviation of the attention mass from 1.
pub const ATTENTION_MASS_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    Female,
    Male,
    Stereo,
    Anti,
}

impl Group {
    /// Male and stereotypical sentences are the side the mock bias knob favours.
    pub fn is_favoured(self) -> bool {
        matches!(self, Group::Male | Group::Stereo)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelRecord {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<Group>,
    pub text: String,
    pub tokens: Vec<String>,
    pub token_logprobs: Vec<f64>,
    pub attentions: Vec<f64>,
    pub embedding: Vec<f64>,
}

/// A single invariant violation.
#[derive(Debug, Clone, PartialEq)]
pub enum RecordIssue {
    NoTokens,
    LengthMismatch { tokens: usize, logprobs: usize, attentions: usize },
    NonFinite { field: &'static str, index: usize },
    PositiveLogprob { index: usize, value: f64 },
    NegativeAttention { index: usize, value: f64 },
    AttentionMass { sum: f64 },
    EmptyEmbedding,
    ZeroEmbedding,
    EmbeddingDimension { expected: usize, found: usize },
}

impl fmt::Display for RecordIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::NoTokens => f.write_str("record has no tokens"),
            Self::LengthMismatch { tokens, logprobs, attentions } => write!(
                f,
                "per-token lengths differ: {tokens} tokens, {logprobs} token_logprobs, {attentions} attentions"
            ),
            Self::NonFinite { field, index } => write!(f, "{field}[{index}] is not finite"),
            Self::PositiveLogprob { index, value } => {
                write!(f, "token_logprobs[{index}] = {value} is positive")
            }
            Self::NegativeAttention { index, value } => {
                write!(f, "attentions[{index}] = {value} is negative")
            }
            Self::AttentionMass { sum } => write!(f, "attention mass {sum:.2} outside tolerance"),
            Self::EmptyEmbedding => f.write_str("embedding is empty"),
            Self::ZeroEmbedding => f.write_str("embedding is the zero vector"),
            Self::EmbeddingDimension { expected, found } => {
                write!(f, "embedding has dimension {found}, expected {expected}")
            }
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ProtocolError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: record {id:?}: {issue}")]
    Invalid { line: usize, id: String, issue: RecordIssue },
    #[error("line {line}: pair {pair_id:?} is missing its `{member}` member")]
    MissingMember { line: usize, pair_id: String, member: &'static str },
    #[error("no records")]
    NoRecords,
    #[error("no pairs")]
    NoPairs,
    #[error("mock backend: {0}")]
    Mock(String),
}

pub type Result<T, E = ProtocolError> = std::result::Result<T, E>;

impl ModelRecord {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embedding.len()
    }

    /// Checks every per-record invariant. The embedding dimension is checked
    /// against other records by the file readers.
    pub fn validate(&self) -> Result<(), RecordIssue> {
        let n = self.tokens.len();
        if n == 0 {
            return Err(RecordIssue::NoTokens);
        }
        if self.token_logprobs.len() != n || self.attentions.len() != n {
            return Err(RecordIssue::LengthMismatch {
                tokens: n,
                logprobs: self.token_logprobs.len(),
                attentions: self.attentions.len(),
            });
        }
        for (index, &value) in self.token_logprobs.iter().enumerate() {
            if !value.is_finite() {
                return Err(RecordIssue::NonFinite { field: "token_logprobs", index });
            }
            if value > 0.0 {
                return Err(RecordIssue::PositiveLogprob { index, value });
            }
        }
        for (index, &value) in self.attentions.iter().enumerate() {
            if !value.is_finite() {
                return Err(RecordIssue::NonFinite { field: "attentions", index });
            }
            if value < 0.0 {
                return Err(RecordIssue::NegativeAttention { index, value });
            }
        }
        let sum: f64 = self.attentions.iter().sum();
        if (sum - 1.0).abs() > ATTENTION_MASS_TOLERANCE {
            return Err(RecordIssue::AttentionMass { sum });
        }
        if self.embedding.is_empty() {
            return Err(RecordIssue::EmptyEmbedding);
        }
        if let Some(index) = self.embedding.iter().position(|v| !v.is_finite()) {
            return Err(RecordIssue::NonFinite { field: "embedding", index });
        }
        if self.embedding.iter().all(|&v| v == 0.0) {
            return Err(RecordIssue::ZeroEmbedding);
        }
        Ok(())
    }
}

/// Tracks the embedding dimension shared by all records of one file.
#[derive(Default)]
struct DimCheck(Option<usize>);

impl DimCheck {
    fn check(&mut self, record: &ModelRecord, line: usize) -> Result<()> {
        let found = record.dim();
        match self.0 {
            None => self.0 = Some(found),
            Some(expected) if expected != found => {
                return Err(ProtocolError::Invalid {
                    line,
                    id: record.id.clone(),
                    issue: RecordIssue::EmbeddingDimension { expected, found },
                })
            }
            Some(_) => {}
        }
        Ok(())
    }
}

fn validated(record: ModelRecord, line: usize, dims: &mut DimCheck) -> Result<ModelRecord> {
    record.validate().map_err(|issue| ProtocolError::Invalid { line, id: record.id.clone(), issue })?;
    dims.check(&record, line)?;
    Ok(record)
}

fn open(path: &Path) -> Result<BufReader<std::fs::File>> {
    std::fs::File::open(path).map(BufReader::new).map_err(|source| ProtocolError::Io { path: path.to_owned(), source })
}

/// Non-blank lines of a JSON-lines stream, numbered from 1.
fn json_lines<R: BufRead>(reader: R) -> impl Iterator<Item = Result<(usize, String)>> {
    reader.lines().enumerate().filter_map(|(i, line)| match line {
        Ok(l) if l.trim().is_empty() => None,
        Ok(l) => Some(Ok((i + 1, l))),
        Err(e) => Some(Err(ProtocolError::Malformed { line: i + 1, message: e.to_string() })),
    })
}

pub fn parse_records<R: BufRead>(reader: R) -> Result<Vec<ModelRecord>> {
    let mut dims = DimCheck::default();
    let mut out = Vec::new();
    for item in json_lines(reader) {
        let (line, text) = item?;
        let record: ModelRecord =
            serde_json::from_str(&text).map_err(|e| ProtocolError::Malformed { line, message: e.to_string() })?;
        out.push(validated(record, line, &mut dims)?);
    }
    Ok(out)
}

/// Reads and validates a record file. An empty file yields an empty list.
pub fn read_records(path: &Path) -> Result<Vec<ModelRecord>> {
    parse_records(open(path)?)
}

pub fn write_records<W: Write>(mut out: W, records: &[ModelRecord]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Stereotypical and anti-stereotypical renderings of one context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordPair {
    pub pair_id: String,
    pub stereo: ModelRecord,
    pub anti: ModelRecord,
}

#[derive(Deserialize)]
struct RawPair {
    #[serde(default)]
    pair_id: Option<serde_json::Value>,
    #[serde(default)]
    stereo: Option<ModelRecord>,
    #[serde(default)]
    anti: Option<ModelRecord>,
}

fn pair_id_of(value: Option<serde_json::Value>, line: usize) -> String {
    match value {
        Some(serde_json::Value::String(s)) => s,
        Some(other) => other.to_string(),
        None => format!("line-{line}"),
    }
}

pub fn parse_pairfile<R: BufRead>(reader: R) -> Result<Vec<RecordPair>> {
    let mut dims = DimCheck::default();
    let mut out = Vec::new();
    for item in json_lines(reader) {
        let (line, text) = item?;
        let raw: RawPair =
            serde_json::from_str(&text).map_err(|e| ProtocolError::Malformed { line, message: e.to_string() })?;
        let pair_id = pair_id_of(raw.pair_id, line);
        let stereo = raw.stereo.ok_or_else(|| ProtocolError::MissingMember {
            line,
            pair_id: pair_id.clone(),
            member: "stereo",
        })?;
        let anti =
            raw.anti.ok_or_else(|| ProtocolError::MissingMember { line, pair_id: pair_id.clone(), member: "anti" })?;
        let stereo = validated(stereo, line, &mut dims)?;
        let anti = validated(anti, line, &mut dims)?;
        out.push(RecordPair { pair_id, stereo, anti });
    }
    if out.is_empty() {
        return Err(ProtocolError::NoPairs);
    }
    Ok(out)
}

/// Reads a pair file, validating both members of every pair.
pub fn validate_pairfile(path: &Path) -> Result<Vec<RecordPair>> {
    parse_pairfile(open(path)?)
}

pub fn write_pairs<W: Write>(mut out: W, pairs: &[RecordPair]) -> std::io::Result<()> {
    for p in pairs {
        serde_json::to_writer(&mut out, p)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// A pair whose members carry text only; produced by the template generator
/// and consumed by a backend that fills in the model outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSkeleton {
    pub pair_id: String,
    pub stereo: SentenceStub,
    pub anti: SentenceStub,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceStub {
    pub id: String,
    pub group: Group,
    pub text: String,
}

pub fn parse_skeletons<R: BufRead>(reader: R) -> Result<Vec<PairSkeleton>> {
    let mut out = Vec::new();
    for item in json_lines(reader) {
        let (line, text) = item?;
        let p: PairSkeleton =
            serde_json::from_str(&text).map_err(|e| ProtocolError::Malformed { line, message: e.to_string() })?;
        out.push(p);
    }
    if out.is_empty() {
        return Err(ProtocolError::NoPairs);
    }
    Ok(out)
}

pub fn read_skeletons(path: &Path) -> Result<Vec<PairSkeleton>> {
    parse_skeletons(open(path)?)
}

/// Parameters of the hash-driven mock model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MockSpec {
    /// Log-likelihood advantage given to male (and stereotypical) sentences,
    /// per token.
    pub bias_strength: f64,
    pub embed_dim: usize,
    pub seed: u64,
}

impl MockSpec {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim < 2 {
            return Err(ProtocolError::Mock(format!("embed_dim must be at least 2, got {}", self.embed_dim)));
        }
        if !self.bias_strength.is_finite() {
            return Err(ProtocolError::Mock("bias_strength must be finite".into()));
        }
        Ok(())
    }
}

const SALT_LOGPROB: u64 = 0x6c70;
const SALT_ATTENTION: u64 = 0x6174;
const SALT_EMBEDDING: u64 = 0x656d;

/// Deterministic pseudo-model output for `text`.
///
/// Every token gets a base log-probability `-u` with `u` in (0, 3] drawn
/// from the hash of (seed, text, position). The bias knob `b` opens a gap of
/// exactly `b` per token between favoured (male/stereo) and other groups:
/// for `b > 0` the other groups are lowered by `b`, for `b < 0` the favoured
/// groups are lowered by `|b|`, so log-probabilities never become positive.
/// Attention and embedding depend on the text only, never on the group.
pub fn mock_score(text: &str, group: Option<Group>, spec: &MockSpec) -> Result<ModelRecord> {
    spec.validate()?;
    let tokens: Vec<String> = text.split_whitespace().map(str::to_owned).collect();
    if tokens.is_empty() {
        return Err(ProtocolError::Mock("empty text".into()));
    }
    let base = hash::combine(spec.seed, hash::fnv1a(text.as_bytes()));
    let draw = |salt: u64, i: usize| hash::unit_open_closed(hash::combine(hash::combine(base, salt), i as u64));

    let b = spec.bias_strength;
    let shift = match group {
        Some(g) if g.is_favoured() => b.min(0.0),
        _ => -b.max(0.0),
    };
    let token_logprobs: Vec<f64> = (0..tokens.len()).map(|i| -3.0 * draw(SALT_LOGPROB, i) + shift).collect();

    let raw: Vec<f64> = (0..tokens.len()).map(|i| draw(SALT_ATTENTION, i)).collect();
    let mass: f64 = raw.iter().sum();
    let attentions: Vec<f64> = raw.iter().map(|a| a / mass).collect();

    let mut embedding: Vec<f64> = (0..spec.embed_dim).map(|k| 2.0 * draw(SALT_EMBEDDING, k) - 1.0).collect();
    let norm = embedding.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        embedding.iter_mut().for_each(|v| *v /= norm);
    } else {
        embedding[0] = 1.0;
    }

    let tag = group.map_or(0, |g| g as u64 + 1);
    Ok(ModelRecord {
        id: format!("{:016x}", hash::combine(base, tag)),
        group,
        text: text.to_owned(),
        tokens,
        token_logprobs,
        attentions,
        embedding,
    })
}
