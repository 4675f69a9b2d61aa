use std::path::PathBuf;

use thiserror::Error;

/// Errors raised while loading or querying a corpus.
#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}:{line}: duplicate {kind} id {id:?} (first seen on line {first_line})")]
    DuplicateId {
        path: PathBuf,
        kind: &'static str,
        id: String,
        line: usize,
        first_line: usize,
    },
    #[error("{path}:{line}: {kind} id {id:?} does not resolve in the corpus")]
    DanglingReference {
        path: PathBuf,
        line: usize,
        kind: &'static str,
        id: String,
    },
    #[error("{path}: file contains no records")]
    Empty { path: PathBuf },
    #[error("{0}")]
    Invalid(String),
    #[error("concept statistics need at least one entity")]
    EmptyStats,
}

/// Errors raised by scorer implementations.
#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("score request text must be non-empty")]
    EmptyText,
    #[error("transport error: {0}")]
    Transport(String),
    #[error("malformed scorer response: {0}")]
    MalformedResponse(String),
    #[error("scorer returned {value} for item {index}, outside [0, 1]")]
    OutOfRange { index: usize, value: f64 },
    #[error("image {0:?} has no source entity; the synthetic scorer needs provenance")]
    MissingProvenance(String),
    #[error("image {0:?} is not part of the scorer's corpus")]
    UnknownImage(String),
    #[error("batch item {index} failed: {source}")]
    Batch {
        index: usize,
        #[source]
        source: Box<ScoreError>,
    },
    #[error("invalid scorer config: {0}")]
    Config(String),
}

/// Errors raised by the two-stage grounding pipeline.
#[derive(Debug, Error)]
pub enum FusionError {
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error("evidence fusion needs at least one concept")]
    NoConcepts,
    #[error("concept {0:?} is missing from the concept statistics")]
    UnknownConcept(String),
    #[error("contribution undefined for num={num}, ents={ents}, log_base={log_base}")]
    Domain { num: u64, ents: u64, log_base: u32 },
    #[error("threshold {0} must lie strictly inside (0, 1)")]
    Threshold(f64),
    #[error("no candidates to rank")]
    NoCandidates,
    #[error("entity name must be non-empty")]
    EmptyName,
}

/// Errors raised by the contrastive-loss reference.
#[derive(Debug, Error)]
pub enum LossError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid labels: {0}")]
    Labels(String),
    #[error("prediction {value} at {location} is outside [0, 1]")]
    Prediction { location: String, value: f64 },
}

/// Errors raised by the evaluation harness.
#[derive(Debug, Error)]
pub enum EvalError {
    #[error("not enough negatives: {0}")]
    InsufficientNegatives(String),
    #[error("ranker dropped the positive {positive:?} for entity {entity:?}")]
    PositiveMissing { entity: String, positive: String },
    #[error("metrics need at least one {0}")]
    Empty(&'static str),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
}
