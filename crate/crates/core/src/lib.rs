//! Concept-guided entity grounding for multi-modal knowledge graphs.
//!
//! Decides whether a candidate image shows a (possibly long-tailed) entity
//! by scoring the entity name together with its concepts, then re-judging
//! rejections with per-concept evidence weighted by concept specificity.

pub mod contrastive;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod scorer;
pub mod world;

pub use corpus::{ConceptStats, ConceptStrategy, Corpus, EntityRecord, ImageRef, PairRecord};
pub use error::{CorpusError, EvalError, FusionError, LossError, ScoreError};
pub use eval::{EvalReport, ExperimentConfig};
pub use fusion::{EvidenceItem, GroundingConfig, GroundingVerdict, Stages};
pub use scorer::{ScoreRequest, Scorer, SyntheticWorldConfig};
