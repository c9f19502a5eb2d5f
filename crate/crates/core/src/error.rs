use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed triple at line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("knowledge graph contains no triples")]
    EmptyGraph,
    #[error("{kind} id {id} out of range (size {size})")]
    IdOutOfRange {
        kind: &'static str,
        id: usize,
        size: usize,
    },
    #[error("unknown entity label `{0}`")]
    UnknownEntity(String),
    #[error("unknown relation `{0}`")]
    UnknownRelation(String),
    #[error("relation label `{0}` uses the reserved inverse suffix")]
    ReservedSuffix(String),

    #[error("query type {query_type} expects {expected_anchors} anchors and {expected_relations} relations, got {anchors} and {relations}")]
    ArityMismatch {
        query_type: String,
        expected_anchors: usize,
        expected_relations: usize,
        anchors: usize,
        relations: usize,
    },
    #[error("unknown query type `{0}`")]
    UnknownQueryType(String),
    #[error("node position {0} exceeds the maximum canonical position 3")]
    PositionOverflow(usize),
    #[error("node {0} not found in query graph")]
    NodeNotFound(usize),
    #[error("invalid query graph: {0}")]
    InvalidQueryGraph(String),
    #[error("union below a negation cannot be lifted to disjunctive normal form")]
    UnsupportedUnionShape,
    #[error("failed to ground a {query_type} query after {tries} tries")]
    GroundingFailed { query_type: String, tries: usize },
    #[error("bad query record at line {line}: {reason}")]
    QueryRecord { line: usize, reason: String },

    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },
    #[error("backward root must be a scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),

    #[error("intersection needs at least two inputs")]
    FewerThanTwo,
    #[error("query has no disjuncts")]
    EmptyDisjuncts,
    #[error("the box backend cannot answer queries with negation ({0}); negation queries are excluded for box embeddings")]
    NegationUnsupported(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("node has no incident relations")]
    NoIncidentRelations,

    #[error("no negative entities available: every entity is an answer")]
    NoNegativesAvailable,
    #[error("variance loss is undefined for the box backend")]
    VarianceOnBoxBackend,
    #[error("non-finite loss at step {step}")]
    DivergedLoss { step: usize },
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("dataset is empty")]
    EmptyDataset,

    #[error("target entity {0} is in the filter set")]
    TargetFiltered(usize),
    #[error("no ranks recorded for query type {0}")]
    EmptyGroup(String),
    #[error("reports cover different query types")]
    CoverageMismatch,

    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("io error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse classification used to map errors onto process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numeric,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        use Error::*;
        match self {
            ShapeMismatch { .. } | Domain { .. } | NonScalarRoot(_) | DivergedLoss { .. } => {
                ErrorClass::Numeric
            }
            InvalidConfig(_) | NegationUnsupported(_) | VarianceOnBoxBackend => ErrorClass::Config,
            _ => ErrorClass::Data,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
