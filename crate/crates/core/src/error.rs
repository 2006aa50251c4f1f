use thiserror::Error;

use crate::graph::NodeId;


pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("edge endpoints {0} and {1} have the same node kind")]
    SameKindEndpoints(NodeId, NodeId),
    #[error("node {0} is not a candidate")]
    NotACandidate(NodeId),
    #[error("graph is frozen; no further mutation allowed")]
    GraphFrozen,
    #[error("similarity is undefined for an empty token set")]
    EmptyTokenSet,
    #[error("no profile or job description text for node {0}")]
    MissingNodeText(NodeId),
    #[error("edge kind {0} has no registered phrase")]
    UnregisteredEdgeKind(String),
    #[error("sample has {len} tokens, model context is {limit}")]
    TokenBudgetExceeded { len: usize, limit: usize },
    #[error("cannot mean-pool an empty token span")]
    EmptySpan,
    #[error("path token spans overlap or fall out of bounds")]
    SpanOverlap,
    #[error("sequence of {len} positions exceeds context length {limit}")]
    ContextOverflow { len: usize, limit: usize },
    #[error("loss mask selects no positions")]
    AllMaskedOut,
    #[error("non-finite loss at epoch {epoch}, step {step} (sample {sample})")]
    NonFiniteLoss { epoch: usize, step: usize, sample: usize },
    #[error("AUC needs both positive and negative labels")]
    SingleClass,
    #[error("split cannot satisfy its disjointness constraint: {0}")]
    InsufficientDiversity(String),
    #[error("degenerate world: {0}")]
    DegenerateWorld(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("malformed record: {0}")]
    Parse(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable identifier, used by the CLI error line.
    pub fn code(&self) -> &'static str {
        match self {
            Error::UnknownNode(_) => "unknown_node",
            Error::SameKindEndpoints(..) => "same_kind_endpoints",
            Error::NotACandidate(_) => "not_a_candidate",
            Error::GraphFrozen => "graph_frozen",
            Error::EmptyTokenSet => "empty_token_set",
            Error::MissingNodeText(_) => "missing_node_text",
            Error::UnregisteredEdgeKind(_) => "unregistered_edge_kind",
            Error::TokenBudgetExceeded { .. } => "token_budget_exceeded",
            Error::EmptySpan => "empty_span",
            Error::SpanOverlap => "span_overlap",
            Error::ContextOverflow { .. } => "context_overflow",
            Error::AllMaskedOut => "all_masked_out",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::SingleClass => "single_class",
            Error::InsufficientDiversity(_) => "insufficient_diversity",
            Error::DegenerateWorld(_) => "degenerate_world",
            Error::InvalidConfig(_) => "invalid_config",
            Error::Shape(_) => "shape_mismatch",
            Error::Parse(_) => "parse_error",
            Error::Io(_) => "io_error",
            Error::Json(_) => "json_error",
        }
    }
}
