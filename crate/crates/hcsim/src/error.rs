use thiserror::Error;

/// Crate-wide error type. Variants carry enough context to be actionable
/// from the CLI without a backtrace.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("invalid query: {0}")]
    InvalidQuery(String),

    #[error("invalid weighting: {0}")]
    InvalidWeighting(String),

    #[error("relation {relation}: expected arity {expected}, got {got}")]
    ArityMismatch {
        relation: String,
        expected: usize,
        got: usize,
    },

    #[error("unknown relation {0}")]
    UnknownRelation(String),

    #[error("value {value} outside domain 1..={n}")]
    DomainViolation { value: u64, n: u64 },

    #[error("{context}: enumeration would visit {count} candidates (limit {limit})")]
    EnumerationTooLarge {
        context: String,
        count: u128,
        limit: u128,
    },

    #[error("linear program is infeasible")]
    LpInfeasible,

    #[error("linear program is unbounded")]
    LpUnbounded,

    #[error("{0}")]
    InvalidArgument(String),

    #[error("generator gave up after {attempts} draws: cannot reach {m} distinct tuples")]
    CannotReachDistinct { attempts: u64, m: u64 },

    #[error("oracle join output exceeds guard of {guard} rows")]
    OracleGuardExceeded { guard: u64 },

    #[error("heavy-hitter structure violates processed-set cap: |C'(B)| = {size} > p = {p}")]
    ProcessedSetOverflow { size: usize, p: u64 },

    #[error("algorithm {algo} does not apply: {reason}")]
    AlgorithmShape { algo: String, reason: String },

    #[error("replication bound not applicable: L = {l} exceeds M_{j} = {m_j}")]
    ReplicationNotApplicable { l: f64, j: usize, m_j: f64 },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
