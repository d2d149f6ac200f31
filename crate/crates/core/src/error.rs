use alloc::string::String;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("unknown leaf index {0}")]
    UnknownLeaf(usize),
    #[error("stale or foreign node handle")]
    StaleNode,
    #[error("leaf {0} appears more than once")]
    DuplicateLeaf(usize),
    #[error("empty leaf subset")]
    EmptySubset,
    #[error("trees are over different leaf sets")]
    LeafSetMismatch,
    #[error("target tree embodies no triplets; triplet distance is undefined")]
    NoTargetTriplets,
    #[error("time must strictly increase from parent ({parent}) to child ({child})")]
    NonMonotoneTime { parent: f64, child: f64 },
    #[error("zero-length edge")]
    ZeroLengthEdge,
    #[error("time {0} outside [0, 1)")]
    TimeOutOfRange(f64),
    #[error("triplet constraints are not realizable by any tree")]
    Unrealizable,
    #[error("cannot prune the root or the stem")]
    PruneRoot,
    #[error("invalid triplet: {0}")]
    InvalidTriplet(&'static str),
    #[error("tree violates the constraint ({{{a},{b}}},{c})")]
    Violates { a: usize, b: usize, c: usize },
    #[error("tree is not binary")]
    NotBinary,
    #[error("sample trace is empty")]
    EmptyTrace,
    #[error("subset needs at least {0} leaves")]
    SubsetTooSmall(usize),
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),
    #[error("malformed tree: {0}")]
    Malformed(String),
    #[error("invalid regraft location: {0}")]
    InvalidAttach(&'static str),
    #[error("no regraft location satisfies the constraints")]
    NoValidLocation,
    #[error("singular covariance")]
    Singular,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
}

pub type Result<T> = core::result::Result<T, Error>;
