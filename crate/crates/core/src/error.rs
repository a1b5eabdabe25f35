use thiserror::Error;

/// Errors shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("mesh has no faces")]
    EmptyMesh,
    #[error("face {face} references vertex {index} but mesh has {count} vertices")]
    IndexOutOfRange { face: usize, index: usize, count: usize },
    #[error("face {0} is degenerate (repeated vertex index)")]
    DegenerateFace(usize),
    #[error("interior edge ({0}, {1}) has inconsistent orientation")]
    InconsistentOrientation(usize, usize),
    #[error("expected {expected} pieces, got {got}")]
    PieceCountMismatch { expected: usize, got: usize },
    #[error("linear system is singular")]
    SingularSystem,
    #[error("vertex {0} pinned twice on the same axis")]
    ConstraintConflict(usize),
    #[error("triangle is degenerate (area below threshold)")]
    DegenerateTriangle,
    #[error("panel is degenerate (collinear or too few points)")]
    DegeneratePanel,
    #[error("cannot identify the {0} boundary on this piece")]
    MissingFeature(&'static str),
    #[error("vector length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("conjugate gradient did not converge in {0} iterations")]
    NoConvergence(usize),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("tape already consumed by backward")]
    TapeReuse,
    #[error("bad magic bytes (expected {0})")]
    BadMagic(&'static str),
    #[error("file truncated")]
    TruncatedFile,
    #[error("parse error at line {line}: {message}")]
    ParseError { line: usize, message: String },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("no sample point lies inside the panel")]
    EmptyPanel,
    #[error("point set is empty")]
    EmptySet,
    #[error("no sample points provided")]
    EmptySamples,
    #[error("meshes do not share topology")]
    TopologyMismatch,
    #[error("skin weight row {0} is not a probability simplex")]
    BadWeightRow(usize),
    #[error("rest triangle {0} is degenerate")]
    DegenerateRestTriangle(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
