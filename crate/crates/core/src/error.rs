use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("singular value decomposition did not converge")]
    SingularDecompositionFailure,
    #[error("eigenvalue computation did not converge")]
    EigenFailure,
    #[error("matrix is not unimodular: det = {0}")]
    NotUnimodular(f64),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("index {index} out of range 1..={bound}")]
    IndexOutOfRange { index: usize, bound: usize },
    #[error("root subset must be nonempty")]
    EmptyRootSubset,
    #[error("singular linear system while projecting onto a_theta")]
    SingularSystem,
    #[error("singular value gap alpha_{0} vanishes; U_theta is undefined")]
    DegenerateGap(usize),
    #[error("flag pair is not transverse")]
    NotTransverse,
    #[error("transverse pair carries no witness")]
    NoWitness,
    #[error("QR factorization failed")]
    FactorizationFailure,
    #[error("hash dedup collapsed {collapsed} of {candidates} candidate words")]
    DiscretenessSuspect { collapsed: usize, candidates: usize },
    #[error("regression window holds only {distinct} distinct values (need 8)")]
    InsufficientRange { distinct: usize },
    #[error("no orbit element admits U_theta")]
    AllDegenerate,
    #[error("insufficient matched shadow mass")]
    InsufficientMatchedMass,
    #[error("no transverse atom pairs")]
    NoTransversePairs,
    #[error("points coincide")]
    CoincidentPoints,
    #[error("point is not interior to the domain")]
    NotInterior,
    #[error("generator {0} does not preserve the domain")]
    DomainNotPreserved(String),
    #[error("geodesic ray leaves the representable domain at t = {0}")]
    RayExit(f64),
    #[error("invalid domain: {0}")]
    InvalidDomain(String),
    #[error("premise violated: {0}")]
    PremiseViolation(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("unknown fixture `{0}`")]
    UnknownFixture(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable tag, used in CLI error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::SingularDecompositionFailure => "SingularDecompositionFailure",
            Error::EigenFailure => "EigenFailure",
            Error::NotUnimodular(_) => "NotUnimodular",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::IndexOutOfRange { .. } => "IndexOutOfRange",
            Error::EmptyRootSubset => "EmptyRootSubset",
            Error::SingularSystem => "SingularSystem",
            Error::DegenerateGap(_) => "DegenerateGap",
            Error::NotTransverse => "NotTransverse",
            Error::NoWitness => "NoWitness",
            Error::FactorizationFailure => "FactorizationFailure",
            Error::DiscretenessSuspect { .. } => "DiscretenessSuspect",
            Error::InsufficientRange { .. } => "InsufficientRange",
            Error::AllDegenerate => "AllDegenerate",
            Error::InsufficientMatchedMass => "InsufficientMatchedMass",
            Error::NoTransversePairs => "NoTransversePairs",
            Error::CoincidentPoints => "CoincidentPoints",
            Error::NotInterior => "NotInterior",
            Error::DomainNotPreserved(_) => "DomainNotPreserved",
            Error::RayExit(_) => "RayExit",
            Error::InvalidDomain(_) => "InvalidDomain",
            Error::PremiseViolation(_) => "PremiseViolation",
            Error::InvalidInput(_) => "InvalidInput",
            Error::UnknownFixture(_) => "UnknownFixture",
            Error::Io(_) => "Io",
            Error::Json(_) => "Json",
        }
    }
}
