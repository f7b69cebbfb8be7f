use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("sensitive value {0} has no records")]
    EmptyGroup(usize),
    #[error("label {0:?} is not binary")]
    NonBinaryLabel(String),
    #[error("Pr(Y = 1) is zero; relative unfairness is undefined")]
    ZeroPositiveRate,
    #[error("epsilon must be a positive finite number, got {0}")]
    InvalidEpsilon(f64),
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("invalid mechanism: {0}")]
    InvalidMechanism(String),
    #[error("perturbed value {0} has zero probability mass")]
    DegenerateOutput(usize),
    #[error("mechanism alphabet has {mechanism} values but the dataset has {dataset}")]
    AlphabetMismatch { mechanism: usize, dataset: usize },
    #[error("data unfairness metrics are not defined on subset-valued sensitive columns")]
    SubsetOutput,
    #[error("all groups share the same positive rate; the unfairness ratio is undefined")]
    ZeroBaseUnfairness,
    #[error("expected a binary sensitive attribute, got k = {0}")]
    NotBinary(usize),
    #[error("no mechanism satisfies epsilon = {epsilon} together with utility budget zeta = {zeta}")]
    InfeasibleBudget { epsilon: f64, zeta: f64 },
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("problem too large for exhaustive search: {0}")]
    TooLarge(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("training set needs at least two records of each class")]
    SingleClassTrainingSet,
    #[error("training loss became non-finite")]
    NonFiniteLoss,
    #[error("{rate} is undefined for group {group}")]
    UndefinedRate { group: usize, rate: &'static str },
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("missing column {0:?}")]
    MissingColumn(String),
    #[error("cannot parse cell at row {row}, column {column:?}")]
    UnparseableCell { row: usize, column: String },
    #[error("input file has no data rows")]
    EmptyFile,
    #[error("I/O error: {0}")]
    Io(String),
    #[error("JSON error: {0}")]
    Json(String),
    #[error("verification failed: {0}")]
    VerificationFailed(String),
}

impl Error {
    /// Process exit status for command-line front ends: 2 for configuration
    /// problems, 3 when the budget admits no mechanism, 4 for data problems,
    /// 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        use Error::*;
        match self {
            InvalidEpsilon(_) | InvalidConfig(_) | InvalidMechanism(_) | TooLarge(_) | Json(_) => 2,
            InfeasibleBudget { .. } => 3,
            EmptyGroup(_) | NonBinaryLabel(_) | ZeroPositiveRate | InvalidDistribution(_) | DegenerateOutput(_)
            | AlphabetMismatch { .. } | SubsetOutput | ZeroBaseUnfairness | NotBinary(_) | SingleClassTrainingSet
            | UndefinedRate { .. } | SchemaMismatch(_) | MissingColumn(_) | UnparseableCell { .. } | EmptyFile
            | Io(_) => 4,
            NumericalFailure(_) | NonFiniteLoss | VerificationFailed(_) => 1,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Json(e.to_string())
    }
}
