use thiserror::Error;

pub type Result<T> = std::result::Result<T, TpisError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TpisError {
    #[error("feature set {0} requires layer-2 meta-features but none were supplied")]
    MissingMetaFeatures(&'static str),

    #[error("invalid feature value for `{field}`: {reason}")]
    InvalidFeature { field: String, reason: String },

    #[error("duplicate patient id `{0}`")]
    DuplicateId(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("need at least {needed} non-missing values, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("column {0} is missing in every row and cannot be imputed")]
    UnimputableColumn(usize),

    #[error("row {0} has no observed feature")]
    EmptyRow(usize),

    #[error("class {label} has {available} records, {requested} requested for training")]
    InsufficientClassSize {
        label: &'static str,
        available: usize,
        requested: usize,
    },

    #[error("labels contain a single class")]
    DegenerateLabels,

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeError { expected: usize, got: usize },

    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparameter(String),

    #[error("fold {0} does not contain both classes")]
    DegenerateFold(usize),

    #[error("invalid fold count {0}: need at least 2")]
    InvalidFolds(usize),

    #[error("layer needs at least {needed} learners, got {got}")]
    LayerTooSmall { needed: usize, got: usize },

    #[error("invalid confidence policy: {0}")]
    InvalidPolicy(String),

    #[error("step-2 features unavailable{}", .0.as_ref().map(|id| format!(" for patient `{id}`")).unwrap_or_default())]
    StepTwoUnavailable(Option<String>),

    #[error("record `{0}` has no label")]
    MissingLabel(String),

    #[error("invalid table: {0}")]
    InvalidTable(String),

    #[error("evaluation over zero records")]
    EmptyEvaluation,

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("empty recipe list")]
    EmptyRecipeList,

    #[error("invalid cohort spec: {0}")]
    SpecError(String),

    #[error("schema error: {0}")]
    SchemaError(String),

    #[error("cell error at row {row}, column `{column}`: {reason}")]
    CellError {
        row: usize,
        column: String,
        reason: String,
    },

    #[error("archive format version {found} is not supported (this build reads version {supported})")]
    VersionError { found: u64, supported: u64 },

    #[error("corrupted model archive: {0}")]
    ArchiveError(String),

    #[error("invalid configuration: {0}")]
    ConfigError(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for TpisError {
    fn from(err: std::io::Error) -> Self {
        TpisError::Io(err.to_string())
    }
}

impl TpisError {
    /// Coarse class used for diagnostics: `data`, `model`, `config`, `io`
    /// or `pipeline`.
    pub fn class(&self) -> &'static str {
        use TpisError::*;
        match self {
            InvalidFeature { .. } | DuplicateId(_) | EmptyDataset | MissingLabel(_) | SchemaError(_)
            | CellError { .. } | StepTwoUnavailable(_) | InsufficientClassSize { .. } => "data",
            VersionError { .. } | ArchiveError(_) | ShapeError { .. } | MissingMetaFeatures(_) => "model",
            InvalidHyperparameter(_) | InvalidPolicy(_) | InvalidFolds(_) | LayerTooSmall { .. } | SpecError(_)
            | ConfigError(_) | EmptyRecipeList | InvalidTable(_) => "config",
            Io(_) => "io",
            InsufficientData { .. } | UnimputableColumn(_) | EmptyRow(_) | DegenerateLabels | DegenerateFold(_)
            | EmptyEvaluation | LengthMismatch { .. } => "pipeline",
        }
    }
}
