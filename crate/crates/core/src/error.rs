use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DlnError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("numerical overflow at coordinate {coordinate}: {what}")]
    Overflow { coordinate: usize, what: String },
    #[error("contour violation: |{which}_{coordinate}| = {value} >= M = {m}")]
    ContourViolation {
        which: char,
        coordinate: usize,
        value: f64,
        m: f64,
    },
    #[error("quadrature failure: imaginary residue {residue:e} exceeds {threshold:e}")]
    Quadrature { residue: f64, threshold: f64 },
    #[error("model violation: {0}")]
    ModelViolation(String),
    #[error("insufficient resolution: {0}")]
    Resolution(String),
    #[error("grid alignment: {0}")]
    Alignment(String),
    #[error("saddle contact at t={t}, coordinate {coordinate}")]
    SaddleContact { t: f64, coordinate: usize },
    #[error("empty admissible window: {0}")]
    EmptyWindow(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(String),
}

impl DlnError {
    /// CLI exit code: 2 for configuration problems, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            DlnError::Parameter(_)
            | DlnError::Config(_)
            | DlnError::Dimension(_)
            | DlnError::Io(_) => 2,
            _ => 3,
        }
    }
}

impl From<std::io::Error> for DlnError {
    fn from(e: std::io::Error) -> Self {
        DlnError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, DlnError>;
