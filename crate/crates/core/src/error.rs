//! Stable error codes and positioned diagnostics.
//!
//! Every failure surfaced by the library carries an [`ErrorCode`]. The codes
//! are part of the public contract: the CLI prints them, the HTTP service
//! returns them, and tests match on them.

use std::fmt;

use serde::Serialize;

/// Stable, machine-readable error codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum ErrorCode {
    #[serde(rename = "E_PARSE")]
    Parse,
    #[serde(rename = "E_DUPLICATE_NAME")]
    DuplicateName,
    #[serde(rename = "E_NO_SITUATION")]
    NoSituation,
    #[serde(rename = "E_UNKNOWN_TYPE")]
    UnknownType,
    #[serde(rename = "E_UNKNOWN_CLASS")]
    UnknownClass,
    #[serde(rename = "E_INFINITE_TYPE")]
    InfiniteType,
    #[serde(rename = "E_MAP")]
    Map,
    #[serde(rename = "E_DAG")]
    Dag,
    #[serde(rename = "E_ANNOT_TYPE")]
    AnnotType,
    #[serde(rename = "E_MISSING_ANNOT")]
    MissingAnnot,
    #[serde(rename = "E_UNUSED_PARENT")]
    UnusedParent,
    #[serde(rename = "E_CPT")]
    Cpt,
    #[serde(rename = "E_CYCLE_IN_HIERARCHY")]
    CycleInHierarchy,
    #[serde(rename = "E_OVERRIDE_TYPE")]
    OverrideType,
    #[serde(rename = "E_MISSING_OUTPUT")]
    MissingOutput,
    #[serde(rename = "E_INTERFACE_MISMATCH")]
    InterfaceMismatch,
    #[serde(rename = "E_UNKNOWN_OUTPUT")]
    UnknownOutput,
    #[serde(rename = "E_RECURSION")]
    Recursion,
    #[serde(rename = "E_TYPE_COMPAT")]
    TypeCompat,
    #[serde(rename = "E_BAD_CHAIN")]
    BadChain,
    #[serde(rename = "E_UNBOUND_INPUT")]
    UnboundInput,
    #[serde(rename = "E_TOO_LARGE")]
    TooLarge,
    #[serde(rename = "E_ZERO_PROB")]
    ZeroProb,
    #[serde(rename = "E_COVERAGE")]
    Coverage,
    #[serde(rename = "E_NOT_CALIBRATED")]
    NotCalibrated,
    #[serde(rename = "E_BAD_VALUE")]
    BadValue,
    #[serde(rename = "E_INCOMPATIBLE_CLASS")]
    IncompatibleClass,
    #[serde(rename = "E_UNKNOWN_PATH")]
    UnknownPath,
    #[serde(rename = "E_EVIDENCE_ORPHANED")]
    EvidenceOrphaned,
    #[serde(rename = "E_USAGE")]
    Usage,
    #[serde(rename = "E_IO")]
    Io,
}

impl ErrorCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::Parse => "E_PARSE",
            ErrorCode::DuplicateName => "E_DUPLICATE_NAME",
            ErrorCode::NoSituation => "E_NO_SITUATION",
            ErrorCode::UnknownType => "E_UNKNOWN_TYPE",
            ErrorCode::UnknownClass => "E_UNKNOWN_CLASS",
            ErrorCode::InfiniteType => "E_INFINITE_TYPE",
            ErrorCode::Map => "E_MAP",
            ErrorCode::Dag => "E_DAG",
            ErrorCode::AnnotType => "E_ANNOT_TYPE",
            ErrorCode::MissingAnnot => "E_MISSING_ANNOT",
            ErrorCode::UnusedParent => "E_UNUSED_PARENT",
            ErrorCode::Cpt => "E_CPT",
            ErrorCode::CycleInHierarchy => "E_CYCLE_IN_HIERARCHY",
            ErrorCode::OverrideType => "E_OVERRIDE_TYPE",
            ErrorCode::MissingOutput => "E_MISSING_OUTPUT",
            ErrorCode::InterfaceMismatch => "E_INTERFACE_MISMATCH",
            ErrorCode::UnknownOutput => "E_UNKNOWN_OUTPUT",
            ErrorCode::Recursion => "E_RECURSION",
            ErrorCode::TypeCompat => "E_TYPE_COMPAT",
            ErrorCode::BadChain => "E_BAD_CHAIN",
            ErrorCode::UnboundInput => "E_UNBOUND_INPUT",
            ErrorCode::TooLarge => "E_TOO_LARGE",
            ErrorCode::ZeroProb => "E_ZERO_PROB",
            ErrorCode::Coverage => "E_COVERAGE",
            ErrorCode::NotCalibrated => "E_NOT_CALIBRATED",
            ErrorCode::BadValue => "E_BAD_VALUE",
            ErrorCode::IncompatibleClass => "E_INCOMPATIBLE_CLASS",
            ErrorCode::UnknownPath => "E_UNKNOWN_PATH",
            ErrorCode::EvidenceOrphaned => "E_EVIDENCE_ORPHANED",
            ErrorCode::Usage => "E_USAGE",
            ErrorCode::Io => "E_IO",
        }
    }
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A 1-based source position.
///
/// Positions never participate in structural equality: two AST nodes that
/// differ only in where they were written compare equal.
#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct Pos {
    pub line: u32,
    pub col: u32,
}

impl Pos {
    pub fn new(line: u32, col: u32) -> Self {
        Pos { line, col }
    }

    pub fn is_known(&self) -> bool {
        self.line > 0
    }
}

impl PartialEq for Pos {
    fn eq(&self, _: &Pos) -> bool {
        true
    }
}

impl Eq for Pos {}

/// One problem found in a model, with an optional source position.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub code: ErrorCode,
    pub message: String,
    pub line: u32,
    pub col: u32,
}

impl Diagnostic {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        Diagnostic { code, message: message.into(), line: 0, col: 0 }
    }

    pub fn at(code: ErrorCode, pos: Pos, message: impl Into<String>) -> Self {
        Diagnostic { code, message: message.into(), line: pos.line, col: pos.col }
    }

    /// Renders `file:line:col: CODE message`.
    pub fn render(&self, file: &str) -> String {
        format!("{}:{}:{}: {} {}", file, self.line, self.col, self.code, self.message)
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {} {}", self.line, self.col, self.code, self.message)
    }
}

/// The library-wide error type.
#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("{code} {message}")]
    Coded { code: ErrorCode, message: String },
    #[error("{} diagnostic(s), first: {}", .0.len(), .0.first().map(|d| d.to_string()).unwrap_or_default())]
    Diagnostics(Vec<Diagnostic>),
}

impl Error {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        Error::Coded { code, message: message.into() }
    }

    /// The primary code (the first diagnostic's code for a diagnostic list).
    pub fn code(&self) -> ErrorCode {
        match self {
            Error::Coded { code, .. } => *code,
            Error::Diagnostics(d) => d.first().map(|d| d.code).unwrap_or(ErrorCode::Parse),
        }
    }

    pub fn diagnostics(&self) -> Vec<Diagnostic> {
        match self {
            Error::Coded { code, message } => vec![Diagnostic::new(*code, message.clone())],
            Error::Diagnostics(d) => d.clone(),
        }
    }

    pub fn has_code(&self, code: ErrorCode) -> bool {
        match self {
            Error::Coded { code: c, .. } => *c == code,
            Error::Diagnostics(d) => d.iter().any(|d| d.code == code),
        }
    }
}

impl From<Diagnostic> for Error {
    fn from(d: Diagnostic) -> Self {
        Error::Diagnostics(vec![d])
    }
}

impl From<Vec<Diagnostic>> for Error {
    fn from(d: Vec<Diagnostic>) -> Self {
        Error::Diagnostics(d)
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn err<T>(code: ErrorCode, message: impl Into<String>) -> Result<T> {
    Err(Error::new(code, message))
}
