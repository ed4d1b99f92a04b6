use std::fmt;
use std::io;

use hetrel::embed::EmbedError;
use hetrel::episodic::{CheckpointError, EpisodicError};
use hetrel::extract::ExtractError;
use hetrel::hetgraph::GraphError;
use hetrel::scenarios::ScenarioError;
use hetrel::synthgen::SynthError;

/// Failure classes; exit code 2 belongs to argument errors reported by clap.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    MissingFile,
    Schema,
    Data,
    Config,
    Internal,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Internal => 1,
            ErrorClass::MissingFile => 3,
            ErrorClass::Schema => 4,
            ErrorClass::Data => 5,
            ErrorClass::Config => 6,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ErrorClass::MissingFile => "missing-file",
            ErrorClass::Schema => "schema",
            ErrorClass::Data => "data",
            ErrorClass::Config => "config",
            ErrorClass::Internal => "internal",
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub class: ErrorClass,
    pub message: String,
}

impl CliError {
    pub fn new(class: ErrorClass, message: impl Into<String>) -> Self {
        Self {
            class,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let one_line = self.message.split_whitespace().collect::<Vec<_>>().join(" ");
        write!(f, "error[{}]: {one_line}", self.class.name())
    }
}

pub type CliResult<T> = Result<T, CliError>;

fn io_class(e: &io::Error) -> ErrorClass {
    if e.kind() == io::ErrorKind::NotFound {
        ErrorClass::MissingFile
    } else {
        ErrorClass::Internal
    }
}

impl From<GraphError> for CliError {
    fn from(e: GraphError) -> Self {
        let class = match &e {
            GraphError::Io { source, .. } => io_class(source),
            GraphError::RelationOverlap(_) => ErrorClass::Data,
            _ => ErrorClass::Schema,
        };
        CliError::new(class, e.to_string())
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Graph(g) => g.into(),
            other => CliError::new(ErrorClass::Config, other.to_string()),
        }
    }
}

fn embed_class(e: &EmbedError) -> ErrorClass {
    match e {
        EmbedError::Io(source) => io_class(source),
        EmbedError::Corrupt(_) => ErrorClass::Schema,
        EmbedError::Dimension(_) => ErrorClass::Config,
        EmbedError::EmptyGraph => ErrorClass::Data,
    }
}

impl From<EmbedError> for CliError {
    fn from(e: EmbedError) -> Self {
        CliError::new(embed_class(&e), e.to_string())
    }
}

impl From<ExtractError> for CliError {
    fn from(e: ExtractError) -> Self {
        let class = match &e {
            ExtractError::Embed(inner) => embed_class(inner),
            ExtractError::Io { source, .. } => io_class(source),
            ExtractError::CacheSchema { .. } => ErrorClass::Schema,
            ExtractError::Config(_) => ErrorClass::Config,
            _ => ErrorClass::Data,
        };
        CliError::new(class, e.to_string())
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        let class = match &e {
            CheckpointError::Io(source) => io_class(source),
            CheckpointError::FingerprintMismatch { .. } => ErrorClass::Config,
            _ => ErrorClass::Schema,
        };
        CliError::new(class, e.to_string())
    }
}

impl From<EpisodicError> for CliError {
    fn from(e: EpisodicError) -> Self {
        match e {
            EpisodicError::Extract(x) => x.into(),
            EpisodicError::Checkpoint(c) => c.into(),
            EpisodicError::Config(msg) => CliError::new(ErrorClass::Config, msg),
            other => CliError::new(ErrorClass::Internal, other.to_string()),
        }
    }
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::Graph(g) => g.into(),
            ScenarioError::Extract(x) => x.into(),
            ScenarioError::Episodic(x) => x.into(),
            ScenarioError::Requirement { .. } => CliError::new(ErrorClass::Data, e.to_string()),
            ScenarioError::Config(_) => CliError::new(ErrorClass::Config, e.to_string()),
            ScenarioError::InsufficientData(_) => CliError::new(ErrorClass::Data, e.to_string()),
            ScenarioError::Io { ref source, .. } => CliError::new(io_class(source), e.to_string()),
            ScenarioError::Schema { .. } => CliError::new(ErrorClass::Schema, e.to_string()),
        }
    }
}

impl CliError {
    /// Prefixes the message with the file it concerns.
    pub fn context(mut self, path: &std::path::Path) -> Self {
        self.message = format!("{}: {}", path.display(), self.message);
        self
    }
}
