use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DomainError {
    #[error("unknown {kind} label `{value}`")]
    UnknownLabel { kind: &'static str, value: String },
    #[error("definition catalog line {line}: {message}")]
    MalformedCatalog { line: usize, message: String },
    #[error("definition catalog is missing labels: {}", missing.join(", "))]
    IncompleteCatalog { missing: Vec<String> },
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: {source}")]
    UnknownLabel {
        line: usize,
        #[source]
        source: DomainError,
    },
    #[error("line {line}: role `{role}` does not belong to foundation `{foundation}`")]
    RoleMismatch {
        line: usize,
        role: String,
        foundation: String,
    },
    #[error("line {line}: empty entity span")]
    EmptySpan { line: usize },
    #[error("duplicate item id `{id}`")]
    DuplicateId { id: String },
    #[error("class `{class}` has {available} items, {requested} requested")]
    InsufficientItems {
        class: String,
        available: usize,
        requested: usize,
    },
    #[error("unknown item id `{id}` in manifest")]
    UnknownId { id: String },
}

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("target text is empty")]
    EmptyTarget,
    #[error("entity span is empty")]
    EmptyEntity,
    #[error("prompt needs ~{estimate} tokens, budget is {budget}")]
    BudgetExceeded { estimate: usize, budget: usize },
    #[error("tie-break needs two distinct foundations, got `{0}` twice")]
    SameFoundation(String),
    #[error("template `{name}`: {message}")]
    Template { name: String, message: String },
    #[error("cannot read template {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("service returned an error (status {status}): {message}")]
    Service { status: u16, message: String },
    #[error("service response could not be decoded: {0}")]
    Decode(String),
    #[error("service returned {got} completions, expected {expected}")]
    ShortResponse { expected: usize, got: usize },
    #[error("no scripted completion for prompt {prompt_hash} seed {seed} sample {sample_index}")]
    MissingKey {
        prompt_hash: String,
        seed: u64,
        sample_index: u32,
    },
    #[error("invalid generation config: {0}")]
    InvalidConfig(String),
    #[error("cache I/O at {path}: {source}")]
    Cache {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("transcript line {line}: {message}")]
    Transcript { line: usize, message: String },
}

impl ClientError {
    /// Whether a retry of the same idempotent request could succeed.
    pub fn is_retryable(&self) -> bool {
        match self {
            ClientError::Transport { .. } => true,
            ClientError::Service { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("all {total} generations abstained ({stage})")]
    AllAbstained { stage: String, total: usize },
    #[error(
        "zero-shot prompting is not supported for role tasks: unconstrained generations \
         cannot be mapped to the closed role set; use k >= 1"
    )]
    ZeroShotRole,
    #[error("no parseable slot structure in any of {0} generations")]
    NoSlotStructure(usize),
    #[error("no predicted foundation for item `{0}`")]
    MissingFoundation(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Client(#[from] ClientError),
}

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("cannot score an empty prediction list")]
    Empty,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Top-level error used by the run orchestration and the command line.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("prediction file: {0}")]
    Predictions(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("{0} item(s) failed on the completion endpoint")]
    EndpointFailures(usize),
}

/// Failure classes the command line maps onto exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureClass {
    Config,
    Data,
    Transport,
}

impl FailureClass {
    pub fn exit_code(self) -> i32 {
        match self {
            FailureClass::Config => 2,
            FailureClass::Data => 3,
            FailureClass::Transport => 4,
        }
    }
}

impl Error {
    pub fn class(&self) -> FailureClass {
        match self {
            Error::Config(_) | Error::Prompt(_) => FailureClass::Config,
            Error::Pipeline(PipelineError::ZeroShotRole) => FailureClass::Config,
            Error::Pipeline(PipelineError::Prompt(_)) => FailureClass::Config,
            Error::Client(ClientError::InvalidConfig(_)) => FailureClass::Config,
            Error::Client(ClientError::Transcript { .. }) => FailureClass::Data,
            Error::Client(_) | Error::Pipeline(PipelineError::Client(_)) => {
                FailureClass::Transport
            }
            Error::EndpointFailures(_) => FailureClass::Transport,
            Error::Domain(_)
            | Error::Corpus(_)
            | Error::Pipeline(_)
            | Error::Metrics(_)
            | Error::Predictions(_)
            | Error::Io { .. } => FailureClass::Data,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
