//! Exit-code classification.

use std::fmt;
use std::io::ErrorKind;
use std::path::Path;

use sumdistill::config::ConfigError;
use sumdistill::corpus::CorpusError;
use sumdistill::evaluation::EvaluationError;
use sumdistill::model::ModelError;
use sumdistill::teacher::TeacherError;
use sumdistill::trainer::TrainerError;

pub const OTHER: u8 = 1;
pub const CONFIG: u8 = 2;
pub const UPSTREAM: u8 = 3;
pub const ABORT: u8 = 4;
pub const MISSING_INPUT: u8 = 5;

/// An error tagged with the process exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

impl std::error::Error for Failure {}

pub fn failure(code: u8, error: impl Into<anyhow::Error>) -> anyhow::Error {
    anyhow::Error::new(Failure {
        code,
        error: error.into(),
    })
}

pub fn code_of(error: &anyhow::Error) -> u8 {
    error.downcast_ref::<Failure>().map_or(OTHER, |f| f.code)
}

/// Fail with `MISSING_INPUT` unless `path` exists.
pub fn require(path: &Path, what: &str) -> anyhow::Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(failure(MISSING_INPUT, anyhow::anyhow!("missing {what}: {}", path.display())))
    }
}

fn io_code(e: &std::io::Error) -> u8 {
    if e.kind() == ErrorKind::NotFound {
        MISSING_INPUT
    } else {
        OTHER
    }
}

pub fn corpus(e: CorpusError) -> anyhow::Error {
    let code = match &e {
        CorpusError::Io { source, .. } => io_code(source),
        _ => OTHER,
    };
    failure(code, e)
}

pub fn config(e: ConfigError) -> anyhow::Error {
    let code = match &e {
        ConfigError::Read { source, .. } if source.kind() == ErrorKind::NotFound => MISSING_INPUT,
        _ => CONFIG,
    };
    failure(code, e)
}

pub fn teacher(e: TeacherError) -> anyhow::Error {
    let code = match &e {
        TeacherError::Config(_) | TeacherError::MissingApiKey { .. } | TeacherError::InvalidInput(_) => CONFIG,
        TeacherError::Transport { .. }
        | TeacherError::EmptyCompletion { .. }
        | TeacherError::Unparseable { .. }
        | TeacherError::IdenticalOutput { .. }
        | TeacherError::Scoring { .. } => UPSTREAM,
        TeacherError::FailureThreshold { .. } => ABORT,
        TeacherError::Io { source, .. } => io_code(source),
        TeacherError::Corpus(CorpusError::Io { source, .. }) => io_code(source),
        TeacherError::Corpus(_) => OTHER,
    };
    failure(code, e)
}

pub fn evaluation(e: EvaluationError) -> anyhow::Error {
    let code = match &e {
        EvaluationError::Io { source, .. } => io_code(source),
        EvaluationError::Corpus(CorpusError::Io { source, .. }) => io_code(source),
        EvaluationError::SchemaMismatch { .. } => CONFIG,
        _ => OTHER,
    };
    failure(code, e)
}

pub fn model(e: ModelError) -> anyhow::Error {
    failure(OTHER, e)
}

pub fn trainer(e: TrainerError) -> anyhow::Error {
    let code = match &e {
        TrainerError::Config(_)
        | TrainerError::Insufficient { .. }
        | TrainerError::EmptyCandidates { .. }
        | TrainerError::NoInstances
        | TrainerError::TooManyDialogues { .. } => CONFIG,
        TrainerError::NonFinite { .. } | TrainerError::Objective { .. } => ABORT,
        TrainerError::Corpus(CorpusError::Io { source, .. }) => io_code(source),
        TrainerError::Evaluation(EvaluationError::Io { source, .. }) => io_code(source),
        _ => OTHER,
    };
    failure(code, e)
}
