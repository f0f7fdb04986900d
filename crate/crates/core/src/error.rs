use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("case {id}: invalid field `{field}`: {reason}")]
    CaseValidation {
        id: String,
        field: String,
        reason: String,
    },

    #[error("duplicate case id {0}")]
    DuplicateCase(u64),

    #[error("cost table: {0}")]
    CostTable(String),

    #[error("config: {0}")]
    Config(String),

    #[error("usage: {0}")]
    Usage(String),

    #[error("environment error at turn {turn}: {source}")]
    Environment {
        turn: u32,
        #[source]
        source: Box<Error>,
    },

    #[error("grounding violation: examination output is not found in the case file: {0:?}")]
    Grounding(String),

    #[error("template `{template}`: {reason}")]
    Template { template: String, reason: String },

    #[error("transport error: {0}")]
    Transport(String),

    #[error("scripted fixture has no response for key {key}")]
    ScriptMiss { key: String },

    #[error("request contract violated: {0}")]
    Contract(String),

    #[error("manifest: {0}")]
    Manifest(String),

    #[error("action reply rejected ({code}): {detail}")]
    ActionParse { code: &'static str, detail: String },

    #[error("judge output: {0}")]
    JudgeParse(String),

    #[error("grader output: {0}")]
    GraderParse(String),

    #[error("evolver output: {0}")]
    EvolverParse(String),

    #[error("memory: {0}")]
    Memory(String),

    #[error("belief: {0}")]
    Belief(String),

    #[error("metrics: {0}")]
    Metrics(String),

    #[error("replay refused: {0}")]
    ReplayRefused(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn at_turn(self, turn: u32) -> Self {
        Error::Environment {
            turn,
            source: Box::new(self),
        }
    }
}

pub(crate) fn read_to_string(path: &std::path::Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_string(path: &std::path::Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}
