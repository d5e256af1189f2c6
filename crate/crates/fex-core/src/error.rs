use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("structural error: {0}")]
    Structural(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("problem `{0}` has no known true solution")]
    MissingTrueSolution(String),

    #[error("unknown builtin problem `{0}`")]
    UnknownProblem(String),

    #[error("no viable candidate survived the search")]
    NoViableCandidate,

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
