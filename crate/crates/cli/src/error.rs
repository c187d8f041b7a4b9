use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error at `{path}`: {message}")]
    Schema { path: String, message: String },

    #[error("no command given on the command line or in the config")]
    MissingCommand,

    #[error("model `{0}` is not supported by this command")]
    UnsupportedModel(String),

    #[error(transparent)]
    Core(#[from] dmfg::Error),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CliError>;
