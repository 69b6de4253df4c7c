use std::path::PathBuf;

/// Errors produced by the core library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("unknown token `{0}`")]
    UnknownToken(String),

    #[error("prompt has {len} tokens, limit is {max}")]
    PromptTooLong { len: usize, max: usize },

    #[error("non-finite value in {what}")]
    NonFinite { what: String },

    #[error("non-finite activation in layer {layer}")]
    LayerNan { layer: usize },

    #[error("non-finite velocity at sampling step {step}")]
    SamplerNan { step: usize },

    #[error("non-finite loss at training step {step}; state dumped to {dump:?}")]
    LossNan { step: u64, dump: Option<PathBuf> },

    #[error("missing config key `{0}`")]
    MissingKey(String),

    #[error("config key `{key}`: {msg}")]
    BadKey { key: String, msg: String },

    #[error("stage order violation: {0}")]
    StageOrder(String),

    #[error("ambiguous or missing referent: {0}")]
    Referent(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by numerical blow-up rather than bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NonFinite { .. } | Error::LayerNan { .. } | Error::SamplerNan { .. } | Error::LossNan { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
