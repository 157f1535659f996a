use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value violates a model assumption. `field` is a
    /// dotted path such as `regimes[1].lambda`.
    #[error("configuration error in `{field}`: {message}")]
    Config { field: String, message: String },

    /// Malformed or mistyped configuration document.
    #[error("configuration parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    /// Argument outside the domain of a coefficient or grid lookup.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    /// Stable machine-readable code, used as the CLI exit status family.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Config { .. } => "E_CONFIG",
            Error::Parse { .. } => "E_PARSE",
            Error::Domain(_) => "E_DOMAIN",
            Error::Numeric(_) => "E_NUMERIC",
            Error::Io(_) => "E_IO",
        }
    }
}
