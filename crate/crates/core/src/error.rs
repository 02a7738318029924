use thiserror::Error;

/// Errors raised by the forward model, the samplers and the experiment runner.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("degenerate dose: {0}")]
    DegenerateDose(String),

    #[error("zero detected mass: the detector receives no gamma flux")]
    ZeroMass,

    #[error("configurations are indistinguishable (zero divergence)")]
    ZeroDivergence,

    #[error("every particle has zero likelihood for the observed data")]
    WeightCollapse,

    #[error("quadrature failed to converge: {0}")]
    Quadrature(String),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Process exit code used by the CLI for this class of failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::InvalidParams(_) | Error::InvalidGeometry(_) => 2,
            Error::Io { .. } => 4,
            _ => 3,
        }
    }

    /// Short machine-readable error class.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::InvalidParams(_) => "invalid_params",
            Error::InvalidGeometry(_) => "invalid_geometry",
            Error::DegenerateDose(_) => "degenerate_dose",
            Error::ZeroMass => "zero_mass",
            Error::ZeroDivergence => "zero_divergence",
            Error::WeightCollapse => "weight_collapse",
            Error::Quadrature(_) => "quadrature",
            Error::Config { .. } => "config",
            Error::Io { .. } => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
