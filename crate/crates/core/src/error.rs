use thiserror::Error;

pub type Result<T, E = HemoError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum HemoError {
    #[error("{module}: {message}")]
    Domain {
        module: &'static str,
        message: String,
    },

    #[error("time step {dt:.3e} s exceeds CFL limit {limit:.3e} s")]
    StepSize { dt: f64, limit: f64 },

    #[error("non-positive area in segment '{segment}' cell {cell} at t = {time:.6} s")]
    Stability {
        segment: String,
        cell: usize,
        time: f64,
    },

    #[error("junction at '{parent}' did not converge after {iterations} iterations (residual {residual:.3e})")]
    Coupling {
        parent: String,
        iterations: usize,
        residual: f64,
    },

    #[error("{attempts} consecutive prior draws violated heart-function invariants")]
    PriorInconsistency { attempts: usize },

    #[error("degenerate signal: {0}")]
    DegenerateSignal(String),

    #[error("non-finite loss in batch containing samples {indices:?}")]
    NonFiniteLoss { indices: Vec<usize> },

    #[error("format error in {path}: {message}")]
    Format { path: String, message: String },

    #[error("digest mismatch for {path}: {message}")]
    DigestMismatch { path: String, message: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl HemoError {
    pub fn domain(module: &'static str, message: impl Into<String>) -> Self {
        HemoError::Domain {
            module,
            message: message.into(),
        }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        HemoError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub fn format(path: impl AsRef<std::path::Path>, message: impl Into<String>) -> Self {
        HemoError::Format {
            path: path.as_ref().display().to_string(),
            message: message.into(),
        }
    }

    /// Owning module, used in the `ERROR:<module>:<code>` line printed by the CLI.
    pub fn module(&self) -> &'static str {
        match self {
            HemoError::Domain { module, .. } => module,
            HemoError::StepSize { .. } | HemoError::Stability { .. } | HemoError::Coupling { .. } => {
                "solver"
            }
            HemoError::PriorInconsistency { .. } => "population",
            HemoError::DegenerateSignal(_) => "signal_pipeline",
            HemoError::NonFiniteLoss { .. } => "npe",
            HemoError::Format { .. } | HemoError::DigestMismatch { .. } | HemoError::Io { .. } => "io",
            HemoError::Json(_) => "config",
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            HemoError::Domain { .. } => "domain",
            HemoError::StepSize { .. } => "step_size",
            HemoError::Stability { .. } => "stability",
            HemoError::Coupling { .. } => "coupling",
            HemoError::PriorInconsistency { .. } => "prior_inconsistency",
            HemoError::DegenerateSignal(_) => "degenerate_signal",
            HemoError::NonFiniteLoss { .. } => "non_finite_loss",
            HemoError::Format { .. } => "format",
            HemoError::DigestMismatch { .. } => "digest_mismatch",
            HemoError::Io { .. } => "io",
            HemoError::Json(_) => "json",
        }
    }
}
