use thiserror::Error;

/// Errors produced anywhere in the decoupling pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Two objects that must agree in size do not.
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    /// A parameter violates its documented precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Two samples project onto (numerically) the same axis location, so the
    /// finite-difference weights are undefined.
    #[error("degenerate axis{}: points {first} and {second} coincide", branch_label(.branch))]
    DegenerateAxis {
        branch: Option<usize>,
        first: usize,
        second: usize,
    },

    /// A branch axis has collapsed so that the polynomial fit is meaningless.
    #[error("ill-conditioned branch fit for branch {branch}: {reason}")]
    IllConditioned { branch: usize, reason: String },

    /// A quantity required for normalization is zero.
    #[error("undefined relative measure: {0}")]
    Undefined(String),

    /// The solver could not produce a usable result.
    #[error("solver failure: {0}")]
    Solver(String),

    /// A configuration or data file is malformed.
    #[error("validation error in `{field}`: {message}")]
    Validation { field: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn branch_label(branch: &Option<usize>) -> String {
    match branch {
        Some(i) => format!(" on branch {i}"),
        None => String::new(),
    }
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            message: message.into(),
        }
    }

    /// A malformed JSON document, as a validation error naming the
    /// offending field when serde reports one.
    pub(crate) fn from_json(e: serde_json::Error) -> Self {
        let message = e.to_string();
        // serde quotes field names in backticks: "missing field `rank`"
        let field = message
            .split('`')
            .nth(1)
            .filter(|f| !f.is_empty())
            .unwrap_or("document")
            .to_string();
        Error::Validation { field, message }
    }

    /// Attach a branch index to a degenerate-axis error.
    pub(crate) fn on_branch(self, i: usize) -> Self {
        match self {
            Error::DegenerateAxis { first, second, .. } => Error::DegenerateAxis {
                branch: Some(i),
                first,
                second,
            },
            other => other,
        }
    }

    /// Short machine-readable tag used by the CLI.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension { .. } => "dimension",
            Error::InvalidInput(_) => "invalid_input",
            Error::DegenerateAxis { .. } => "degenerate_axis",
            Error::IllConditioned { .. } => "ill_conditioned",
            Error::Undefined(_) => "undefined",
            Error::Solver(_) => "solver",
            Error::Validation { .. } => "validation",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_dim(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::Dimension {
            context,
            expected,
            actual,
        })
    }
}
