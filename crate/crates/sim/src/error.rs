use std::path::PathBuf;

use serde_json::json;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid config field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("{}{}: {message}", path.display(), line.map(|l| format!(" line {l}")).unwrap_or_default())]
    Csv {
        path: PathBuf,
        line: Option<u64>,
        message: String,
    },

    #[error("round {round} is not in the bundle (rounds 1..={available})")]
    MissingRound { round: usize, available: usize },

    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] hdpfl_core::Error),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

impl HarnessError {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        HarnessError::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn kind(&self) -> &'static str {
        use hdpfl_core::Error as E;
        match self {
            HarnessError::Io { .. } => "io",
            HarnessError::Config { .. } => "config",
            HarnessError::Csv { .. } => "csv",
            HarnessError::MissingRound { .. } => "missing_round",
            HarnessError::Usage(_) => "usage",
            HarnessError::Core(e) => match e {
                E::Shape(_) | E::DimensionMismatch { .. } => "shape",
                E::NonFinite(_) => "non_finite",
                E::InvalidParameter { .. } => "invalid_parameter",
                E::Empty(_) => "empty",
                E::CalibrationInfeasible { .. } | E::ClientsInfeasible(_) => "calibration_infeasible",
                E::UnknownDistribution(_) => "unknown_distribution",
                E::InfeasibleSplit(_) => "infeasible_split",
                E::Ledger(_) => "ledger",
            },
        }
    }

    /// The offending field or parameter, when there is one.
    pub fn field(&self) -> Option<String> {
        match self {
            HarnessError::Config { field, .. } => Some(field.clone()),
            HarnessError::Core(hdpfl_core::Error::InvalidParameter { name, .. }) => Some((*name).to_string()),
            _ => None,
        }
    }

    /// Machine-readable form written to stderr by the binary.
    pub fn to_json(&self) -> serde_json::Value {
        let mut body = json!({ "kind": self.kind(), "message": self.to_string() });
        if let Some(f) = self.field() {
            body["field"] = f.into();
        }
        if let HarnessError::Core(hdpfl_core::Error::ClientsInfeasible(ids)) = self {
            body["clients"] = json!(ids);
        }
        json!({ "error": body })
    }
}
