use std::path::PathBuf;

use serde_json::json;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid config field `{field}`: {reason}")]
    Config { field: String, reason: String },
    #[error("{path}: {reason}")]
    Io { path: PathBuf, reason: String },
    #[error("data: {0}")]
    Data(String),
    #[error("stage `{stage}` failed for cell {cell}: {reason}")]
    Stage {
        stage: &'static str,
        cell: String,
        reason: String,
    },
    #[error("missing grid cells: {}", .0.join(", "))]
    MissingCells(Vec<String>),
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config { .. } => "config",
            CliError::Io { .. } => "io",
            CliError::Data(_) => "data",
            CliError::Stage { .. } => "stage",
            CliError::MissingCells(_) => "missing-cells",
            CliError::Usage(_) => "usage",
        }
    }

    /// One-line JSON record for the `error:` line printed on failure.
    pub fn to_json(&self) -> String {
        let mut v = json!({ "kind": self.kind(), "message": self.to_string() });
        match self {
            CliError::Config { field, reason } => {
                v["field"] = json!(field);
                v["reason"] = json!(reason);
            }
            CliError::Io { path, .. } => v["path"] = json!(path.display().to_string()),
            CliError::Stage { stage, cell, .. } => {
                v["stage"] = json!(stage);
                v["cell"] = json!(cell);
            }
            CliError::MissingCells(cells) => v["cells"] = json!(cells),
            CliError::Data(_) | CliError::Usage(_) => {}
        }
        v.to_string()
    }

    pub fn stage(stage: &'static str, cell: &str, err: impl std::fmt::Display) -> Self {
        CliError::Stage {
            stage,
            cell: cell.to_string(),
            reason: err.to_string(),
        }
    }

    pub fn io(path: &std::path::Path, err: impl std::fmt::Display) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            reason: err.to_string(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_line_names_the_field() {
        let e = CliError::Config {
            field: "probe.layers".into(),
            reason: "too deep".into(),
        };
        let v: serde_json::Value = serde_json::from_str(&e.to_json()).unwrap();
        assert_eq!(v["kind"], "config");
        assert_eq!(v["field"], "probe.layers");
        assert!(!e.to_json().contains('\n'));
    }
}
