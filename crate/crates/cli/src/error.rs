use std::path::{Path, PathBuf};

use acvis_core::ModelError;

/// Every failure the command line reports. `Display` is a single line starting with the
/// machine-readable code, e.g. `E_SCHEMA: preds.json: videos[2].id: ...`.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("E_CONFIG: {0}")]
    Config(String),
    #[error("E_IO: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("E_SCHEMA: {path}: {detail}")]
    Schema { path: PathBuf, detail: String },
    #[error("E_NAN: step {step}: {component} became non-finite")]
    NonFinite { step: u64, component: String },
    #[error("E_CHECKPOINT: {path}: {detail}")]
    Checkpoint { path: PathBuf, detail: String },
    #[error("E_MODEL: {0}")]
    Model(ModelError),
    #[error("E_GRADCHECK: {0}")]
    GradCheck(String),
}

impl CliError {
    /// The code prefix alone.
    pub fn code(&self) -> &'static str {
        match self {
            CliError::Config(_) => "E_CONFIG",
            CliError::Io { .. } => "E_IO",
            CliError::Schema { .. } => "E_SCHEMA",
            CliError::NonFinite { .. } => "E_NAN",
            CliError::Checkpoint { .. } => "E_CHECKPOINT",
            CliError::Model(_) => "E_MODEL",
            CliError::GradCheck(_) => "E_GRADCHECK",
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn schema(path: &Path, detail: impl Into<String>) -> Self {
        CliError::Schema {
            path: path.to_path_buf(),
            detail: detail.into(),
        }
    }

    pub fn checkpoint(path: &Path, detail: impl Into<String>) -> Self {
        CliError::Checkpoint {
            path: path.to_path_buf(),
            detail: detail.into(),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::InvalidConfig(m) => CliError::Config(m),
            e @ ModelError::AdditiveNeedsSingleToken { .. } => CliError::Config(e.to_string()),
            e => CliError::Model(e),
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

pub fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| CliError::io(path, e))
}

pub fn read_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

/// Writes through a temporary sibling so readers never see a partial file.
pub fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|e| CliError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

/// Single-line rendering of an error, newlines folded.
pub fn one_line(e: &CliError) -> String {
    e.to_string().replace('\n', " ")
}
