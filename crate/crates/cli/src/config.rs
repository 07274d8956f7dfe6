//! Settings resolved as: command-line flag, then `--config` file, then
//! environment, then built-in default.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::{CliError, Format};

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub data_dir: Option<PathBuf>,
    pub format: Option<Format>,
    pub jobs: Option<usize>,
    pub bind: Option<String>,
    pub port: Option<u16>,
    pub max_upload_bytes: Option<usize>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    /// `DATA_DIR` as configured, if any.
    pub fn data_dir(&self) -> Option<PathBuf> {
        self.data_dir
            .clone()
            .or_else(|| std::env::var_os("DATA_DIR").filter(|v| !v.is_empty()).map(PathBuf::from))
    }
}
