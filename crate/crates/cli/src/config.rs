use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Deserialize;
use triso_morph::{FitConfig, SynthConfig};

use crate::error::{CliError, CliResult};

/// Contents of the `--config` file. Command-line flags take precedence.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub synth: Option<SynthConfig>,
    pub fit: Option<FitConfig>,
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        load_document(path)
    }
}

/// Parses a TOML or JSON document, chosen by extension (TOML otherwise).
pub fn load_document<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    if is_json {
        serde_json::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
    } else {
        toml::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
    }
}
