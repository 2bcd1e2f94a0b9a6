//! Experiment configuration, pipeline and report writing.

pub mod config;
pub mod run;

pub use config::{parse_config, ConfigError, ExperimentConfig};
pub use run::{run, Command, Summary};

use std::path::{Path, PathBuf};

/// Environment variable overriding the configured output directory.
pub const OUTPUT_DIR_ENV: &str = "MIXREG_OUTPUT_DIR";

/// Output directory precedence: explicit flag, then environment, then the
/// configuration, then `./output`.
pub fn resolve_output_dir(flag: Option<&Path>, env: Option<String>, config: &ExperimentConfig) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| env.filter(|s| !s.is_empty()).map(PathBuf::from))
        .or_else(|| config.output_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("output"))
}

/// Reads and validates a configuration file.
pub fn load_config(path: &Path) -> anyhow::Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| anyhow::anyhow!("reading {}: {e}", path.display()))?;
    Ok(parse_config(&text)?)
}
