//! TOML serialization of training configurations.
//!
//! Parsing is strict: unknown keys anywhere in the document are hard errors,
//! so a typo'd field name can never silently fall back to a default. A
//! parsed configuration serializes back to TOML and re-parses to an equal
//! value, which is what lets a run directory's stored copy stand in for the
//! original file.

use crate::cli::atomic_write;
use crate::train::TrainConfig;
use crate::{Error, Result};
use std::path::Path;

/// Parses a strict TOML training configuration.
pub fn parse_train_config(text: &str) -> Result<TrainConfig> {
    toml::from_str(text).map_err(|e| Error::Config {
        what: format!("invalid training config: {e}"),
    })
}

/// Renders a configuration as TOML.
pub fn render_train_config(cfg: &TrainConfig) -> Result<String> {
    toml::to_string_pretty(cfg).map_err(|e| Error::Config {
        what: format!("cannot serialize training config: {e}"),
    })
}

/// Loads and parses a configuration file.
pub fn load_train_config(path: &Path) -> Result<TrainConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_train_config(&text)
}

/// Writes a configuration file atomically (write-then-rename).
pub fn save_train_config(path: &Path, cfg: &TrainConfig) -> Result<()> {
    atomic_write(path, render_train_config(cfg)?.as_bytes())
}
