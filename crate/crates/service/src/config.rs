use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use wordharvest::harvest::EngineConfig;

/// Server settings. Read from a TOML file, then overridden by
/// `WORDHARVEST_*` environment variables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    /// Directory holding one subdirectory per collection.
    pub root: PathBuf,
    pub bind: String,
    pub port: u16,
    /// Period of the background retraining worker.
    pub cycle_interval_ms: u64,
    /// Lifetime of download tokens issued with exports.
    pub download_ttl_ms: i64,
    /// Defaults for new collections.
    pub engine: EngineConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            root: PathBuf::from("collections"),
            bind: "127.0.0.1".into(),
            port: 8080,
            cycle_interval_ms: 1000,
            download_ttl_ms: 60 * 60 * 1000,
            engine: EngineConfig::default(),
        }
    }
}

impl ServiceConfig {
    pub fn from_file(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    /// Applies overrides from `var`, normally `std::env::var`.
    pub fn with_env(mut self, var: impl Fn(&str) -> Option<String>) -> Result<Self, String> {
        fn parse<T: std::str::FromStr>(name: &str, v: String) -> Result<T, String> {
            v.parse().map_err(|_| format!("{name}: cannot parse {v:?}"))
        }
        if let Some(v) = var("WORDHARVEST_ROOT") {
            self.root = PathBuf::from(v);
        }
        if let Some(v) = var("WORDHARVEST_BIND") {
            self.bind = v;
        }
        if let Some(v) = var("WORDHARVEST_PORT") {
            self.port = parse("WORDHARVEST_PORT", v)?;
        }
        if let Some(v) = var("WORDHARVEST_DEBOUNCE_MS") {
            self.engine.debounce_ms = parse("WORDHARVEST_DEBOUNCE_MS", v)?;
        }
        if let Some(v) = var("WORDHARVEST_HOT_THRESHOLD") {
            self.engine.hot_threshold = parse("WORDHARVEST_HOT_THRESHOLD", v)?;
        }
        if let Some(v) = var("WORDHARVEST_HOT_WINDOW_MS") {
            self.engine.hot_window_ms = parse("WORDHARVEST_HOT_WINDOW_MS", v)?;
        }
        if let Some(v) = var("WORDHARVEST_COLD_EVERY") {
            self.engine.cold_every = parse("WORDHARVEST_COLD_EVERY", v)?;
        }
        Ok(self)
    }
}
