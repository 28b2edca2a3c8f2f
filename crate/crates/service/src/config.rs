use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Deserialize;

/// Environment variable that overrides `listen` from the config file.
pub const LISTEN_ENV: &str = "CFPROBE_LISTEN";

/// Server configuration, read from a TOML file. Relative paths are resolved
/// against the file's directory.
///
/// ```toml
/// dataset = "data/pima.csv"
/// schema = "data/pima.schema.json"
/// model = "models/pima.json"
/// workers = 4
/// listen = "127.0.0.1:8080"
/// ```
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    pub dataset: PathBuf,
    pub schema: PathBuf,
    pub model: PathBuf,
    #[serde(default = "default_workers")]
    pub workers: usize,
    /// Jobs queued or running before new ones are refused with 503.
    #[serde(default = "default_queue")]
    pub queue_capacity: usize,
    #[serde(default = "default_listen")]
    pub listen: String,
    #[serde(default = "default_bins")]
    pub bin_count: usize,
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(2, |n| n.get())
}

fn default_queue() -> usize {
    64
}

fn default_listen() -> String {
    "127.0.0.1:8080".into()
}

fn default_bins() -> usize {
    cfprobe::tabular::DEFAULT_BIN_COUNT
}

impl ServiceConfig {
    pub fn parse(text: &str, base: &Path) -> anyhow::Result<Self> {
        let mut config: ServiceConfig = toml::from_str(text).context("invalid service config")?;
        for p in [&mut config.dataset, &mut config.schema, &mut config.model] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Ok(listen) = std::env::var(LISTEN_ENV) {
            config.listen = listen;
        }
        anyhow::ensure!(config.workers > 0, "workers must be positive");
        anyhow::ensure!(config.queue_capacity > 0, "queue_capacity must be positive");
        anyhow::ensure!(config.bin_count > 0, "bin_count must be positive");
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> anyhow::Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }
}
