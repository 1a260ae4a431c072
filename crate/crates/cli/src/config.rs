//! Layered settings: built-in defaults, then `REARRANGE_*` environment
//! variables, then the `--config` file, then command-line flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rearrange_core::evaluation::{FrontAxis, PredicateConfig};
use rearrange_core::grounding::EmbedderKind;
use rearrange_core::llm_client::{BackendKind, RemoteConfig};
use rearrange_core::reasoner::ReferenceMode;
use thiserror::Error;

pub const KEYS: &[&str] = &[
    "backend", "model", "seed", "store_dir", "scene", "mode", "gap_px", "front_axis", "embedder", "base_url",
    "api_key", "embed_url",
];

pub const ENV_PREFIX: &str = "REARRANGE_";

pub type Layer = BTreeMap<String, String>;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("cannot read {path}: {message}")]
    Read { path: String, message: String },
    #[error("cannot parse {path}: {message}")]
    Parse { path: String, message: String },
    #[error("unknown key {key:?} in {origin}")]
    UnknownKey { origin: String, key: String },
    #[error("invalid {key} {value:?}: expected {expected}")]
    Invalid { key: &'static str, value: String, expected: &'static str },
    #[error("remote backend needs {0}")]
    MissingRemote(&'static str),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CliConfig {
    pub backend: BackendKind,
    pub model: String,
    pub seed: u64,
    pub store_dir: PathBuf,
    pub scene: String,
    pub mode: ReferenceMode,
    pub gap_px: f64,
    pub front_axis: FrontAxis,
    pub embedder: EmbedderKind,
    pub base_url: Option<String>,
    pub api_key: Option<String>,
    pub embed_url: Option<String>,
}

impl Default for CliConfig {
    fn default() -> Self {
        Self {
            backend: BackendKind::Oracle,
            model: "gpt-4".to_string(),
            seed: 0,
            store_dir: PathBuf::from("experiences"),
            scene: "scene1".to_string(),
            mode: ReferenceMode::WithReference,
            gap_px: 40.0,
            front_axis: FrontAxis::Camera,
            embedder: EmbedderKind::Scripted,
            base_url: None,
            api_key: None,
            embed_url: None,
        }
    }
}

/// Reads a TOML file of top-level `key = value` pairs.
pub fn read_file(path: &Path) -> Result<Layer, ConfigError> {
    let shown = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read { path: shown.clone(), message: e.to_string() })?;
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse {
        path: shown.clone(),
        message: e.message().to_string(),
    })?;
    let mut out = Layer::new();
    for (key, value) in table {
        if !KEYS.contains(&key.as_str()) {
            return Err(ConfigError::UnknownKey { origin: shown, key });
        }
        let text = match value {
            toml::Value::String(s) => s,
            other => other.to_string(),
        };
        out.insert(key, text);
    }
    Ok(out)
}

/// Known keys from `REARRANGE_*` variables; anything else is ignored.
pub fn env_layer(vars: impl IntoIterator<Item = (String, String)>) -> Layer {
    vars.into_iter()
        .filter_map(|(k, v)| {
            let key = k.strip_prefix(ENV_PREFIX)?.to_lowercase();
            KEYS.contains(&key.as_str()).then_some((key, v))
        })
        .collect()
}

fn invalid(key: &'static str, value: &str, expected: &'static str) -> ConfigError {
    ConfigError::Invalid { key, value: value.to_string(), expected }
}

/// Merges layers in order, later ones winning, over the defaults.
pub fn resolve(layers: &[&Layer]) -> Result<CliConfig, ConfigError> {
    let mut merged = Layer::new();
    for layer in layers {
        merged.extend(layer.iter().map(|(k, v)| (k.clone(), v.clone())));
    }
    let mut cfg = CliConfig::default();
    for (key, value) in &merged {
        let v = value.trim();
        match key.as_str() {
            "backend" => cfg.backend = BackendKind::parse(v).ok_or_else(|| invalid("backend", v, "scripted, oracle or remote"))?,
            "model" => cfg.model = v.to_string(),
            "seed" => cfg.seed = v.parse().map_err(|_| invalid("seed", v, "a non-negative integer"))?,
            "store_dir" => cfg.store_dir = PathBuf::from(v),
            "scene" => cfg.scene = v.to_string(),
            "mode" => {
                cfg.mode = match v {
                    "with_reference" => ReferenceMode::WithReference,
                    "without_reference" => ReferenceMode::WithoutReference,
                    _ => return Err(invalid("mode", v, "with_reference or without_reference")),
                }
            }
            "gap_px" => {
                cfg.gap_px = v
                    .parse::<f64>()
                    .ok()
                    .filter(|g| g.is_finite() && *g >= 0.0)
                    .ok_or_else(|| invalid("gap_px", v, "a non-negative number"))?
            }
            "front_axis" => {
                cfg.front_axis = match v {
                    "camera" => FrontAxis::Camera,
                    "robot" => FrontAxis::Robot,
                    _ => return Err(invalid("front_axis", v, "camera or robot")),
                }
            }
            "embedder" => cfg.embedder = EmbedderKind::parse(v).ok_or_else(|| invalid("embedder", v, "scripted or remote"))?,
            "base_url" => cfg.base_url = Some(v.to_string()).filter(|s| !s.is_empty()),
            "api_key" => cfg.api_key = Some(v.to_string()).filter(|s| !s.is_empty()),
            "embed_url" => cfg.embed_url = Some(v.to_string()).filter(|s| !s.is_empty()),
            other => return Err(ConfigError::UnknownKey { origin: "settings".into(), key: other.to_string() }),
        }
    }
    if cfg.backend == BackendKind::Remote {
        if cfg.base_url.is_none() {
            return Err(ConfigError::MissingRemote("base_url"));
        }
        if cfg.api_key.is_none() {
            return Err(ConfigError::MissingRemote("api_key"));
        }
    }
    Ok(cfg)
}

impl CliConfig {
    pub fn predicates(&self) -> PredicateConfig {
        PredicateConfig { front_axis: self.front_axis, ..PredicateConfig::default() }
    }

    pub fn remote(&self) -> Option<RemoteConfig> {
        let mut rc = RemoteConfig::new(self.base_url.clone()?, self.model.clone());
        rc.api_key = self.api_key.clone();
        Some(rc)
    }
}
