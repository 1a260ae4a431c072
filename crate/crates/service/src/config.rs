use std::path::PathBuf;

use rearrange_core::evaluation::PredicateConfig;
use rearrange_core::grounding::EmbedderKind;
use rearrange_core::llm_client::{BackendKind, RemoteConfig};
use rearrange_core::reasoner::ReferenceMode;
use serde::{Deserialize, Serialize};

/// Knobs the console may read and change at runtime.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    pub backend: BackendKind,
    pub embedder: EmbedderKind,
    pub mode: ReferenceMode,
    /// Spacing used by the geometric baseline.
    pub gap_px: f64,
    /// Seed used by the random baseline.
    pub seed: u64,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            backend: BackendKind::Oracle,
            embedder: EmbedderKind::Scripted,
            mode: ReferenceMode::WithReference,
            gap_px: 40.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SettingsPatch {
    pub backend: Option<BackendKind>,
    pub embedder: Option<EmbedderKind>,
    pub mode: Option<ReferenceMode>,
    pub gap_px: Option<f64>,
    pub seed: Option<u64>,
}

impl Settings {
    pub fn patched(&self, patch: &SettingsPatch) -> Result<Settings, String> {
        let next = Settings {
            backend: patch.backend.unwrap_or(self.backend),
            embedder: patch.embedder.unwrap_or(self.embedder),
            mode: patch.mode.unwrap_or(self.mode),
            gap_px: patch.gap_px.unwrap_or(self.gap_px),
            seed: patch.seed.unwrap_or(self.seed),
        };
        if !next.gap_px.is_finite() || next.gap_px < 0.0 {
            return Err(format!("gap_px must be a non-negative number, got {}", next.gap_px));
        }
        Ok(next)
    }
}

/// Everything fixed at startup.
#[derive(Debug, Clone)]
pub struct ServiceOptions {
    pub store_dir: PathBuf,
    pub fixture: String,
    pub settings: Settings,
    pub remote: Option<RemoteConfig>,
    pub embed_url: Option<String>,
    pub embed_key: Option<String>,
    pub predicates: PredicateConfig,
}

impl ServiceOptions {
    pub fn new(store_dir: impl Into<PathBuf>) -> Self {
        Self {
            store_dir: store_dir.into(),
            fixture: "scene1".to_string(),
            settings: Settings::default(),
            remote: None,
            embed_url: None,
            embed_key: None,
            predicates: PredicateConfig::default(),
        }
    }
}
