//! Service configuration. Relative paths are resolved against the directory
//! holding the config file.

use dbdoctor_core::collab::EnvironmentSettings;
use dbdoctor_core::gateway::ProviderConfig;
use dbdoctor_core::knowledge::KnowledgeBase;
use dbdoctor_core::observability::SourceConfig;
use dbdoctor_core::retrieval::KeywordApiMap;
use dbdoctor_core::tools::ToolRegistry;
use dbdoctor_core::SearchParams;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {reason}")]
    Read { path: String, reason: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AppConfig {
    pub kb_path: PathBuf,
    pub tools_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keywords_path: Option<PathBuf>,
    /// Merged into `source.thresholds`; entries already there win.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thresholds_path: Option<PathBuf>,
    pub sessions_dir: PathBuf,
    pub source: SourceConfig,
    pub provider: ProviderConfig,
    /// Used by baseline-metrics-only sessions; falls back to `provider`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline_provider: Option<ProviderConfig>,
    /// Used by collaborative sessions; falls back to `provider`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub collab_provider: Option<ProviderConfig>,
    #[serde(default)]
    pub search: SearchParams,
    #[serde(default)]
    pub collab: EnvironmentSettings,
}

fn rebase(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

fn rebase_provider(base: &Path, p: &mut ProviderConfig) {
    if let Some(s) = p.script_path.as_mut() {
        rebase(base, s);
    }
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    serde_json::from_str(&text).map_err(|e| ConfigError::Read {
        path: path.display().to_string(),
        reason: e.to_string(),
    })
}

impl AppConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let mut cfg: AppConfig = read_json(path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.rebase_paths(&base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn rebase_paths(&mut self, base: &Path) {
        rebase(base, &mut self.kb_path);
        rebase(base, &mut self.tools_path);
        rebase(base, &mut self.sessions_dir);
        for p in [&mut self.keywords_path, &mut self.thresholds_path].into_iter().flatten() {
            rebase(base, p);
        }
        if let Some(d) = self.source.fixture_dir.as_mut() {
            rebase(base, d);
        }
        rebase_provider(base, &mut self.provider);
        for p in [&mut self.baseline_provider, &mut self.collab_provider].into_iter().flatten() {
            rebase_provider(base, p);
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.source.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        for p in std::iter::once(&self.provider).chain(self.baseline_provider.iter()).chain(self.collab_provider.iter()) {
            p.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        if self.search.c < 0.0 || !self.search.c.is_finite() {
            return Err(ConfigError::Invalid("search.C must be a non-negative number".into()));
        }
        if self.search.max_children == 0 {
            return Err(ConfigError::Invalid("search.max_children must be at least 1".into()));
        }
        Ok(())
    }

    /// Loads everything the sessions share.
    pub fn resources(&self) -> Result<Resources, ConfigError> {
        let registry = ToolRegistry::load(&self.tools_path).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let kb = KnowledgeBase::load(&self.kb_path).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let keywords = match &self.keywords_path {
            Some(p) => Some(read_json::<KeywordApiMap>(p)?),
            None => None,
        };
        let mut thresholds = match &self.thresholds_path {
            Some(p) => read_json::<BTreeMap<String, f64>>(p)?,
            None => BTreeMap::new(),
        };
        thresholds.extend(self.source.thresholds.clone());
        Ok(Resources {
            registry,
            kb: Arc::new(kb),
            keywords,
            thresholds,
        })
    }
}

/// Read-only state shared by every session.
#[derive(Clone, Debug)]
pub struct Resources {
    pub registry: ToolRegistry,
    pub kb: Arc<KnowledgeBase>,
    pub keywords: Option<KeywordApiMap>,
    pub thresholds: BTreeMap<String, f64>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_config_loads() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/dbdoctor.json");
        let cfg = AppConfig::load(&path).unwrap();
        assert!(cfg.kb_path.is_absolute());
        assert!(cfg.provider.script_path.as_ref().unwrap().exists());
        let res = cfg.resources().unwrap();
        assert!(res.registry.get("fetch_metric").is_some());
        assert!(res.thresholds.contains_key("cpu_usage"));
    }
}
