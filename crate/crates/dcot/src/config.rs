//! Pipeline configuration: a single TOML file with `${ENV_VAR}`
//! interpolation for secrets; CLI flags override file values.

use crate::decode::{SamplingPolicy, TokenCounter};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config invalid: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model: String,
    /// Environment variable holding the API key; interpolate with
    /// `${VAR}` only for non-secret values.
    pub api_key_env: Option<String>,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            base_url: "http://localhost:8000/v1".into(),
            model: "qwen3-8b".into(),
            api_key_env: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub teacher: EndpointConfig,
    pub eval_target: EndpointConfig,
    pub embedder: EndpointConfig,
    pub embedding_model: String,
    pub sampling: SamplingPolicy,
    pub token_counter: TokenCounter,
    pub concurrency: usize,
    pub seeds: Vec<u64>,
    pub cosine_threshold: f64,
    pub ngram_n: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            teacher: EndpointConfig {
                model: "qwen3-235b-instruct".into(),
                ..Default::default()
            },
            eval_target: EndpointConfig::default(),
            embedder: EndpointConfig {
                model: "all-mpnet-base-v2".into(),
                ..Default::default()
            },
            embedding_model: "all-mpnet-base-v2".into(),
            sampling: SamplingPolicy::default(),
            token_counter: TokenCounter::Whitespace,
            concurrency: 4,
            seeds: vec![0, 1, 2, 3, 4],
            cosine_threshold: 0.55,
            ngram_n: 13,
        }
    }
}

/// Replace `${NAME}` with the environment value; unset variables are left
/// verbatim so the error surfaces where the value is used.
pub fn interpolate_env(text: &str) -> String {
    let re = regex::Regex::new(r"\$\{([A-Za-z_][A-Za-z0-9_]*)\}").expect("valid regex");
    re.replace_all(text, |caps: &regex::Captures| {
        std::env::var(&caps[1]).unwrap_or_else(|_| caps[0].to_string())
    })
    .into_owned()
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let raw = std::fs::read_to_string(path)?;
        let cfg: Self = toml::from_str(&interpolate_env(&raw))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.sampling
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.concurrency == 0 {
            return Err(ConfigError::Invalid("concurrency must be >= 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(ConfigError::Invalid("at least one seed required".into()));
        }
        Ok(())
    }

    /// Stable hash of the effective configuration.
    pub fn hash(&self) -> String {
        let canonical = toml::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

/// Run manifest written beside every command's outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub tool_version: String,
    pub command: String,
    pub timestamp: String,
}

impl RunManifest {
    pub fn new(config: &PipelineConfig, command: &str) -> Self {
        Self {
            config_hash: config.hash(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            timestamp: chrono::Utc::now().to_rfc3339(),
        }
    }

    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        let path = dir.join("run_manifest.json");
        std::fs::write(path, serde_json::to_string_pretty(self).expect("serializes"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid_and_hash_stable() {
        let cfg = PipelineConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.hash(), cfg.hash());
        let changed = PipelineConfig {
            concurrency: 9,
            ..Default::default()
        };
        assert_ne!(cfg.hash(), changed.hash());
    }

    #[test]
    fn env_interpolation() {
        std::env::set_var("DCOT_TEST_VALUE", "hello");
        assert_eq!(interpolate_env("x ${DCOT_TEST_VALUE} y"), "x hello y");
        assert_eq!(interpolate_env("${DCOT_UNSET_VAR_42}"), "${DCOT_UNSET_VAR_42}");
    }

    #[test]
    fn load_rejects_zero_temperature() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.toml");
        std::fs::write(
            &path,
            "[sampling]\nmode = \"locked\"\nlocked_temperature = 0.0\n\
             [sampling.temp_map]\ndefault = 0.6\nlow = 0.3\nmid = 0.6\nhigh = 0.8\n",
        )
        .unwrap();
        assert!(PipelineConfig::load(&path).is_err());
    }
}
