//! Run configuration: one TOML document describing a whole run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::client::{EndpointConfig, GenerationConfig};
use crate::entmatch::DEFAULT_THRESHOLD;
use crate::error::ConfigError;
use crate::pipeline::Task;
use crate::prompts::DEFAULT_TOKEN_BUDGET;

/// Overrides `endpoint.url` when set.
pub const ENDPOINT_URL_ENV: &str = "MORALFRAMES_ENDPOINT_URL";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub corpus: Option<PathBuf>,
    /// Split manifest written by `sample`; when absent the split is drawn
    /// from the corpus with `split_seed`.
    pub split: Option<PathBuf>,
    pub templates: Option<PathBuf>,
    pub definitions: Option<PathBuf>,
    pub cache: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Scripted transcript; replaces the remote endpoint when set.
    pub transcript: Option<PathBuf>,
    /// Foundation-task predictions used instead of gold foundations.
    pub predicted_foundations: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub task: Task,
    pub shots: usize,
    pub split_seed: u64,
    pub shot_seed: u64,
    pub tie_seed: u64,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub threshold: f64,
    pub concurrency: usize,
    pub token_budget: usize,
    pub generation: GenerationConfig,
    pub endpoint: EndpointConfig,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            task: Task::MfOnePass,
            shots: 5,
            split_seed: 13,
            shot_seed: 17,
            tie_seed: 19,
            train_per_class: 10,
            test_per_class: 20,
            threshold: DEFAULT_THRESHOLD,
            concurrency: 4,
            token_budget: DEFAULT_TOKEN_BUDGET,
            generation: GenerationConfig::default(),
            endpoint: EndpointConfig::default(),
            paths: Paths::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let raw = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut config = Self::parse(&raw)?;
        config.apply_env();
        Ok(config)
    }

    pub fn parse(raw: &str) -> Result<Self, ConfigError> {
        let config: Self = toml::from_str(raw).map_err(|e| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn apply_env(&mut self) {
        if let Ok(url) = std::env::var(ENDPOINT_URL_ENV) {
            if !url.is_empty() {
                self.endpoint.url = url;
            }
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.generation
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(ConfigError::Invalid("threshold must lie in [0, 1]".into()));
        }
        if self.concurrency == 0 {
            return Err(ConfigError::Invalid("concurrency must be at least 1".into()));
        }
        if self.shots > self.train_per_class {
            return Err(ConfigError::Invalid(format!(
                "{} shots per class but only {} training items per class",
                self.shots, self.train_per_class
            )));
        }
        Ok(())
    }

    pub fn generations_per_prompt(&self) -> usize {
        self.generation.total()
    }

    /// SHA-256 of the settings that can change results. Output, cache and
    /// transcript locations are left out.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.paths.out = None;
        c.paths.cache = None;
        c.paths.transcript = None;
        hex::encode(Sha256::digest(serde_json::to_vec(&c).expect("config serializes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_roundtrips_through_toml() {
        let c = RunConfig::default();
        let text = c.to_toml();
        assert_eq!(RunConfig::parse(&text).unwrap(), c);
        assert!(text.contains("task = \"mf-one-pass\""), "{text}");
    }

    #[test]
    fn partial_documents_fill_defaults() {
        let c = RunConfig::parse("task = \"joint\"\nshots = 3\n[generation]\nnum_seeds = 1\n").unwrap();
        assert_eq!(c.task, Task::Joint);
        assert_eq!(c.generation.num_seeds, 1);
        assert_eq!(c.generation.top_k, 5);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(matches!(RunConfig::parse("bogus = 1"), Err(ConfigError::Parse(_))));
        assert!(matches!(RunConfig::parse("threshold = 1.5"), Err(ConfigError::Invalid(_))));
        assert!(matches!(RunConfig::parse("[generation]\ntemperature = 0.0"), Err(ConfigError::Invalid(_))));
        assert!(matches!(RunConfig::parse("shots = 11"), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn hash_ignores_output_locations() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.paths.out = Some("elsewhere".into());
        assert_eq!(a.hash(), b.hash());
        b.tie_seed += 1;
        assert_ne!(a.hash(), b.hash());
    }
}
