//! Text-completion backends, the on-disk completion cache and the
//! generator that fans one prompt out over seeds and samples.

mod cache;
mod remote;
mod scripted;

pub use cache::{CacheKey, CacheStats, DiskCache};
pub use remote::{EndpointConfig, RemoteClient, API_KEY_ENV};
pub use scripted::{ScriptedClient, TranscriptRecord};

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::ClientError;

/// Sampling parameters applied to every prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    pub top_k: u32,
    pub temperature: f64,
    pub num_seeds: u32,
    pub samples_per_seed: u32,
    pub max_new_tokens: u32,
    pub stop_sequences: Vec<String>,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            top_k: 5,
            temperature: 0.5,
            num_seeds: 5,
            samples_per_seed: 2,
            max_new_tokens: 64,
            stop_sequences: vec!["\n\n".to_string()],
        }
    }
}

impl GenerationConfig {
    /// Generations per prompt.
    pub fn total(&self) -> usize {
        self.num_seeds as usize * self.samples_per_seed as usize
    }

    pub fn validate(&self) -> Result<(), ClientError> {
        let bad = |m: &str| Err(ClientError::InvalidConfig(m.to_string()));
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad("temperature must be a positive number");
        }
        if self.top_k < 1 {
            return bad("top_k must be at least 1");
        }
        if self.num_seeds < 1 || self.samples_per_seed < 1 {
            return bad("num_seeds and samples_per_seed must be at least 1");
        }
        if self.max_new_tokens < 1 {
            return bad("max_new_tokens must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompletionSource {
    Remote,
    Cache,
    Scripted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub prompt_hash: String,
    pub seed: u64,
    pub sample_index: u32,
    pub text: String,
    #[serde(with = "millis")]
    pub latency: Duration,
    pub source: CompletionSource,
}

mod millis {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

/// SHA-256 of the prompt text, hex encoded.
pub fn prompt_hash(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

/// One call to a backend: `n` samples for one seed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompletionRequest {
    pub prompt: String,
    #[serde(skip)]
    pub prompt_hash: String,
    pub temperature: f64,
    pub top_k: u32,
    pub max_tokens: u32,
    pub n: u32,
    pub seed: u64,
    pub stop: Vec<String>,
}

pub trait CompletionService: Send + Sync {
    /// Exactly `request.n` texts in sample order.
    fn complete(&self, request: &CompletionRequest) -> Result<Vec<String>, ClientError>;

    fn source(&self) -> CompletionSource;

    /// Namespace mixed into cache keys so different models never share
    /// entries.
    fn namespace(&self) -> String;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_delay: Duration::from_millis(500),
        }
    }
}

/// Runs prompts against a backend through the optional cache.
pub struct Generator {
    service: Arc<dyn CompletionService>,
    cache: Option<DiskCache>,
    retry: RetryPolicy,
    service_calls: AtomicUsize,
}

impl Generator {
    pub fn new(service: Arc<dyn CompletionService>) -> Self {
        Self {
            service,
            cache: None,
            retry: RetryPolicy::default(),
            service_calls: AtomicUsize::new(0),
        }
    }

    pub fn with_cache(mut self, cache: DiskCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    /// Backend calls issued so far, retries included.
    pub fn service_calls(&self) -> usize {
        self.service_calls.load(Ordering::SeqCst)
    }

    pub fn namespace(&self) -> String {
        self.service.namespace()
    }

    /// All `num_seeds * samples_per_seed` completions for one prompt, sorted
    /// by `(seed, sample_index)`. Seeds are `0..num_seeds`.
    pub fn generate_all(
        &self,
        prompt: &str,
        config: &GenerationConfig,
    ) -> Result<Vec<Completion>, ClientError> {
        config.validate()?;
        let hash = prompt_hash(prompt);
        let namespace = self.service.namespace();
        let mut out = Vec::with_capacity(config.total());
        for seed in 0..config.num_seeds as u64 {
            let keys: Vec<CacheKey> = (0..config.samples_per_seed)
                .map(|i| CacheKey::new(&namespace, prompt, config, seed, i))
                .collect();
            if let Some(cache) = &self.cache {
                let hits: Vec<Option<String>> = keys
                    .iter()
                    .map(|k| cache.get(k))
                    .collect::<Result<_, _>>()?;
                if hits.iter().all(Option::is_some) {
                    for (i, text) in hits.into_iter().enumerate() {
                        out.push(Completion {
                            prompt_hash: hash.clone(),
                            seed,
                            sample_index: i as u32,
                            text: text.expect("checked"),
                            latency: Duration::ZERO,
                            source: CompletionSource::Cache,
                        });
                    }
                    continue;
                }
            }
            let request = CompletionRequest {
                prompt: prompt.to_string(),
                prompt_hash: hash.clone(),
                temperature: config.temperature,
                top_k: config.top_k,
                max_tokens: config.max_new_tokens,
                n: config.samples_per_seed,
                seed,
                stop: config.stop_sequences.clone(),
            };
            let started = Instant::now();
            let texts = self.call_with_retry(&request)?;
            let latency = started.elapsed();
            if texts.len() != config.samples_per_seed as usize {
                return Err(ClientError::ShortResponse {
                    expected: config.samples_per_seed as usize,
                    got: texts.len(),
                });
            }
            for (i, text) in texts.into_iter().enumerate() {
                if let Some(cache) = &self.cache {
                    cache.put(&keys[i], &text)?;
                }
                out.push(Completion {
                    prompt_hash: hash.clone(),
                    seed,
                    sample_index: i as u32,
                    text,
                    latency,
                    source: self.service.source(),
                });
            }
        }
        out.sort_by_key(|c| (c.seed, c.sample_index));
        Ok(out)
    }

    fn call_with_retry(&self, request: &CompletionRequest) -> Result<Vec<String>, ClientError> {
        let mut attempt = 0;
        loop {
            attempt += 1;
            self.service_calls.fetch_add(1, Ordering::SeqCst);
            match self.service.complete(request) {
                Ok(texts) => return Ok(texts),
                Err(e) if e.is_retryable() && attempt < self.retry.max_attempts => {
                    let delay = self.retry.base_delay * 2u32.pow(attempt - 1);
                    if !delay.is_zero() {
                        std::thread::sleep(delay);
                    }
                }
                Err(ClientError::Transport { message, .. }) => {
                    return Err(ClientError::Transport {
                        attempts: attempt,
                        message,
                    })
                }
                Err(e) => return Err(e),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Mutex;

    #[test]
    fn defaults_give_ten_generations() {
        let c = GenerationConfig::default();
        assert_eq!((c.top_k, c.temperature, c.total()), (5, 0.5, 10));
        c.validate().unwrap();
        let bad = GenerationConfig {
            temperature: 0.0,
            ..c.clone()
        };
        assert!(bad.validate().is_err());
        let bad = GenerationConfig { top_k: 0, ..c };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn completions_are_sorted_and_counted() {
        let client = Arc::new(ScriptedClient::new().with_default("x"));
        let g = Generator::new(client.clone());
        let out = g.generate_all("p", &GenerationConfig::default()).unwrap();
        let keys: Vec<(u64, u32)> = out.iter().map(|c| (c.seed, c.sample_index)).collect();
        let expected: Vec<(u64, u32)> = (0..5).flat_map(|s| (0..2).map(move |i| (s, i))).collect();
        assert_eq!(keys, expected);
        assert_eq!(client.calls(), 5);
        let single = GenerationConfig {
            num_seeds: 1,
            samples_per_seed: 1,
            ..Default::default()
        };
        assert_eq!(g.generate_all("p", &single).unwrap().len(), 1);
    }

    struct Flaky {
        failures: Mutex<Vec<ClientError>>,
    }

    impl CompletionService for Flaky {
        fn complete(&self, r: &CompletionRequest) -> Result<Vec<String>, ClientError> {
            match self.failures.lock().unwrap().pop() {
                Some(e) => Err(e),
                None => Ok(vec!["ok".to_string(); r.n as usize]),
            }
        }
        fn source(&self) -> CompletionSource {
            CompletionSource::Remote
        }
        fn namespace(&self) -> String {
            "flaky".into()
        }
    }

    fn transport() -> ClientError {
        ClientError::Transport {
            attempts: 1,
            message: "reset".into(),
        }
    }

    fn instant() -> RetryPolicy {
        RetryPolicy {
            max_attempts: 3,
            base_delay: Duration::ZERO,
        }
    }

    fn one() -> GenerationConfig {
        GenerationConfig {
            num_seeds: 1,
            ..Default::default()
        }
    }

    #[test]
    fn retries_then_succeeds() {
        let svc = Arc::new(Flaky {
            failures: Mutex::new(vec![transport(), ClientError::Service { status: 503, message: String::new() }]),
        });
        let g = Generator::new(svc).with_retry(instant());
        assert_eq!(g.generate_all("p", &one()).unwrap().len(), 2);
        assert_eq!(g.service_calls(), 3);
    }

    #[test]
    fn gives_up_after_three_attempts() {
        let svc = Arc::new(Flaky {
            failures: Mutex::new(vec![transport(), transport(), transport()]),
        });
        let g = Generator::new(svc).with_retry(instant());
        match g.generate_all("p", &one()) {
            Err(ClientError::Transport { attempts: 3, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn client_errors_are_not_retried() {
        let svc = Arc::new(Flaky {
            failures: Mutex::new(vec![ClientError::Service { status: 400, message: "bad".into() }]),
        });
        let g = Generator::new(svc).with_retry(instant());
        assert!(matches!(g.generate_all("p", &one()), Err(ClientError::Service { status: 400, .. })));
        assert_eq!(g.service_calls(), 1);
    }

    #[test]
    fn warm_cache_skips_the_service() {
        let dir = tempfile::tempdir().unwrap();
        let client = Arc::new(ScriptedClient::new().with_default("Care/Harm"));
        let g = Generator::new(client.clone()).with_cache(DiskCache::open(dir.path()).unwrap());
        let cold = g.generate_all("prompt", &GenerationConfig::default()).unwrap();
        assert!(cold.iter().all(|c| c.source == CompletionSource::Scripted));
        let calls = client.calls();
        let warm = g.generate_all("prompt", &GenerationConfig::default()).unwrap();
        assert_eq!(client.calls(), calls);
        assert!(warm.iter().all(|c| c.source == CompletionSource::Cache));
        let texts = |v: &[Completion]| v.iter().map(|c| c.text.clone()).collect::<Vec<_>>();
        assert_eq!(texts(&cold), texts(&warm));
        // Any change to the sampling config is a different key.
        let hotter = GenerationConfig {
            temperature: 0.7,
            ..Default::default()
        };
        g.generate_all("prompt", &hotter).unwrap();
        assert!(client.calls() > calls);
    }
}
