//! Deterministic stand-in for a completion service.
//!
//! Lookup order for `(prompt_hash, seed, sample_index)`: an exact entry, a
//! per-prompt default, the first suffix rule the prompt ends with, the
//! responder function, then the global default.

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::Deserialize;

use super::{CompletionRequest, CompletionService, CompletionSource};
use crate::error::ClientError;

type Responder = dyn Fn(&CompletionRequest, u32) -> Option<String> + Send + Sync;

/// One line of a transcript file.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(untagged)]
pub enum TranscriptRecord {
    Keyed {
        prompt_hash: String,
        seed: Option<u64>,
        sample_index: Option<u32>,
        text: String,
    },
    Suffix {
        suffix: String,
        text: String,
    },
    Default {
        default: String,
    },
}

#[derive(Default)]
pub struct ScriptedClient {
    entries: HashMap<(String, u64, u32), String>,
    prompt_defaults: HashMap<String, String>,
    suffixes: Vec<(String, String)>,
    responder: Option<Box<Responder>>,
    default: Option<String>,
    calls: AtomicUsize,
    requested: Mutex<Vec<String>>,
}

impl std::fmt::Debug for ScriptedClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ScriptedClient")
            .field("entries", &self.entries.len())
            .field("calls", &self.calls())
            .finish()
    }
}

impl ScriptedClient {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_default(mut self, text: &str) -> Self {
        self.default = Some(text.to_string());
        self
    }

    pub fn with_responder(
        mut self,
        f: impl Fn(&CompletionRequest, u32) -> Option<String> + Send + Sync + 'static,
    ) -> Self {
        self.responder = Some(Box::new(f));
        self
    }

    pub fn insert(&mut self, prompt_hash: &str, seed: u64, sample_index: u32, text: &str) {
        self.entries
            .insert((prompt_hash.to_string(), seed, sample_index), text.to_string());
    }

    pub fn insert_prompt_default(&mut self, prompt_hash: &str, text: &str) {
        self.prompt_defaults
            .insert(prompt_hash.to_string(), text.to_string());
    }

    pub fn insert_suffix(&mut self, suffix: &str, text: &str) {
        self.suffixes.push((suffix.to_string(), text.to_string()));
    }

    /// Load a line-delimited transcript file.
    pub fn from_transcript(path: &Path) -> Result<Self, ClientError> {
        let raw = std::fs::read_to_string(path).map_err(|e| ClientError::Transcript {
            line: 0,
            message: format!("{}: {e}", path.display()),
        })?;
        Self::parse_transcript(&raw)
    }

    pub fn parse_transcript(raw: &str) -> Result<Self, ClientError> {
        let mut client = Self::new();
        for (i, line) in raw.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record: TranscriptRecord =
                serde_json::from_str(line).map_err(|e| ClientError::Transcript {
                    line: i + 1,
                    message: e.to_string(),
                })?;
            match record {
                TranscriptRecord::Keyed {
                    prompt_hash,
                    seed: Some(seed),
                    sample_index: Some(idx),
                    text,
                } => client.insert(&prompt_hash, seed, idx, &text),
                TranscriptRecord::Keyed {
                    prompt_hash,
                    seed: None,
                    sample_index: None,
                    text,
                } => client.insert_prompt_default(&prompt_hash, &text),
                TranscriptRecord::Keyed { .. } => {
                    return Err(ClientError::Transcript {
                        line: i + 1,
                        message: "seed and sample_index must be given together".into(),
                    })
                }
                TranscriptRecord::Suffix { suffix, text } => client.insert_suffix(&suffix, &text),
                TranscriptRecord::Default { default } => client.default = Some(default),
            }
        }
        Ok(client)
    }

    /// Number of `complete` calls served (one per seed).
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    /// Prompt hashes in request order.
    pub fn requested(&self) -> Vec<String> {
        self.requested.lock().expect("poisoned").clone()
    }

    pub fn reset_counters(&self) {
        self.calls.store(0, Ordering::SeqCst);
        self.requested.lock().expect("poisoned").clear();
    }

    fn lookup(&self, request: &CompletionRequest, sample_index: u32) -> Option<String> {
        let key = (request.prompt_hash.clone(), request.seed, sample_index);
        if let Some(t) = self.entries.get(&key) {
            return Some(t.clone());
        }
        if let Some(t) = self.prompt_defaults.get(&request.prompt_hash) {
            return Some(t.clone());
        }
        if let Some((_, t)) = self
            .suffixes
            .iter()
            .find(|(s, _)| request.prompt.ends_with(s.as_str()))
        {
            return Some(t.clone());
        }
        if let Some(t) = self.responder.as_ref().and_then(|f| f(request, sample_index)) {
            return Some(t);
        }
        self.default.clone()
    }
}

impl CompletionService for ScriptedClient {
    fn complete(&self, request: &CompletionRequest) -> Result<Vec<String>, ClientError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.requested
            .lock()
            .expect("poisoned")
            .push(request.prompt_hash.clone());
        (0..request.n)
            .map(|i| {
                self.lookup(request, i).ok_or_else(|| ClientError::MissingKey {
                    prompt_hash: request.prompt_hash.clone(),
                    seed: request.seed,
                    sample_index: i,
                })
            })
            .collect()
    }

    fn source(&self) -> CompletionSource {
        CompletionSource::Scripted
    }

    fn namespace(&self) -> String {
        "scripted".to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::client::{prompt_hash, GenerationConfig, Generator};
    use std::sync::Arc;

    fn request(prompt: &str, seed: u64, n: u32) -> CompletionRequest {
        CompletionRequest {
            prompt: prompt.into(),
            prompt_hash: prompt_hash(prompt),
            temperature: 0.5,
            top_k: 5,
            max_tokens: 8,
            n,
            seed,
            stop: vec![],
        }
    }

    #[test]
    fn empty_transcript_is_a_missing_key() {
        let c = ScriptedClient::new();
        match c.complete(&request("p", 3, 1)) {
            Err(ClientError::MissingKey { seed: 3, sample_index: 0, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn lookup_precedence() {
        let mut c = ScriptedClient::new().with_default("global");
        let h = prompt_hash("tail X");
        c.insert(&h, 0, 1, "exact");
        c.insert_suffix("X", "suffix");
        assert_eq!(c.complete(&request("tail X", 0, 2)).unwrap(), ["suffix", "exact"]);
        c.insert_prompt_default(&h, "prompt");
        assert_eq!(c.complete(&request("tail X", 0, 2)).unwrap(), ["prompt", "exact"]);
        assert_eq!(c.complete(&request("other", 0, 1)).unwrap(), ["global"]);
        assert_eq!(c.calls(), 3);
    }

    #[test]
    fn six_of_ten_scripted() {
        let mut c = ScriptedClient::new();
        let h = prompt_hash("p");
        for seed in 0..5u64 {
            for i in 0..2u32 {
                let n = seed * 2 + i as u64;
                c.insert(&h, seed, i, if n < 6 { "Care/Harm" } else { "Other" });
            }
        }
        let g = Generator::new(Arc::new(c));
        let out = g.generate_all("p", &GenerationConfig::default()).unwrap();
        assert_eq!(out.iter().filter(|c| c.text == "Care/Harm").count(), 6);
    }

    #[test]
    fn transcript_file_format() {
        let h = prompt_hash("p");
        let raw = format!(
            "{{\"prompt_hash\": \"{h}\", \"seed\": 0, \"sample_index\": 0, \"text\": \"a\"}}\n\
             {{\"suffix\": \"q\", \"text\": \"b\"}}\n\n{{\"default\": \"c\"}}\n"
        );
        let c = ScriptedClient::parse_transcript(&raw).unwrap();
        assert_eq!(c.complete(&request("p", 0, 2)).unwrap(), ["a", "c"]);
        assert_eq!(c.complete(&request("q", 0, 1)).unwrap(), ["b"]);
        let err = ScriptedClient::parse_transcript("{\"prompt_hash\": \"x\", \"seed\": 1, \"text\": \"t\"}").unwrap_err();
        assert!(matches!(err, ClientError::Transcript { line: 1, .. }), "{err}");
        assert!(ScriptedClient::parse_transcript("nope").is_err());
    }
}
