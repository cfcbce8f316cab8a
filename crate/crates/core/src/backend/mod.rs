//! Uniform text-completion interface over OpenAI-compatible HTTP endpoints
//! and a deterministic scripted backend, with an optional content-addressed
//! disk cache, bounded retries, and call accounting.

pub mod cache;
pub mod http;
pub mod scripted;

pub use cache::{CacheStats, DiskCache};
pub use http::{HttpBackend, HttpSettings};
pub use scripted::{Matcher, ScriptRule, ScriptedBackend};

use crate::util::now_unix_ms;
use serde::{Deserialize, Serialize};
use std::sync::{Condvar, Mutex};
use std::time::Instant;
use thiserror::Error;

pub const DEFAULT_MAX_TOKENS: u32 = 1024;
pub const DEFAULT_TEMPERATURE: f64 = 0.7;
pub const DEFAULT_TOP_P: f64 = 1.0;
pub const DEFAULT_MAX_RETRIES: u32 = 2;
pub const DEFAULT_CONCURRENCY: usize = 8;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("backend configuration: {0}")]
    Config(String),
    #[error("invalid sampling params: {0}")]
    InvalidParams(String),
    #[error("scripted backend has no rule matching {purpose} prompt starting {excerpt:?}")]
    UnmatchedStimulus { purpose: PurposeTag, excerpt: String },
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("remote error (status {status}): {body}")]
    Remote { status: u16, body: String },
    #[error("malformed completion response: {0}")]
    Protocol(String),
    #[error("cache i/o: {0}")]
    Cache(#[source] std::io::Error),
}

/// Which pipeline stage or repair role a completion serves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PurposeTag {
    Init,
    Iter,
    Refine,
    Conflict,
    Synth,
    RepairClassify,
    RepairGenerate,
}

impl std::fmt::Display for PurposeTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            PurposeTag::Init => "init",
            PurposeTag::Iter => "iter",
            PurposeTag::Refine => "refine",
            PurposeTag::Conflict => "conflict",
            PurposeTag::Synth => "synth",
            PurposeTag::RepairClassify => "repair_classify",
            PurposeTag::RepairGenerate => "repair_generate",
        };
        f.write_str(s)
    }
}

/// Generation hyperparameters sent with every completion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub max_tokens: u32,
    pub temperature: f64,
    pub top_p: f64,
}

impl Default for SamplingParams {
    fn default() -> Self {
        Self {
            max_tokens: DEFAULT_MAX_TOKENS,
            temperature: DEFAULT_TEMPERATURE,
            top_p: DEFAULT_TOP_P,
        }
    }
}

impl SamplingParams {
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.max_tokens < 1 {
            return Err(BackendError::InvalidParams("max_tokens must be >= 1".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(BackendError::InvalidParams(format!(
                "temperature must be in [0, 2], got {}",
                self.temperature
            )));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(BackendError::InvalidParams(format!(
                "top_p must be in (0, 1], got {}",
                self.top_p
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub model_id: String,
    pub prompt: String,
    pub params: SamplingParams,
    pub purpose: PurposeTag,
}

impl CompletionRequest {
    pub fn new(
        model_id: impl Into<String>,
        prompt: impl Into<String>,
        params: SamplingParams,
        purpose: PurposeTag,
    ) -> Self {
        Self {
            model_id: model_id.into(),
            prompt: prompt.into(),
            params,
            purpose,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompletionResult {
    pub text: String,
    pub usage: Option<TokenUsage>,
    pub latency_ms: u64,
    pub from_cache: bool,
}

/// Content digest over (model_id, prompt, max_tokens, temperature, top_p).
///
/// The purpose tag is deliberately excluded: the same textual request shares
/// one cache slot across stages.
pub fn cache_key(request: &CompletionRequest) -> String {
    #[derive(Serialize)]
    struct KeyMaterial<'a> {
        model_id: &'a str,
        prompt: &'a str,
        max_tokens: u32,
        temperature: f64,
        top_p: f64,
    }
    let material = KeyMaterial {
        model_id: &request.model_id,
        prompt: &request.prompt,
        max_tokens: request.params.max_tokens,
        temperature: request.params.temperature,
        top_p: request.params.top_p,
    };
    crate::util::sha256_hex(serde_json::to_string(&material).expect("key material").as_bytes())
}

/// One entry in a backend's call log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CallRecord {
    pub digest: String,
    pub purpose: PurposeTag,
    pub from_cache: bool,
    pub network: bool,
    pub timestamp_unix_ms: u64,
}

/// Append-only, thread-safe log of every completion served by a backend.
#[derive(Debug, Default)]
pub struct CallLog {
    entries: Mutex<Vec<CallRecord>>,
}

impl CallLog {
    fn append(&self, record: CallRecord) {
        self.entries.lock().unwrap().push(record);
    }

    pub fn snapshot(&self) -> Vec<CallRecord> {
        self.entries.lock().unwrap().clone()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn count_purpose(&self, purpose: PurposeTag) -> usize {
        self.entries
            .lock()
            .unwrap()
            .iter()
            .filter(|r| r.purpose == purpose)
            .count()
    }

    /// Calls that actually left the process (network, not served from cache).
    pub fn network_calls(&self) -> usize {
        self.entries
            .lock()
            .unwrap()
            .iter()
            .filter(|r| r.network && !r.from_cache)
            .count()
    }

    /// Calls not served from the cache, regardless of transport.
    pub fn uncached_calls(&self) -> usize {
        self.entries
            .lock()
            .unwrap()
            .iter()
            .filter(|r| !r.from_cache)
            .count()
    }
}

/// The raw completion source behind a [`Backend`].
pub trait Completer: Send + Sync {
    fn complete_raw(&self, request: &CompletionRequest) -> Result<RawCompletion, BackendError>;
    /// True when completions leave the process over the network.
    fn is_network(&self) -> bool;
}

#[derive(Debug)]
pub struct RawCompletion {
    pub text: String,
    pub usage: Option<TokenUsage>,
}

// Counting semaphore; std has Mutex/Condvar but no semaphore.
struct Semaphore {
    permits: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn new(permits: usize) -> Self {
        Self {
            permits: Mutex::new(permits.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> SemaphoreGuard<'_> {
        let mut n = self.permits.lock().unwrap();
        while *n == 0 {
            n = self.cv.wait(n).unwrap();
        }
        *n -= 1;
        SemaphoreGuard { sem: self }
    }
}

struct SemaphoreGuard<'a> {
    sem: &'a Semaphore,
}

impl Drop for SemaphoreGuard<'_> {
    fn drop(&mut self) {
        *self.sem.permits.lock().unwrap() += 1;
        self.sem.cv.notify_one();
    }
}

/// A completion source wrapped with the cache, the concurrency limit, and
/// the call log. Safe to share across worker threads.
pub struct Backend {
    inner: Box<dyn Completer>,
    cache: Option<DiskCache>,
    log: CallLog,
    limiter: Semaphore,
}

impl Backend {
    pub fn new(inner: Box<dyn Completer>) -> Self {
        Self {
            inner,
            cache: None,
            log: CallLog::default(),
            limiter: Semaphore::new(DEFAULT_CONCURRENCY),
        }
    }

    pub fn scripted(rules: Vec<ScriptRule>) -> Result<Self, BackendError> {
        Ok(Self::new(Box::new(ScriptedBackend::new(rules)?)))
    }

    pub fn http(settings: HttpSettings) -> Result<Self, BackendError> {
        Ok(Self::new(Box::new(HttpBackend::new(settings)?)))
    }

    pub fn with_cache(mut self, cache: DiskCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn with_concurrency(mut self, limit: usize) -> Self {
        self.limiter = Semaphore::new(limit);
        self
    }

    pub fn is_network(&self) -> bool {
        self.inner.is_network()
    }

    pub fn call_log(&self) -> &CallLog {
        &self.log
    }

    /// Serve one completion: validate params, consult the cache, call the
    /// underlying source, write back, and log.
    pub fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, BackendError> {
        request.params.validate()?;
        if request.prompt.is_empty() {
            return Err(BackendError::InvalidParams("prompt must be non-empty".into()));
        }
        let digest = cache_key(request);
        let _permit = self.limiter.acquire();

        if let Some(cache) = &self.cache {
            let start = Instant::now();
            if let Some(entry) = cache.get(&digest) {
                self.log.append(CallRecord {
                    digest: digest.clone(),
                    purpose: request.purpose,
                    from_cache: true,
                    network: self.inner.is_network(),
                    timestamp_unix_ms: now_unix_ms(),
                });
                return Ok(CompletionResult {
                    text: entry.text,
                    usage: entry.usage,
                    latency_ms: start.elapsed().as_millis() as u64,
                    from_cache: true,
                });
            }
        }

        let start = Instant::now();
        let raw = self.inner.complete_raw(request)?;
        let latency_ms = start.elapsed().as_millis() as u64;

        if let Some(cache) = &self.cache {
            cache.put(&digest, request, &raw.text, raw.usage)?;
        }
        self.log.append(CallRecord {
            digest,
            purpose: request.purpose,
            from_cache: false,
            network: self.inner.is_network(),
            timestamp_unix_ms: now_unix_ms(),
        });
        Ok(CompletionResult {
            text: raw.text,
            usage: raw.usage,
            latency_ms,
            from_cache: false,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn request(prompt: &str) -> CompletionRequest {
        CompletionRequest::new("m", prompt, SamplingParams::default(), PurposeTag::Init)
    }

    #[test]
    fn sampling_defaults_match_contract() {
        let p = SamplingParams::default();
        assert_eq!(p.max_tokens, 1024);
        assert_eq!(p.temperature, 0.7);
        assert_eq!(p.top_p, 1.0);
        assert!(p.validate().is_ok());
    }

    #[test]
    fn sampling_validation_rejects_out_of_range() {
        let p = SamplingParams { max_tokens: 0, ..Default::default() };
        assert!(p.validate().is_err());
        let p = SamplingParams { temperature: 2.5, ..Default::default() };
        assert!(p.validate().is_err());
        let p = SamplingParams { top_p: 0.0, ..Default::default() };
        assert!(p.validate().is_err());
    }

    #[test]
    fn cache_key_ignores_purpose_tag() {
        let a = request("same prompt");
        let mut b = a.clone();
        b.purpose = PurposeTag::Synth;
        assert_eq!(cache_key(&a), cache_key(&b));
    }

    #[test]
    fn cache_key_sensitive_to_params_and_text() {
        let a = request("same prompt");
        let mut hotter = a.clone();
        hotter.params.temperature = 0.0;
        assert_ne!(cache_key(&a), cache_key(&hotter));
        let other = request("other prompt");
        assert_ne!(cache_key(&a), cache_key(&other));
        assert_eq!(cache_key(&a), cache_key(&a.clone()));
    }

    #[test]
    fn backend_logs_every_call() {
        let backend = Backend::scripted(vec![ScriptRule {
            matcher: Matcher::Contains("prompt".into()),
            response: "ok".into(),
        }])
        .unwrap();
        backend.complete(&request("a prompt")).unwrap();
        backend.complete(&request("a prompt again")).unwrap();
        let log = backend.call_log().snapshot();
        assert_eq!(log.len(), 2);
        assert!(log.iter().all(|r| !r.from_cache && !r.network));
    }

    #[test]
    fn empty_prompt_rejected() {
        let backend = Backend::scripted(vec![ScriptRule {
            matcher: Matcher::Contains("x".into()),
            response: "ok".into(),
        }])
        .unwrap();
        assert!(backend.complete(&request("")).is_err());
    }

    #[test]
    fn concurrent_completions_are_safe() {
        let backend = std::sync::Arc::new(
            Backend::scripted(vec![ScriptRule {
                matcher: Matcher::Contains("p".into()),
                response: "ok".into(),
            }])
            .unwrap()
            .with_concurrency(4),
        );
        std::thread::scope(|s| {
            for i in 0..16 {
                let b = backend.clone();
                s.spawn(move || b.complete(&request(&format!("p{i}"))).unwrap());
            }
        });
        assert_eq!(backend.call_log().len(), 16);
    }
}
