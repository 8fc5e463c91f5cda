//! All LLM communication: chat-completion and embeddings clients against a
//! configurable endpoint, a persistent response cache, a retry policy, and
//! a deterministic scripted mock provider for hermetic testing.
//!
//! Every call goes through [`LlmGateway::complete`] / [`LlmGateway::embed`],
//! which consult the cache first and count actual provider dispatches in an
//! instrumented counter. The gateway is safe to call from multiple workers.

mod cache;
mod http;
mod mock;

pub use cache::{CacheEntry, DiskCache};
pub use mock::{MockMatcher, MockReply, MockScript};

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, OnceLock};
use std::time::Duration;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::compare::{CompareError, EmbeddingProvider, HashedBagOfWords};

/// Default path of the bearer-token file for remote endpoints.
pub const DEFAULT_TOKEN_PATH: &str = "security/token-key.jwt";
/// Environment variable overriding the token file path.
pub const TOKEN_PATH_ENV: &str = "MORPHTEST_TOKEN_FILE";
/// Model sent to the embeddings endpoint.
pub const DEFAULT_EMBEDDING_MODEL: &str = "text-embedding-3-small";

#[derive(Debug, Error)]
pub enum GatewayError {
    /// Transport-level failure (connection, 5xx, malformed response body).
    #[error("transport error: {0}")]
    Transport(String),
    /// The endpoint asked us to slow down (HTTP 429).
    #[error("rate limited: {0}")]
    RateLimited(String),
    /// Authentication rejected; never retried.
    #[error("authentication failure: {0}")]
    AuthFailure(String),
    /// The provider returned an empty completion.
    #[error("empty response from provider")]
    EmptyResponse,
    /// Retries exhausted; carries the last underlying error.
    #[error("llm unreachable after {attempts} attempts: {source}")]
    LlmUnreachable {
        attempts: u32,
        #[source]
        source: Box<GatewayError>,
    },
    #[error("embedding unavailable: {0}")]
    EmbeddingUnavailable(String),
    #[error("cache io: {0}")]
    CacheIo(#[from] std::io::Error),
}

impl GatewayError {
    /// Transport errors and rate limits are worth another attempt.
    pub fn is_retryable(&self) -> bool {
        matches!(self, Self::Transport(_) | Self::RateLimited(_))
    }

    /// Errors that make the whole campaign meaningless.
    pub fn is_fatal(&self) -> bool {
        matches!(self, Self::LlmUnreachable { .. } | Self::AuthFailure(_))
    }
}

/// Retry with exponential backoff on transient errors.
#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_backoff: Duration,
    pub max_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_backoff: Duration::from_millis(250),
            max_backoff: Duration::from_secs(4),
        }
    }
}

impl RetryPolicy {
    /// No waiting between attempts; for tests.
    pub fn immediate(max_attempts: u32) -> Self {
        Self {
            max_attempts,
            base_backoff: Duration::ZERO,
            max_backoff: Duration::ZERO,
        }
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let factor = 1u32 << attempt.min(16);
        (self.base_backoff * factor).min(self.max_backoff)
    }
}

/// Run `call` under the retry policy. Retries transport errors and rate
/// limits; auth failures and empty responses return immediately.
pub fn with_retry<T>(
    policy: &RetryPolicy,
    mut call: impl FnMut() -> Result<T, GatewayError>,
) -> Result<T, GatewayError> {
    assert!(policy.max_attempts >= 1, "retry policy needs at least one attempt");
    let mut attempt = 0;
    loop {
        match call() {
            Ok(value) => return Ok(value),
            Err(err) if !err.is_retryable() => return Err(err),
            Err(err) => {
                attempt += 1;
                if attempt >= policy.max_attempts {
                    return Err(GatewayError::LlmUnreachable {
                        attempts: attempt,
                        source: Box::new(err),
                    });
                }
                std::thread::sleep(policy.backoff(attempt - 1));
            }
        }
    }
}

/// Sampling parameters sent with completion requests.
#[derive(Debug, Clone, PartialEq)]
pub struct Sampling {
    /// 0 by default, for maximal determinism.
    pub temperature: f64,
    pub max_tokens: Option<u32>,
}

impl Default for Sampling {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            max_tokens: None,
        }
    }
}

/// Backing provider of an [`LlmHandle`].
#[derive(Clone)]
pub enum ProviderKind {
    Remote,
    ScriptedMock(Arc<MockScript>),
}

impl std::fmt::Debug for ProviderKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Remote => f.write_str("Remote"),
            Self::ScriptedMock(_) => f.write_str("ScriptedMock"),
        }
    }
}

/// One addressable LLM: a model id plus how to reach it.
#[derive(Debug, Clone)]
pub struct LlmHandle {
    pub model_id: String,
    pub endpoint: String,
    pub provider_kind: ProviderKind,
    pub sampling: Sampling,
    pub auth_token_path: PathBuf,
}

impl LlmHandle {
    pub fn remote(model_id: &str, endpoint: &str, auth_token_path: &Path) -> Self {
        Self {
            model_id: model_id.to_string(),
            endpoint: endpoint.trim_end_matches('/').to_string(),
            provider_kind: ProviderKind::Remote,
            sampling: Sampling::default(),
            auth_token_path: auth_token_path.to_path_buf(),
        }
    }

    pub fn scripted(model_id: &str, script: Arc<MockScript>) -> Self {
        Self {
            model_id: model_id.to_string(),
            endpoint: String::new(),
            provider_kind: ProviderKind::ScriptedMock(script),
            sampling: Sampling::default(),
            auth_token_path: PathBuf::new(),
        }
    }

    /// The token file path, honoring the environment override.
    pub fn token_path(&self) -> PathBuf {
        match std::env::var(TOKEN_PATH_ENV) {
            Ok(p) if !p.is_empty() => PathBuf::from(p),
            _ => self.auth_token_path.clone(),
        }
    }
}

/// Shared client for completions and embeddings, with caching, retry,
/// and an instrumented dispatch counter.
pub struct LlmGateway {
    cache: Option<DiskCache>,
    retry: RetryPolicy,
    http: OnceLock<http::HttpBackend>,
    offline_embedder: HashedBagOfWords,
    provider_calls: AtomicU64,
}

impl LlmGateway {
    pub fn new(cache_dir: Option<PathBuf>, retry: RetryPolicy) -> Self {
        Self {
            cache: cache_dir.map(DiskCache::new),
            retry,
            http: OnceLock::new(),
            offline_embedder: HashedBagOfWords::default(),
            provider_calls: AtomicU64::new(0),
        }
    }

    /// Gateway with no cache and default retry; for direct use in tests.
    pub fn uncached() -> Self {
        Self::new(None, RetryPolicy::immediate(1))
    }

    /// Number of actual provider dispatches (cache misses) so far.
    pub fn provider_calls(&self) -> u64 {
        self.provider_calls.load(Ordering::SeqCst)
    }

    fn http(&self) -> &http::HttpBackend {
        self.http.get_or_init(http::HttpBackend::new)
    }

    /// Query the LLM once with `prompt`, via the cache.
    ///
    /// Never returns an empty completion: blank responses raise
    /// [`GatewayError::EmptyResponse`] and are not cached.
    pub fn complete(&self, handle: &LlmHandle, prompt: &str) -> Result<String, GatewayError> {
        let key = cache_key("chat", handle, prompt);
        if let Some(cache) = &self.cache {
            if let Some(hit) = cache.get(&key) {
                return Ok(hit);
            }
        }
        let response = with_retry(&self.retry, || {
            self.provider_calls.fetch_add(1, Ordering::SeqCst);
            match &handle.provider_kind {
                ProviderKind::Remote => self.http().complete(handle, prompt),
                ProviderKind::ScriptedMock(script) => script.respond(prompt),
            }
        })?;
        if response.trim().is_empty() {
            return Err(GatewayError::EmptyResponse);
        }
        if let Some(cache) = &self.cache {
            cache.put(&key, &response)?;
        }
        Ok(response)
    }

    /// Embed `text`, via the cache. Scripted handles use the deterministic
    /// offline bag-of-words embedder; remote handles call the endpoint.
    pub fn embed(&self, handle: &LlmHandle, text: &str) -> Result<Vec<f64>, GatewayError> {
        let key = cache_key("embed", handle, text);
        if let Some(cache) = &self.cache {
            if let Some(hit) = cache.get(&key) {
                if let Ok(vector) = serde_json::from_str::<Vec<f64>>(&hit) {
                    return Ok(vector);
                }
            }
        }
        let vector = with_retry(&self.retry, || {
            self.provider_calls.fetch_add(1, Ordering::SeqCst);
            match &handle.provider_kind {
                ProviderKind::Remote => self.http().embed(handle, text),
                ProviderKind::ScriptedMock(_) => Ok(self.offline_embedder.vector(text)),
            }
        })?;
        if let Some(cache) = &self.cache {
            let encoded = serde_json::to_string(&vector)
                .map_err(|e| GatewayError::Transport(e.to_string()))?;
            cache.put(&key, &encoded)?;
        }
        Ok(vector)
    }
}

fn cache_key(kind: &str, handle: &LlmHandle, payload: &str) -> String {
    let mut hasher = Sha256::new();
    for part in [
        kind,
        &handle.model_id,
        &handle.endpoint,
        payload,
        &format!("{:?}:{:?}", handle.sampling.temperature, handle.sampling.max_tokens),
    ] {
        hasher.update(part.as_bytes());
        hasher.update([0]);
    }
    hex_digest(&hasher.finalize())
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Embedding provider backed by a gateway handle, so semantic comparison
/// shares the gateway's cache, retries, and call counter.
pub struct GatewayEmbeddings {
    pub gateway: Arc<LlmGateway>,
    pub handle: LlmHandle,
}

impl EmbeddingProvider for GatewayEmbeddings {
    fn embed(&self, text: &str) -> Result<Vec<f64>, CompareError> {
        self.gateway
            .embed(&self.handle, text)
            .map_err(|e| CompareError::EmbeddingUnavailable(e.to_string()))
    }
}
