//! Language-model reward proxy: query, parse, compare.

mod cache;
mod mock;
mod parse;
mod remote;

use std::collections::HashSet;
use std::path::PathBuf;
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::action::EgoAction;
use crate::error::{Error, Result};
use crate::narrator::{DrivingStyle, PromptBundle};
use crate::sim::SceneState;

pub use cache::{prompt_key, CacheEntry, PromptCache};
pub use mock::{mock_driver, mock_reply};
pub use parse::parse_action;

use remote::{ChatClient, RemoteError};

/// Environment variable holding the bearer token for remote backends.
pub const API_KEY_ENV: &str = "LLM_API_KEY";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Remote,
    Mock,
}

impl std::str::FromStr for Backend {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "remote" => Ok(Backend::Remote),
            "mock" => Ok(Backend::Mock),
            other => Err(format!("unknown backend `{other}` (expected remote or mock)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GatewayConfig {
    pub endpoint_url: String,
    pub model_name: String,
    pub temperature: f64,
    pub timeout_ms: u64,
    pub max_retries: u32,
    /// Delay before the first retry; doubled on each further retry.
    pub backoff_ms: u64,
    /// Response cache file; `None` keeps the cache in memory only.
    pub cache_path: Option<PathBuf>,
    pub backend: Backend,
    /// Upper bound on concurrent remote requests.
    pub max_in_flight: usize,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            endpoint_url: "https://api.openai.com/v1/chat/completions".to_string(),
            model_name: "gpt-3.5-turbo".to_string(),
            temperature: 0.0,
            timeout_ms: 30_000,
            max_retries: 3,
            backoff_ms: 500,
            cache_path: None,
            backend: Backend::Mock,
            max_in_flight: 4,
        }
    }
}

impl GatewayConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature >= 0.0) {
            return Err(Error::config("gateway.temperature", "must be non-negative"));
        }
        if self.max_in_flight == 0 {
            return Err(Error::config("gateway.max_in_flight", "must be at least 1"));
        }
        if self.backend == Backend::Remote && self.endpoint_url.trim().is_empty() {
            return Err(Error::config("gateway.endpoint_url", "required for the remote backend"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VerdictSource {
    Remote,
    Cache,
    Mock,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LlmVerdict {
    /// `None` is a parse failure.
    pub recommended_action: Option<EgoAction>,
    pub raw_text: String,
    pub latency_ms: u64,
    pub source: VerdictSource,
    /// Requests issued for this verdict (0 for cache and mock).
    pub attempts: u32,
    /// Transport or protocol error, when the endpoint could not be used.
    pub error: Option<String>,
}

impl LlmVerdict {
    pub fn is_parse_failure(&self) -> bool {
        self.recommended_action.is_none()
    }

    /// The endpoint was unusable (as opposed to answering without an action).
    pub fn is_hard_failure(&self) -> bool {
        self.error.is_some()
    }

    pub fn mock(action: EgoAction) -> Self {
        Self {
            recommended_action: Some(action),
            raw_text: format!("Final Answer: {}", action.token()),
            latency_ms: 0,
            source: VerdictSource::Mock,
            attempts: 0,
            error: None,
        }
    }
}

/// 1 when the model recommended exactly the agent's action, else 0.
/// Parse failures never match.
pub fn match_reward(verdict: &LlmVerdict, agent_action: EgoAction) -> u8 {
    u8::from(verdict.recommended_action == Some(agent_action))
}

/// Counting semaphore for in-flight remote requests.
struct Slots {
    free: Mutex<usize>,
    cond: Condvar,
}

impl Slots {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n),
            cond: Condvar::new(),
        }
    }

    fn acquire(&self) -> SlotGuard<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cond.wait(free).unwrap();
        }
        *free -= 1;
        SlotGuard(self)
    }
}

struct SlotGuard<'a>(&'a Slots);

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.cond.notify_one();
    }
}

/// Query front end shared by training and evaluation workers.
pub struct Gateway {
    cfg: GatewayConfig,
    cache: Mutex<PromptCache>,
    pending: Mutex<HashSet<String>>,
    pending_done: Condvar,
    slots: Slots,
    client: Option<ChatClient>,
    remote_requests: Mutex<u64>,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway").field("cfg", &self.cfg).finish_non_exhaustive()
    }
}

impl Gateway {
    /// Build a gateway. The remote backend reads its key from `LLM_API_KEY`
    /// and fails immediately when it is missing.
    pub fn new(cfg: GatewayConfig) -> Result<Self> {
        let key = match cfg.backend {
            Backend::Remote => Some(std::env::var(API_KEY_ENV).map_err(|_| {
                Error::Gateway(format!("backend is remote but {API_KEY_ENV} is not set"))
            })?),
            Backend::Mock => None,
        };
        Self::with_api_key(cfg, key)
    }

    /// Build a gateway with an explicit key instead of the environment.
    pub fn with_api_key(cfg: GatewayConfig, api_key: Option<String>) -> Result<Self> {
        cfg.validate()?;
        let cache = match &cfg.cache_path {
            Some(path) => PromptCache::open(path)?,
            None => PromptCache::in_memory(),
        };
        let client = match cfg.backend {
            Backend::Remote => Some(ChatClient::new(
                &cfg.endpoint_url,
                &cfg.model_name,
                cfg.temperature,
                api_key.ok_or_else(|| Error::Gateway(format!("backend is remote but {API_KEY_ENV} is not set")))?,
                Duration::from_millis(cfg.timeout_ms),
                cfg.max_retries,
                Duration::from_millis(cfg.backoff_ms),
            )),
            Backend::Mock => None,
        };
        Ok(Self {
            slots: Slots::new(cfg.max_in_flight),
            cfg,
            cache: Mutex::new(cache),
            pending: Mutex::new(HashSet::new()),
            pending_done: Condvar::new(),
            client,
            remote_requests: Mutex::new(0),
        })
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.cfg
    }

    /// Remote completions issued so far (cache hits excluded).
    pub fn remote_requests(&self) -> u64 {
        *self.remote_requests.lock().unwrap()
    }

    /// Ask for a recommendation. The mock backend answers from `state` and
    /// `style` directly; the remote backend consults the cache first and
    /// stores fresh replies before returning them.
    pub fn query(&self, bundle: &PromptBundle, state: &SceneState, style: &DrivingStyle) -> LlmVerdict {
        match self.cfg.backend {
            Backend::Mock => {
                let raw_text = mock_reply(state, style);
                LlmVerdict {
                    recommended_action: parse_action(&raw_text),
                    raw_text,
                    latency_ms: 0,
                    source: VerdictSource::Mock,
                    attempts: 0,
                    error: None,
                }
            }
            Backend::Remote => self.query_remote(bundle),
        }
    }

    fn cached(&self, key: &str) -> Option<LlmVerdict> {
        let cache = self.cache.lock().unwrap();
        cache.get(key).map(|e| LlmVerdict {
            recommended_action: parse_action(&e.raw_text),
            raw_text: e.raw_text.clone(),
            latency_ms: 0,
            source: VerdictSource::Cache,
            attempts: 0,
            error: None,
        })
    }

    fn query_remote(&self, bundle: &PromptBundle) -> LlmVerdict {
        let rendered = bundle.render();
        let key = prompt_key(&rendered);

        // Identical concurrent prompts wait for the first request instead of
        // issuing their own.
        {
            let mut pending = self.pending.lock().unwrap();
            loop {
                if let Some(v) = self.cached(&key) {
                    return v;
                }
                if !pending.contains(&key) {
                    pending.insert(key.clone());
                    break;
                }
                pending = self.pending_done.wait(pending).unwrap();
            }
        }

        let verdict = self.request(bundle, &rendered, &key);

        self.pending.lock().unwrap().remove(&key);
        self.pending_done.notify_all();
        verdict
    }

    fn request(&self, bundle: &PromptBundle, rendered: &str, key: &str) -> LlmVerdict {
        let client = self.client.as_ref().expect("remote backend has a client");
        let started = Instant::now();
        let reply = {
            let _slot = self.slots.acquire();
            *self.remote_requests.lock().unwrap() += 1;
            client.complete(&bundle.system_message, &bundle.user_message())
        };
        let latency_ms = started.elapsed().as_millis() as u64;
        match reply.result {
            Ok(raw_text) => {
                let mut error = None;
                if let Err(e) = self.cache.lock().unwrap().insert(key.to_string(), rendered, &raw_text) {
                    error = Some(format!("cache write failed: {e}"));
                }
                LlmVerdict {
                    recommended_action: parse_action(&raw_text),
                    raw_text,
                    latency_ms,
                    source: VerdictSource::Remote,
                    attempts: reply.attempts,
                    error,
                }
            }
            Err(RemoteError::Unavailable(msg) | RemoteError::Malformed(msg)) => LlmVerdict {
                recommended_action: None,
                raw_text: String::new(),
                latency_ms,
                source: VerdictSource::Remote,
                attempts: reply.attempts,
                error: Some(msg),
            },
        }
    }
}
