//! Judge gateway: yes/no visual questions, integer counts, question lists and
//! free-text completions against a chat-completion endpoint.
//!
//! Every reply is cached under [`cache_key`] so that a warm cache reproduces a
//! run exactly with zero backend calls.

mod backend;
mod cache;
pub mod parse;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use backend::{chat_body, BackendError, ChatBackend, ChatRequest, HttpBackend, StubBackend, StubRule, StubScript};
pub use cache::{ResponseCache, CACHE_FILE};

use crate::artifacts::{sample_uniform, Frame};

/// Decoding temperature. Always 0 for reproducible judging.
pub const TEMPERATURE: f64 = 0.0;

/// `system_context` used for keys of plain text completions.
const TEXT_COMPLETION_CONTEXT: &str = "<text-completion>";

const YES_NO_INSTRUCTION: &str =
    "Respond with a single JSON object of the form {\"answer\": \"yes\"} or {\"answer\": \"no\"} and nothing else.";
const YES_NO_REASK: &str = "Your previous reply could not be parsed. Reply with exactly {\"answer\": \"yes\"} or {\"answer\": \"no\"}.";
const COUNT_INSTRUCTION: &str =
    "Respond with a single JSON object of the form {\"count\": N} where N is a non-negative integer, and nothing else.";
const COUNT_REASK: &str =
    "Your previous reply could not be parsed. Reply with exactly {\"count\": N} for a non-negative integer N.";
const LIST_INSTRUCTION: &str = "Respond with a JSON array of question strings and nothing else.";
const LIST_REASK: &str =
    "Your previous reply could not be parsed. Reply with a JSON array of strings, e.g. [\"...\", \"...\"], or [] if nothing is missing.";

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("invalid gateway configuration: {0}")]
    Config(String),
    #[error("request rejected: {0}")]
    Precondition(&'static str),
    #[error("transport failure after {attempts} attempt(s): {last}")]
    Transport { attempts: u32, last: BackendError },
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("unparseable reply after re-ask: {raw:?}")]
    Unparseable { raw: String },
    #[error("cache i/o on {path}: {source}")]
    Cache {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn default_frames_per_query() -> usize {
    8
}
fn default_max_retries() -> u32 {
    3
}
fn default_timeout() -> f64 {
    120.0
}
fn default_backoff_ms() -> u64 {
    500
}
fn default_in_flight() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatewayConfig {
    pub endpoint_url: String,
    pub model_name: String,
    /// Name of the environment variable holding the API key. Empty means no key.
    #[serde(default)]
    pub api_key_env: String,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_frames_per_query")]
    pub frames_per_query: usize,
    /// Base delay of the exponential backoff between retries.
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
}

impl GatewayConfig {
    pub fn new(endpoint_url: impl Into<String>, model_name: impl Into<String>) -> Self {
        Self {
            endpoint_url: endpoint_url.into(),
            model_name: model_name.into(),
            api_key_env: String::new(),
            max_retries: default_max_retries(),
            timeout_secs: default_timeout(),
            frames_per_query: default_frames_per_query(),
            backoff_ms: default_backoff_ms(),
            max_in_flight: default_in_flight(),
        }
    }

    /// Config for stub runs: no endpoint, no backoff.
    pub fn stub() -> Self {
        Self {
            backoff_ms: 0,
            ..Self::new("stub://", "stub")
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, GatewayError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| GatewayError::Config(format!("{}: {e}", path.display())))?;
        let cfg: Self = serde_json::from_str(&text)
            .map_err(|e| GatewayError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.frames_per_query < 1 {
            return Err(GatewayError::Config("frames_per_query must be at least 1".into()));
        }
        if self.max_in_flight < 1 {
            return Err(GatewayError::Config("max_in_flight must be at least 1".into()));
        }
        if !(self.timeout_secs > 0.0) {
            return Err(GatewayError::Config("timeout_secs must be positive".into()));
        }
        if self.model_name.is_empty() {
            return Err(GatewayError::Config("model_name is empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Yes,
    No,
    Unparseable,
}

impl Verdict {
    /// `a_k` in the QA score: yes is 1, anything else 0.
    pub fn as_point(self) -> u32 {
        (self == Verdict::Yes) as u32
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QARequest {
    pub case_id: String,
    pub system_context: String,
    pub question: String,
    pub frames: Vec<Frame>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAAnswer {
    pub verdict: Verdict,
    pub raw_text: String,
    pub from_cache: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountAnswer {
    pub count: Option<u64>,
    pub raw_text: String,
    pub from_cache: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TextAnswer {
    pub text: String,
    pub from_cache: bool,
}

/// SHA-256 over a length-prefixed concatenation of the inputs, as 64 hex digits.
///
/// Frame order is part of the key.
pub fn cache_key(model_name: &str, system_context: &str, question: &str, frame_hashes: &[String]) -> String {
    let mut h = Sha256::new();
    let mut field = |bytes: &[u8]| {
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(bytes);
    };
    field(b"animetric-cache-v1");
    field(model_name.as_bytes());
    field(system_context.as_bytes());
    field(question.as_bytes());
    field(&(frame_hashes.len() as u64).to_le_bytes());
    for fh in frame_hashes {
        field(fh.as_bytes());
    }
    hex::encode(h.finalize())
}

/// Counting semaphore bounding concurrent backend calls.
struct InFlight {
    slots: Mutex<usize>,
    freed: Condvar,
}

impl InFlight {
    fn new(n: usize) -> Self {
        Self {
            slots: Mutex::new(n),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> InFlightGuard<'_> {
        let mut slots = self.slots.lock().unwrap();
        while *slots == 0 {
            slots = self.freed.wait(slots).unwrap();
        }
        *slots -= 1;
        InFlightGuard(self)
    }
}

struct InFlightGuard<'a>(&'a InFlight);

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        *self.0.slots.lock().unwrap() += 1;
        self.0.freed.notify_one();
    }
}

/// Outcome of a raw query before envelope parsing.
struct Reply {
    text: String,
    from_cache: bool,
}

pub struct Gateway {
    cfg: GatewayConfig,
    backend: Box<dyn ChatBackend>,
    cache: Option<ResponseCache>,
    /// Every (key, response) served during this session, for provenance.
    used: Mutex<BTreeMap<String, String>>,
    backend_calls: AtomicUsize,
    in_flight: InFlight,
}

impl Gateway {
    pub fn new(cfg: GatewayConfig, backend: Box<dyn ChatBackend>) -> Result<Self, GatewayError> {
        cfg.validate()?;
        let in_flight = InFlight::new(cfg.max_in_flight);
        Ok(Self {
            cfg,
            backend,
            cache: None,
            used: Mutex::new(BTreeMap::new()),
            backend_calls: AtomicUsize::new(0),
            in_flight,
        })
    }

    /// Gateway over HTTP; the API key is read from `cfg.api_key_env`.
    pub fn http(cfg: GatewayConfig) -> Result<Self, GatewayError> {
        let api_key = if cfg.api_key_env.is_empty() {
            None
        } else {
            Some(std::env::var(&cfg.api_key_env).map_err(|_| {
                GatewayError::Auth(format!("environment variable {} is not set", cfg.api_key_env))
            })?)
        };
        let backend = HttpBackend::new(&cfg.endpoint_url, api_key, Duration::from_secs_f64(cfg.timeout_secs))
            .map_err(|e| GatewayError::Config(e.to_string()))?;
        Self::new(cfg, Box::new(backend))
    }

    pub fn stub(backend: StubBackend) -> Self {
        Self::new(GatewayConfig::stub(), Box::new(backend)).expect("stub config is valid")
    }

    /// Stub gateway whose backend stays observable by the caller.
    pub fn stub_shared(backend: Arc<StubBackend>) -> Self {
        Self::new(GatewayConfig::stub(), Box::new(backend)).expect("stub config is valid")
    }

    pub fn with_cache_dir(mut self, dir: impl AsRef<Path>) -> Result<Self, GatewayError> {
        let dir = dir.as_ref();
        let cache = ResponseCache::open(dir).map_err(|source| GatewayError::Cache {
            path: dir.display().to_string(),
            source,
        })?;
        self.cache = Some(cache);
        Ok(self)
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.cfg
    }

    pub fn model_name(&self) -> &str {
        &self.cfg.model_name
    }

    pub fn cache_path(&self) -> Option<PathBuf> {
        self.cache.as_ref().map(|c| c.path().to_path_buf())
    }

    /// Backend calls issued by this gateway, retries and re-asks included.
    pub fn backend_calls(&self) -> usize {
        self.backend_calls.load(Ordering::SeqCst)
    }

    /// Digest over every (key, response) pair served so far, independent of
    /// whether each came from the cache or the backend.
    pub fn session_digest(&self) -> String {
        let used = self.used.lock().unwrap();
        let mut h = Sha256::new();
        for (k, v) in used.iter() {
            h.update(k.as_bytes());
            h.update([0]);
            h.update((v.len() as u64).to_le_bytes());
            h.update(v.as_bytes());
        }
        hex::encode(h.finalize())
    }

    fn send_with_retries(&self, req: &ChatRequest<'_>) -> Result<String, GatewayError> {
        let _slot = self.in_flight.acquire();
        let mut attempt = 0u32;
        loop {
            self.backend_calls.fetch_add(1, Ordering::SeqCst);
            match self.backend.send(req) {
                Ok(text) => return Ok(text),
                Err(BackendError::Auth(msg)) => return Err(GatewayError::Auth(msg)),
                Err(e) if e.is_retryable() && attempt < self.cfg.max_retries => {
                    let delay = self.cfg.backoff_ms.saturating_mul(1u64 << attempt.min(16));
                    log::warn!("backend error (attempt {}): {e}; retrying in {delay} ms", attempt + 1);
                    std::thread::sleep(Duration::from_millis(delay));
                    attempt += 1;
                }
                Err(last) => {
                    return Err(GatewayError::Transport {
                        attempts: attempt + 1,
                        last,
                    })
                }
            }
        }
    }

    /// Sends `text`, re-asking once with `reask` appended when `parses` rejects
    /// the reply. The final reply is cached under the key of the first ask.
    fn query(
        &self,
        case_id: Option<&str>,
        system: &str,
        text: &str,
        frames: &[Frame],
        reask: Option<&str>,
        parses: impl Fn(&str) -> bool,
    ) -> Result<Reply, GatewayError> {
        let hashes: Vec<String> = frames.iter().map(Frame::sha256_hex).collect();
        let key = cache_key(&self.cfg.model_name, system, text, &hashes);

        let cached = self.cache.as_ref().and_then(|c| c.get(&key));
        let reply = match cached {
            Some(text) => Reply { text, from_cache: true },
            None => {
                let mut req = ChatRequest {
                    model: &self.cfg.model_name,
                    system,
                    text,
                    frames,
                    case_id,
                };
                let mut out = self.send_with_retries(&req)?;
                if let Some(reask) = reask {
                    if !parses(&out) {
                        let retry_text = format!("{text}\n\n{reask}");
                        req.text = &retry_text;
                        out = self.send_with_retries(&req)?;
                    }
                }
                if let Some(cache) = &self.cache {
                    cache.put(&key, &out).map_err(|source| GatewayError::Cache {
                        path: cache.path().display().to_string(),
                        source,
                    })?;
                }
                Reply {
                    text: out,
                    from_cache: false,
                }
            }
        };
        self.used.lock().unwrap().insert(key, reply.text.clone());
        Ok(reply)
    }

    fn sampled_frames(&self, frames: &[Frame]) -> Vec<Frame> {
        sample_uniform(frames, self.cfg.frames_per_query)
    }

    /// Asks a yes/no question about the attached frames.
    ///
    /// An answer that is still unparseable after one re-ask comes back as
    /// [`Verdict::Unparseable`] with the raw text kept for audit.
    pub fn ask_yes_no(&self, req: &QARequest) -> Result<QAAnswer, GatewayError> {
        if req.question.trim().is_empty() {
            return Err(GatewayError::Precondition("question is empty"));
        }
        if req.frames.is_empty() {
            return Err(GatewayError::Precondition("at least one frame is required"));
        }
        let frames = self.sampled_frames(&req.frames);
        let text = format!("{}\n\n{YES_NO_INSTRUCTION}", req.question.trim());
        let reply = self.query(
            Some(&req.case_id),
            &req.system_context,
            &text,
            &frames,
            Some(YES_NO_REASK),
            |s| parse::parse_yes_no(s).is_some(),
        )?;
        Ok(QAAnswer {
            verdict: parse::parse_yes_no(&reply.text).unwrap_or(Verdict::Unparseable),
            raw_text: reply.text,
            from_cache: reply.from_cache,
        })
    }

    /// Asks for a non-negative integer count, e.g. the number of new actions.
    pub fn ask_count(&self, req: &QARequest) -> Result<CountAnswer, GatewayError> {
        if req.question.trim().is_empty() {
            return Err(GatewayError::Precondition("question is empty"));
        }
        if req.frames.is_empty() {
            return Err(GatewayError::Precondition("at least one frame is required"));
        }
        let frames = self.sampled_frames(&req.frames);
        let text = format!("{}\n\n{COUNT_INSTRUCTION}", req.question.trim());
        let reply = self.query(
            Some(&req.case_id),
            &req.system_context,
            &text,
            &frames,
            Some(COUNT_REASK),
            |s| parse::parse_count(s).is_some(),
        )?;
        Ok(CountAnswer {
            count: parse::parse_count(&reply.text),
            raw_text: reply.text,
            from_cache: reply.from_cache,
        })
    }

    /// Asks for a JSON list of strings; errors if still malformed after one re-ask.
    pub fn ask_string_list(
        &self,
        case_id: Option<&str>,
        system_context: &str,
        instruction: &str,
        frames: &[Frame],
    ) -> Result<(Vec<String>, bool), GatewayError> {
        if frames.is_empty() {
            return Err(GatewayError::Precondition("at least one frame is required"));
        }
        let frames = self.sampled_frames(frames);
        let text = format!("{}\n\n{LIST_INSTRUCTION}", instruction.trim());
        let reply = self.query(
            case_id,
            system_context,
            &text,
            &frames,
            Some(LIST_REASK),
            |s| parse::parse_string_list(s).is_some(),
        )?;
        match parse::parse_string_list(&reply.text) {
            Some(list) => Ok((list, reply.from_cache)),
            None => Err(GatewayError::Unparseable { raw: reply.text }),
        }
    }

    /// Plain text completion, cached like the visual queries.
    pub fn complete_text(&self, prompt: &str) -> Result<TextAnswer, GatewayError> {
        if prompt.trim().is_empty() {
            return Err(GatewayError::Precondition("prompt is empty"));
        }
        let reply = self.query(None, TEXT_COMPLETION_CONTEXT, prompt, &[], None, |_| true)?;
        Ok(TextAnswer {
            text: reply.text,
            from_cache: reply.from_cache,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frames() -> Vec<Frame> {
        (0..3).map(|i| Frame::new(format!("{i}.png"), vec![i as u8; 4])).collect()
    }

    fn req(q: &str) -> QARequest {
        QARequest {
            case_id: "c".into(),
            system_context: "ctx".into(),
            question: q.into(),
            frames: frames(),
        }
    }

    #[test]
    fn stub_yes() {
        let gw = Gateway::stub(StubBackend::fixed(r#"{"answer":"yes"}"#));
        let a = gw.ask_yes_no(&req("Is it round?")).unwrap();
        assert_eq!(a.verdict, Verdict::Yes);
        assert!(!a.from_cache);
    }

    #[test]
    fn prose_wrapped_no() {
        let gw = Gateway::stub(StubBackend::fixed(r#"Answer: {"answer": "no"} because..."#));
        assert_eq!(gw.ask_yes_no(&req("q")).unwrap().verdict, Verdict::No);
    }

    #[test]
    fn maybe_twice_is_unparseable() {
        let stub = Arc::new(StubBackend::sequence(["maybe", "maybe"]));
        let gw = Gateway::stub_shared(stub.clone());
        let a = gw.ask_yes_no(&req("q")).unwrap();
        assert_eq!(a.verdict, Verdict::Unparseable);
        assert_eq!(a.raw_text, "maybe");
        assert_eq!(stub.calls(), 2);
    }

    #[test]
    fn reask_recovers() {
        let gw = Gateway::stub(StubBackend::sequence(["hmm", r#"{"answer":"yes"}"#]));
        assert_eq!(gw.ask_yes_no(&req("q")).unwrap().verdict, Verdict::Yes);
    }

    #[test]
    fn echo_completion() {
        let gw = Gateway::stub(StubBackend::echo());
        assert_eq!(gw.complete_text("abc").unwrap().text, "abc");
        assert!(matches!(gw.complete_text(""), Err(GatewayError::Precondition(_))));
    }

    #[test]
    fn warm_cache_skips_backend() {
        let dir = tempfile::tempdir().unwrap();
        let stub = Arc::new(StubBackend::echo());
        let gw = Gateway::stub_shared(stub.clone()).with_cache_dir(dir.path()).unwrap();
        assert!(!gw.complete_text("abc").unwrap().from_cache);
        let warm = gw.complete_text("abc").unwrap();
        assert!(warm.from_cache);
        assert_eq!(warm.text, "abc");
        assert_eq!(stub.calls(), 1);

        // A fresh gateway over the same directory also hits.
        let stub2 = Arc::new(StubBackend::failing(BackendError::Transport("offline".into())));
        let gw2 = Gateway::stub_shared(stub2.clone()).with_cache_dir(dir.path()).unwrap();
        assert_eq!(gw2.complete_text("abc").unwrap().text, "abc");
        assert_eq!(stub2.calls(), 0);
        assert_eq!(gw.session_digest(), gw2.session_digest());
    }

    #[test]
    fn retries_then_fails() {
        let stub = Arc::new(StubBackend::failing(BackendError::Transport("down".into())));
        let mut cfg = GatewayConfig::stub();
        cfg.max_retries = 2;
        let gw = Gateway::new(cfg, Box::new(stub.clone())).unwrap();
        match gw.complete_text("x") {
            Err(GatewayError::Transport { attempts: 3, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(stub.calls(), 3);
    }

    #[test]
    fn auth_is_not_retried() {
        let stub = Arc::new(StubBackend::failing(BackendError::Auth("bad key".into())));
        let gw = Gateway::stub_shared(stub.clone());
        assert!(matches!(gw.complete_text("x"), Err(GatewayError::Auth(_))));
        assert_eq!(stub.calls(), 1);
    }

    #[test]
    fn cache_key_properties() {
        let h = vec!["aa".to_string(), "bb".to_string()];
        let k1 = cache_key("m", "s", "Is it red?", &h);
        assert_eq!(k1.len(), 64);
        assert!(k1.chars().all(|c| c.is_ascii_hexdigit()));
        assert_eq!(k1, cache_key("m", "s", "Is it red?", &h));
        assert_ne!(k1, cache_key("m", "s", "Is it rad?", &h));
        let swapped = vec!["bb".to_string(), "aa".to_string()];
        assert_ne!(k1, cache_key("m", "s", "Is it red?", &swapped));
        // Field boundaries are unambiguous.
        assert_ne!(cache_key("ab", "c", "q", &[]), cache_key("a", "bc", "q", &[]));
    }

    #[test]
    fn frames_are_sampled() {
        let stub = Arc::new(StubBackend::fixed(r#"{"answer":"yes"}"#));
        let mut cfg = GatewayConfig::stub();
        cfg.frames_per_query = 2;
        let gw = Gateway::new(cfg, Box::new(stub)).unwrap();
        let mut r = req("q");
        r.frames = (0..10).map(|i| Frame::new(format!("{i}.png"), vec![i])).collect();
        gw.ask_yes_no(&r).unwrap();
        let expected = cache_key(
            "stub",
            "ctx",
            &format!("q\n\n{YES_NO_INSTRUCTION}"),
            &[r.frames[2].sha256_hex(), r.frames[7].sha256_hex()],
        );
        assert!(gw.used.lock().unwrap().contains_key(&expected));
    }

    #[test]
    fn count_and_list() {
        let gw = Gateway::stub(StubBackend::fixed(r#"{"count": 2}"#));
        assert_eq!(gw.ask_count(&req("how many?")).unwrap().count, Some(2));
        let gw = Gateway::stub(StubBackend::sequence(["nope", "still nope"]));
        assert!(matches!(
            gw.ask_string_list(None, "s", "list", &frames()),
            Err(GatewayError::Unparseable { .. })
        ));
    }

    #[test]
    fn config_validation() {
        let mut cfg = GatewayConfig::new("http://x", "m");
        cfg.frames_per_query = 0;
        assert!(cfg.validate().is_err());
        let parsed: GatewayConfig =
            serde_json::from_str(r#"{"endpoint_url":"http://x","model_name":"m"}"#).unwrap();
        assert_eq!(parsed.frames_per_query, 8);
        assert_eq!(parsed.max_retries, 3);
    }
}
