//! JSON-over-HTTP clients for the three model capabilities (`/embed`,
//! `/score`, `/chat`), with a fixture layer that records and replays
//! exchanges so the whole pipeline can run offline.
//!
//! Wire shapes:
//!
//! | endpoint | request | response |
//! |----------|---------|----------|
//! | `/embed` | `{"texts": [..]}` | `{"dimension": d, "embeddings": [[..], ..]}` |
//! | `/score` | `{"query": q, "docs": [{"id", "text"}]}` | `{"scores": [..]}` |
//! | `/chat`  | `{"messages": [{"role", "content"}]}` | `{"content": ".."}` |

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const ENV_EMBED_URL: &str = "PUBRANK_EMBED_URL";
pub const ENV_SCORE_URL: &str = "PUBRANK_SCORE_URL";
pub const ENV_CHAT_URL: &str = "PUBRANK_CHAT_URL";
pub const ENV_FIXTURES_DIR: &str = "PUBRANK_FIXTURES_DIR";
pub const ENV_FIXTURE_MODE: &str = "PUBRANK_FIXTURE_MODE";

/// Tolerance within which a returned vector is silently re-normalized.
pub const RENORMALIZE_TOLERANCE: f64 = 1e-3;
/// Scores this far outside [0, 1] are rejected rather than clamped.
pub const SCORE_RANGE_SLACK: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("service answered HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("invalid request: {0}")]
    Precondition(String),
    #[error("no recorded fixture for {endpoint} request {digest}")]
    FixtureMissing { endpoint: &'static str, digest: String },
    #[error("fixture store: {0}")]
    Fixture(String),
    #[error("client configuration: {0}")]
    Config(String),
}

impl ClientError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, ClientError::Transport(_) | ClientError::Status { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Endpoint {
    Embed,
    Score,
    Chat,
}

impl Endpoint {
    pub fn path(self) -> &'static str {
        match self {
            Endpoint::Embed => "/embed",
            Endpoint::Score => "/score",
            Endpoint::Chat => "/chat",
        }
    }

    fn dir_name(self) -> &'static str {
        &self.path()[1..]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

/// Raw HTTP-level answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireResponse {
    pub status: u16,
    pub body: String,
}

impl WireResponse {
    pub fn ok(body: impl Into<String>) -> Self {
        Self {
            status: 200,
            body: body.into(),
        }
    }
}

/// Sends one JSON request body to an endpoint.
pub trait Transport: Send + Sync {
    fn post(&self, endpoint: Endpoint, body: &str) -> Result<WireResponse, ClientError>;
}

/// Base URLs per endpoint. A URL that already ends in the endpoint path is
/// used verbatim; otherwise the path is appended.
#[derive(Debug, Clone, Default)]
pub struct EndpointUrls {
    pub embed: Option<String>,
    pub score: Option<String>,
    pub chat: Option<String>,
}

impl EndpointUrls {
    pub fn all(base: &str) -> Self {
        Self {
            embed: Some(base.to_string()),
            score: Some(base.to_string()),
            chat: Some(base.to_string()),
        }
    }

    fn url(&self, endpoint: Endpoint) -> Option<String> {
        let base = match endpoint {
            Endpoint::Embed => self.embed.as_ref(),
            Endpoint::Score => self.score.as_ref(),
            Endpoint::Chat => self.chat.as_ref(),
        }?;
        let base = base.trim_end_matches('/');
        if base.ends_with(endpoint.path()) {
            Some(base.to_string())
        } else {
            Some(format!("{base}{}", endpoint.path()))
        }
    }
}

pub struct HttpTransport {
    agent: ureq::Agent,
    urls: EndpointUrls,
    bearer_token: Option<String>,
}

impl HttpTransport {
    pub fn new(urls: EndpointUrls, timeout: Duration) -> Self {
        let agent = ureq::config::Config::builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build()
            .new_agent();
        Self {
            agent,
            urls,
            bearer_token: None,
        }
    }

    pub fn with_bearer_token(mut self, token: Option<String>) -> Self {
        self.bearer_token = token;
        self
    }
}

impl Transport for HttpTransport {
    fn post(&self, endpoint: Endpoint, body: &str) -> Result<WireResponse, ClientError> {
        let url = self
            .urls
            .url(endpoint)
            .ok_or_else(|| ClientError::Config(format!("no URL configured for {}", endpoint.path())))?;
        let mut req = self.agent.post(&url).header("content-type", "application/json");
        if let Some(token) = &self.bearer_token {
            req = req.header("authorization", format!("Bearer {token}"));
        }
        let mut resp = req
            .send(body)
            .map_err(|e| ClientError::Transport(format!("{url}: {e}")))?;
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| ClientError::Transport(format!("{url}: reading body: {e}")))?;
        Ok(WireResponse { status, body })
    }
}

/// Re-serializes JSON with object keys sorted and no whitespace.
pub fn canonical_json(value: &Value) -> String {
    fn write(v: &Value, out: &mut String) {
        match v {
            Value::Object(map) => {
                let mut keys: Vec<&String> = map.keys().collect();
                keys.sort();
                out.push('{');
                for (i, k) in keys.into_iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    out.push_str(&serde_json::to_string(k).expect("strings serialize"));
                    out.push(':');
                    write(&map[k], out);
                }
                out.push('}');
            }
            Value::Array(items) => {
                out.push('[');
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    write(item, out);
                }
                out.push(']');
            }
            other => out.push_str(&serde_json::to_string(other).expect("scalars serialize")),
        }
    }
    let mut out = String::new();
    write(value, &mut out);
    out
}

/// Stable digest of a request: endpoint plus canonicalized body.
pub fn request_digest(endpoint: Endpoint, body: &str) -> Result<String, ClientError> {
    let value: Value = serde_json::from_str(body)
        .map_err(|e| ClientError::Precondition(format!("request body is not JSON: {e}")))?;
    let mut h = Sha256::new();
    h.update(endpoint.path().as_bytes());
    h.update(b"\n");
    h.update(canonical_json(&value).as_bytes());
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FixtureMode {
    Record,
    Replay,
    Passthrough,
}

impl std::str::FromStr for FixtureMode {
    type Err = ClientError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "record" => Ok(FixtureMode::Record),
            "replay" => Ok(FixtureMode::Replay),
            "passthrough" => Ok(FixtureMode::Passthrough),
            other => Err(ClientError::Config(format!("unknown fixture mode {other:?}"))),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct FixtureFile {
    endpoint: String,
    request: Value,
    response: WireResponse,
}

/// Request-digest → recorded response store, usable as a [`Transport`].
///
/// Replay mode is constructed without an inner transport, so it cannot
/// reach the network.
pub struct FixtureStore {
    dir: PathBuf,
    mode: FixtureMode,
    inner: Option<Arc<dyn Transport>>,
    write_lock: Mutex<()>,
    used: Mutex<BTreeSet<String>>,
}

impl FixtureStore {
    pub fn replay(dir: impl Into<PathBuf>) -> Self {
        Self::build(dir.into(), FixtureMode::Replay, None)
    }

    pub fn record(dir: impl Into<PathBuf>, inner: Arc<dyn Transport>) -> Self {
        Self::build(dir.into(), FixtureMode::Record, Some(inner))
    }

    pub fn passthrough(inner: Arc<dyn Transport>) -> Self {
        Self::build(PathBuf::new(), FixtureMode::Passthrough, Some(inner))
    }

    fn build(dir: PathBuf, mode: FixtureMode, inner: Option<Arc<dyn Transport>>) -> Self {
        Self {
            dir,
            mode,
            inner,
            write_lock: Mutex::new(()),
            used: Mutex::new(BTreeSet::new()),
        }
    }

    pub fn mode(&self) -> FixtureMode {
        self.mode
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Digests of every fixture read or written so far, sorted.
    pub fn used_digests(&self) -> Vec<String> {
        self.used.lock().expect("fixture set poisoned").iter().cloned().collect()
    }

    fn path_for(&self, endpoint: Endpoint, digest: &str) -> PathBuf {
        self.dir.join(endpoint.dir_name()).join(format!("{digest}.json"))
    }

    fn lookup(&self, endpoint: Endpoint, digest: &str) -> Result<Option<WireResponse>, ClientError> {
        let path = self.path_for(endpoint, digest);
        match fs::read_to_string(&path) {
            Ok(text) => {
                let f: FixtureFile = serde_json::from_str(&text)
                    .map_err(|e| ClientError::Fixture(format!("{}: {e}", path.display())))?;
                Ok(Some(f.response))
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(ClientError::Fixture(format!("{}: {e}", path.display()))),
        }
    }

    fn store(&self, endpoint: Endpoint, digest: &str, body: &str, resp: &WireResponse) -> Result<(), ClientError> {
        let _guard = self.write_lock.lock().expect("fixture lock poisoned");
        let path = self.path_for(endpoint, digest);
        let parent = path.parent().expect("fixture path has a parent");
        fs::create_dir_all(parent).map_err(|e| ClientError::Fixture(format!("{}: {e}", parent.display())))?;
        let file = FixtureFile {
            endpoint: endpoint.path().to_string(),
            request: serde_json::from_str(body).unwrap_or(Value::Null),
            response: resp.clone(),
        };
        let text = serde_json::to_string_pretty(&file).expect("fixture serializes");
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, text).map_err(|e| ClientError::Fixture(format!("{}: {e}", tmp.display())))?;
        fs::rename(&tmp, &path).map_err(|e| ClientError::Fixture(format!("{}: {e}", path.display())))
    }

    fn mark_used(&self, digest: &str) {
        self.used.lock().expect("fixture set poisoned").insert(digest.to_string());
    }
}

impl Transport for FixtureStore {
    fn post(&self, endpoint: Endpoint, body: &str) -> Result<WireResponse, ClientError> {
        match self.mode {
            FixtureMode::Passthrough => self
                .inner
                .as_ref()
                .expect("passthrough has an inner transport")
                .post(endpoint, body),
            FixtureMode::Replay => {
                let digest = request_digest(endpoint, body)?;
                let resp = self.lookup(endpoint, &digest)?.ok_or(ClientError::FixtureMissing {
                    endpoint: endpoint.path(),
                    digest: digest.clone(),
                })?;
                self.mark_used(&digest);
                Ok(resp)
            }
            FixtureMode::Record => {
                let digest = request_digest(endpoint, body)?;
                let resp = self
                    .inner
                    .as_ref()
                    .expect("record mode has an inner transport")
                    .post(endpoint, body)?;
                // Only successful exchanges are worth replaying.
                if (200..300).contains(&resp.status) {
                    self.store(endpoint, &digest, body, &resp)?;
                    self.mark_used(&digest);
                }
                Ok(resp)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    /// Total attempts, including the first.
    pub attempts: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            initial_backoff: Duration::from_millis(200),
        }
    }
}

/// Counting semaphore bounding concurrent requests.
struct Limiter {
    max: usize,
    in_flight: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a Limiter);

impl Limiter {
    fn new(max: usize) -> Self {
        Self {
            max: max.max(1),
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.in_flight.lock().expect("limiter poisoned");
        while *n >= self.max {
            n = self.freed.wait(n).expect("limiter poisoned");
        }
        *n += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.in_flight.lock().expect("limiter poisoned") -= 1;
        self.0.freed.notify_one();
    }
}

/// Shared client for all three endpoints.
pub struct ServiceClient {
    transport: Arc<dyn Transport>,
    retry: RetryPolicy,
    limiter: Limiter,
}

#[derive(Deserialize)]
struct EmbedResponse {
    dimension: usize,
    embeddings: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
struct ScoreResponse {
    scores: Vec<f64>,
}

#[derive(Deserialize)]
struct ChatResponse {
    content: String,
}

impl ServiceClient {
    pub fn new(transport: Arc<dyn Transport>) -> Self {
        Self {
            transport,
            retry: RetryPolicy::default(),
            limiter: Limiter::new(8),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_max_in_flight(mut self, n: usize) -> Self {
        self.limiter = Limiter::new(n);
        self
    }

    fn call<T: for<'de> Deserialize<'de>>(&self, endpoint: Endpoint, request: &Value) -> Result<T, ClientError> {
        let body = serde_json::to_string(request).expect("requests serialize");
        let attempts = self.retry.attempts.max(1);
        let mut backoff = self.retry.initial_backoff;
        let mut attempt = 1;
        loop {
            let outcome = {
                let _permit = self.limiter.acquire();
                self.transport.post(endpoint, &body)
            };
            let err = match outcome {
                Ok(resp) if (200..300).contains(&resp.status) => {
                    return serde_json::from_str(&resp.body).map_err(|e| {
                        ClientError::Protocol(format!("{} returned a malformed body: {e}", endpoint.path()))
                    });
                }
                Ok(resp) => ClientError::Status {
                    status: resp.status,
                    body: resp.body,
                },
                Err(e) => e,
            };
            if !err.is_retryable() || attempt >= attempts {
                return Err(err);
            }
            log::warn!("{} attempt {attempt} failed, retrying: {err}", endpoint.path());
            std::thread::sleep(backoff);
            backoff *= 2;
            attempt += 1;
        }
    }

    /// Embeds `texts`; every returned vector has the declared dimension and
    /// unit norm.
    pub fn embed<S: AsRef<str>>(&self, texts: &[S]) -> Result<Vec<Vec<f32>>, ClientError> {
        if texts.is_empty() {
            return Err(ClientError::Precondition("no texts to embed".into()));
        }
        let texts: Vec<&str> = texts.iter().map(|t| t.as_ref()).collect();
        let resp: EmbedResponse = self.call(Endpoint::Embed, &json!({ "texts": texts }))?;
        if resp.dimension == 0 {
            return Err(ClientError::Protocol("declared dimension is 0".into()));
        }
        if resp.embeddings.len() != texts.len() {
            return Err(ClientError::Protocol(format!(
                "{} embeddings for {} texts",
                resp.embeddings.len(),
                texts.len()
            )));
        }
        resp.embeddings
            .into_iter()
            .enumerate()
            .map(|(i, v)| {
                if v.len() != resp.dimension {
                    return Err(ClientError::Protocol(format!(
                        "embedding {i} has dimension {} but {} was declared",
                        v.len(),
                        resp.dimension
                    )));
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(ClientError::Protocol(format!("embedding {i} has non-finite values")));
                }
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if (norm - 1.0).abs() > RENORMALIZE_TOLERANCE {
                    return Err(ClientError::Protocol(format!("embedding {i} has norm {norm}")));
                }
                Ok(v.iter().map(|x| (x / norm) as f32).collect())
            })
            .collect()
    }

    /// Relevance of each `(id, text)` document to `query`, aligned by position.
    pub fn score_pairs(&self, query: &str, docs: &[(String, String)]) -> Result<Vec<f64>, ClientError> {
        if docs.is_empty() {
            return Err(ClientError::Precondition("no documents to score".into()));
        }
        let mut seen = HashSet::with_capacity(docs.len());
        for (id, _) in docs {
            if !seen.insert(id.as_str()) {
                return Err(ClientError::Precondition(format!("duplicate document id {id}")));
            }
        }
        let docs_json: Vec<Value> = docs.iter().map(|(id, text)| json!({ "id": id, "text": text })).collect();
        let resp: ScoreResponse = self.call(Endpoint::Score, &json!({ "query": query, "docs": docs_json }))?;
        if resp.scores.len() != docs.len() {
            return Err(ClientError::Protocol(format!(
                "{} scores for {} documents",
                resp.scores.len(),
                docs.len()
            )));
        }
        resp.scores
            .into_iter()
            .enumerate()
            .map(|(i, s)| {
                if !s.is_finite() || !(-SCORE_RANGE_SLACK..=1.0 + SCORE_RANGE_SLACK).contains(&s) {
                    Err(ClientError::Protocol(format!("score {i} = {s} is outside [0, 1]")))
                } else {
                    Ok(s.clamp(0.0, 1.0))
                }
            })
            .collect()
    }

    pub fn chat(&self, messages: &[ChatMessage]) -> Result<String, ClientError> {
        match messages.last() {
            Some(m) if m.role == Role::User => {}
            Some(_) => return Err(ClientError::Precondition("last message must have role user".into())),
            None => return Err(ClientError::Precondition("no messages".into())),
        }
        if let Some(i) = messages
            .iter()
            .position(|m| m.role != Role::System && m.content.trim().is_empty())
        {
            return Err(ClientError::Precondition(format!("message {i} has empty content")));
        }
        let resp: ChatResponse = self.call(Endpoint::Chat, &json!({ "messages": messages }))?;
        if resp.content.trim().is_empty() {
            return Err(ClientError::Protocol("chat returned empty content".into()));
        }
        Ok(resp.content)
    }
}

/// Client settings, normally read from `PUBRANK_*` environment variables.
#[derive(Debug, Clone, Default)]
pub struct ClientConfig {
    pub urls: EndpointUrls,
    pub fixtures_dir: Option<PathBuf>,
    pub fixture_mode: Option<FixtureMode>,
    pub bearer_token: Option<String>,
    pub timeout: Option<Duration>,
    pub retry: RetryPolicy,
    pub max_in_flight: usize,
}

impl ClientConfig {
    pub fn from_env() -> Result<Self, ClientError> {
        let var = |k: &str| std::env::var(k).ok().filter(|v| !v.trim().is_empty());
        Ok(Self {
            urls: EndpointUrls {
                embed: var(ENV_EMBED_URL),
                score: var(ENV_SCORE_URL),
                chat: var(ENV_CHAT_URL),
            },
            fixtures_dir: var(ENV_FIXTURES_DIR).map(PathBuf::from),
            fixture_mode: var(ENV_FIXTURE_MODE).map(|m| m.parse()).transpose()?,
            bearer_token: None,
            timeout: None,
            retry: RetryPolicy::default(),
            max_in_flight: 8,
        })
    }

    /// Effective mode: explicit, else replay when a fixture dir is set,
    /// else passthrough.
    pub fn mode(&self) -> FixtureMode {
        self.fixture_mode.unwrap_or(if self.fixtures_dir.is_some() {
            FixtureMode::Replay
        } else {
            FixtureMode::Passthrough
        })
    }

    /// Builds the transport stack and returns the fixture store (when one is
    /// in use) so callers can report the digests it served.
    pub fn build(&self) -> Result<(ServiceClient, Option<Arc<FixtureStore>>), ClientError> {
        let http = || -> Arc<dyn Transport> {
            Arc::new(
                HttpTransport::new(self.urls.clone(), self.timeout.unwrap_or(Duration::from_secs(120)))
                    .with_bearer_token(self.bearer_token.clone()),
            )
        };
        let mode = self.mode();
        let store = match (mode, &self.fixtures_dir) {
            (FixtureMode::Passthrough, _) => None,
            (_, None) => {
                return Err(ClientError::Config(format!(
                    "fixture mode {mode:?} needs {ENV_FIXTURES_DIR}"
                )))
            }
            (FixtureMode::Replay, Some(dir)) => Some(Arc::new(FixtureStore::replay(dir))),
            (FixtureMode::Record, Some(dir)) => Some(Arc::new(FixtureStore::record(dir, http()))),
        };
        let transport: Arc<dyn Transport> = match &store {
            Some(s) => s.clone(),
            None => http(),
        };
        let client = ServiceClient::new(transport)
            .with_retry(self.retry)
            .with_max_in_flight(self.max_in_flight.max(1));
        Ok((client, store))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    /// Transport answering from a closure and counting calls.
    struct FnTransport<F> {
        f: F,
        calls: AtomicUsize,
    }

    impl<F: Fn(Endpoint, &str) -> WireResponse + Send + Sync> Transport for FnTransport<F> {
        fn post(&self, endpoint: Endpoint, body: &str) -> Result<WireResponse, ClientError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            Ok((self.f)(endpoint, body))
        }
    }

    fn fn_transport<F: Fn(Endpoint, &str) -> WireResponse + Send + Sync + 'static>(f: F) -> Arc<FnTransport<F>> {
        Arc::new(FnTransport {
            f,
            calls: AtomicUsize::new(0),
        })
    }

    fn fast() -> RetryPolicy {
        RetryPolicy {
            attempts: 3,
            initial_backoff: Duration::from_millis(1),
        }
    }

    #[test]
    fn digest_ignores_key_order_and_whitespace() {
        let a = request_digest(Endpoint::Score, r#"{"query":"q","docs":[{"id":"1","text":"t"}]}"#).unwrap();
        let b = request_digest(Endpoint::Score, "{ \"docs\": [ {\"text\": \"t\", \"id\": \"1\"} ], \"query\": \"q\" }").unwrap();
        assert_eq!(a, b);
        let c = request_digest(Endpoint::Chat, r#"{"query":"q","docs":[{"id":"1","text":"t"}]}"#).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn embed_validates_shape() {
        let t = fn_transport(|_, _| WireResponse::ok(r#"{"dimension":2,"embeddings":[[1,0],[0,1],[0.6,0.8]]}"#));
        let client = ServiceClient::new(t.clone());
        let v = client.embed(&["a", "b", "c"]).unwrap();
        assert_eq!(v.len(), 3);
        assert!(matches!(client.embed(&["a", "b"]), Err(ClientError::Protocol(_))));

        let t = fn_transport(|_, _| WireResponse::ok(r#"{"dimension":2,"embeddings":[[1.0005,0]]}"#));
        let v = ServiceClient::new(t).embed(&["a"]).unwrap();
        assert_eq!(v[0], vec![1.0, 0.0]);

        let t = fn_transport(|_, _| WireResponse::ok(r#"{"dimension":2,"embeddings":[[2,0]]}"#));
        assert!(matches!(ServiceClient::new(t).embed(&["a"]), Err(ClientError::Protocol(_))));
    }

    #[test]
    fn score_rejects_duplicates_before_sending() {
        let t = fn_transport(|_, _| WireResponse::ok(r#"{"scores":[0.5,0.5]}"#));
        let client = ServiceClient::new(t.clone());
        let docs = vec![("1".to_string(), "a".to_string()), ("1".to_string(), "b".to_string())];
        assert!(matches!(client.score_pairs("q", &docs), Err(ClientError::Precondition(_))));
        assert_eq!(t.calls.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn score_range_is_enforced() {
        let docs = vec![("1".to_string(), "a".to_string()), ("2".to_string(), "b".to_string())];
        let t = fn_transport(|_, _| WireResponse::ok(r#"{"scores":[1.0000005,-0.0000005]}"#));
        assert_eq!(ServiceClient::new(t).score_pairs("q", &docs).unwrap(), vec![1.0, 0.0]);
        let t = fn_transport(|_, _| WireResponse::ok(r#"{"scores":[1.1,0.2]}"#));
        assert!(matches!(ServiceClient::new(t).score_pairs("q", &docs), Err(ClientError::Protocol(_))));
    }

    #[test]
    fn chat_preconditions() {
        let t = fn_transport(|_, _| WireResponse::ok(r#"{"content":"hi"}"#));
        let client = ServiceClient::new(t.clone());
        let bad = [ChatMessage::user("q"), ChatMessage::assistant("a")];
        assert!(matches!(client.chat(&bad), Err(ClientError::Precondition(_))));
        assert_eq!(client.chat(&[ChatMessage::system("s"), ChatMessage::user("q")]).unwrap(), "hi");

        let t = fn_transport(|_, _| WireResponse::ok(r#"{"content":"  "}"#));
        assert!(matches!(
            ServiceClient::new(t).chat(&[ChatMessage::user("q")]),
            Err(ClientError::Protocol(_))
        ));
    }

    #[test]
    fn non_2xx_is_retried_then_reported() {
        let t = fn_transport(|_, _| WireResponse {
            status: 503,
            body: "busy".into(),
        });
        let client = ServiceClient::new(t.clone()).with_retry(fast());
        let err = client.chat(&[ChatMessage::user("q")]).unwrap_err();
        assert!(matches!(err, ClientError::Status { status: 503, .. }));
        assert_eq!(t.calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn malformed_body_is_fatal_without_retry() {
        let t = fn_transport(|_, _| WireResponse::ok("not json"));
        let client = ServiceClient::new(t.clone()).with_retry(fast());
        assert!(matches!(client.chat(&[ChatMessage::user("q")]), Err(ClientError::Protocol(_))));
        assert_eq!(t.calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn record_then_replay_is_byte_identical_and_offline() {
        let dir = tempfile::tempdir().unwrap();
        let live = fn_transport(|_, body| WireResponse::ok(format!(r#"{{"content":"echo {}"}}"#, body.len())));
        let recorder = Arc::new(FixtureStore::record(dir.path(), live.clone()));
        let recorded = recorder.post(Endpoint::Chat, r#"{"messages":[]}"#).unwrap();
        assert_eq!(live.calls.load(Ordering::SeqCst), 1);

        let replay = FixtureStore::replay(dir.path());
        assert!(replay.inner.is_none());
        let replayed = replay.post(Endpoint::Chat, r#"{ "messages" : [ ] }"#).unwrap();
        assert_eq!(replayed, recorded);
        assert_eq!(replay.used_digests().len(), 1);
        assert!(matches!(
            replay.post(Endpoint::Chat, r#"{"messages":[1]}"#),
            Err(ClientError::FixtureMissing { .. })
        ));
    }

    #[test]
    fn url_joining() {
        let urls = EndpointUrls::all("http://h:1/");
        assert_eq!(urls.url(Endpoint::Embed).unwrap(), "http://h:1/embed");
        let urls = EndpointUrls {
            score: Some("http://h/score".into()),
            ..Default::default()
        };
        assert_eq!(urls.url(Endpoint::Score).unwrap(), "http://h/score");
        assert!(urls.url(Endpoint::Chat).is_none());
    }

    #[test]
    fn limiter_bounds_concurrency() {
        let limiter = Arc::new(Limiter::new(2));
        let peak = Arc::new(AtomicUsize::new(0));
        let current = Arc::new(AtomicUsize::new(0));
        let handles: Vec<_> = (0..8)
            .map(|_| {
                let (l, p, c) = (limiter.clone(), peak.clone(), current.clone());
                std::thread::spawn(move || {
                    let _permit = l.acquire();
                    let now = c.fetch_add(1, Ordering::SeqCst) + 1;
                    p.fetch_max(now, Ordering::SeqCst);
                    std::thread::sleep(Duration::from_millis(5));
                    c.fetch_sub(1, Ordering::SeqCst);
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert!(peak.load(Ordering::SeqCst) <= 2);
    }
}
