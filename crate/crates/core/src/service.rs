//! Newline-delimited JSON server that stores protected templates, trains
//! one-vs-rest models and answers authentication queries. The server never
//! sees keys; any request mentioning seed or keyring material is refused.
//!
//! Every request line is `{"op": ..., "payload": {...}}` and gets exactly
//! one response line, either `{"op":"result","payload":{...}}` or
//! `{"op":"error","payload":{"code":"...","message":"..."}}`.
//!
//! | op | payload | result |
//! |----|---------|--------|
//! | `enroll` | `{"client_id", "templates": [{"sample_id", "key_id", "vector"}]}` | `{"stored", "total"}` |
//! | `train` | `{}` | `{"models": [{"client_id", "support_vectors"}]}` |
//! | `authenticate` | `{"client_id", "key_id"?, "vector", "tau"}` | `{"decision", "score"}` |
//!
//! The channel is plain TCP without encryption.

use std::collections::BTreeMap;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::thread::{self, JoinHandle};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::kernels::KernelSpec;
use crate::store::{load_templates, save_templates, StoreError, TemplateSet, MANIFEST_FILE};
use crate::svm::{authenticate, train_one_vs_rest, Decision, SolverConfig, SvmError, SvmModel};
use crate::transform::ProtectedTemplate;

/// Longest accepted request line in bytes.
pub const MAX_LINE_BYTES: u64 = 64 << 20;

/// Object keys that mark secret material.
const FORBIDDEN_KEYS: [&str; 4] = ["seed", "seeds", "master_seed", "keyring"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ErrorCode {
    BadRequest,
    BadPayload,
    DimMismatch,
    InsufficientData,
    UnknownClient,
    NotTrained,
    TrainFailed,
    StoreIo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireError {
    pub code: ErrorCode,
    pub message: String,
}

impl WireError {
    fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireTemplate {
    pub sample_id: String,
    pub key_id: String,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnrollRequest {
    pub client_id: String,
    pub templates: Vec<WireTemplate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuthenticateRequest {
    pub client_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key_id: Option<String>,
    pub vector: Vec<f64>,
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnrollAck {
    pub stored: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub client_id: String,
    pub support_vectors: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub models: Vec<ModelSummary>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuthResult {
    pub decision: Decision,
    pub score: f64,
}

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub kernel: KernelSpec,
    pub solver: SolverConfig,
    /// Directory of the server-side template store; `None` keeps it in memory.
    pub store_dir: Option<PathBuf>,
}

type Models = Arc<BTreeMap<String, SvmModel>>;

/// Server state shared by all connections.
pub struct ServerState {
    config: ServerConfig,
    store: Mutex<Vec<ProtectedTemplate>>,
    models: RwLock<Option<Models>>,
}

impl ServerState {
    /// Reloads the template store from `config.store_dir` when one exists.
    pub fn new(config: ServerConfig) -> Result<Self, StoreError> {
        let mut templates = Vec::new();
        if let Some(dir) = &config.store_dir {
            if dir.join(MANIFEST_FILE).exists() {
                templates = match load_templates(dir)? {
                    TemplateSet::Protected(v) => v,
                    TemplateSet::Plain(v) if v.is_empty() => Vec::new(),
                    TemplateSet::Plain(_) => {
                        return Err(StoreError::ManifestMismatch("server store must hold protected templates".into()))
                    }
                };
            }
        }
        Ok(Self { config, store: Mutex::new(templates), models: RwLock::new(None) })
    }

    pub fn in_memory(kernel: KernelSpec, solver: SolverConfig) -> Self {
        Self::new(ServerConfig { kernel, solver, store_dir: None }).expect("no store to load")
    }

    pub fn template_count(&self) -> usize {
        self.store.lock().expect("store lock").len()
    }

    fn enroll(&self, req: EnrollRequest) -> Result<EnrollAck, WireError> {
        if req.client_id.is_empty() {
            return Err(WireError::new(ErrorCode::BadPayload, "client_id is empty"));
        }
        if req.templates.is_empty() {
            return Err(WireError::new(ErrorCode::BadPayload, "no templates"));
        }
        let mut store = self.store.lock().expect("store lock");
        let dim = store.first().map(|t| t.values.len()).unwrap_or(req.templates[0].vector.len());
        for t in &req.templates {
            if t.key_id.is_empty() || t.sample_id.is_empty() {
                return Err(WireError::new(ErrorCode::BadPayload, "sample_id and key_id must be non-empty"));
            }
            if t.vector.is_empty() || t.vector.len() != dim {
                return Err(WireError::new(
                    ErrorCode::DimMismatch,
                    format!("expected dimension {dim}, got {}", t.vector.len()),
                ));
            }
        }
        let mut next = store.clone();
        for t in req.templates.iter() {
            let entry = ProtectedTemplate {
                client_id: req.client_id.clone(),
                sample_id: t.sample_id.clone(),
                key_id: t.key_id.clone(),
                values: t.vector.clone(),
            };
            match next.iter_mut().find(|e| e.client_id == entry.client_id && e.sample_id == entry.sample_id) {
                Some(existing) => *existing = entry,
                None => next.push(entry),
            }
        }
        if let Some(dir) = &self.config.store_dir {
            save_templates(dir, &TemplateSet::Protected(next.clone()), None)
                .map_err(|e| WireError::new(ErrorCode::StoreIo, e.to_string()))?;
        }
        *store = next;
        Ok(EnrollAck { stored: req.templates.len(), total: store.len() })
    }

    fn train(&self) -> Result<TrainSummary, WireError> {
        let store = self.store.lock().expect("store lock");
        let models = train_one_vs_rest(&store, &self.config.kernel, &self.config.solver).map_err(|e| match e {
            SvmError::NotEnoughClients(n) => {
                WireError::new(ErrorCode::InsufficientData, format!("need at least 2 enrolled clients, have {n}"))
            }
            other => WireError::new(ErrorCode::TrainFailed, other.to_string()),
        })?;
        let summary = TrainSummary {
            models: models
                .iter()
                .map(|(c, m)| ModelSummary { client_id: c.clone(), support_vectors: m.support_vectors.len() })
                .collect(),
        };
        *self.models.write().expect("models lock") = Some(Arc::new(models));
        Ok(summary)
    }

    fn authenticate(&self, req: AuthenticateRequest) -> Result<AuthResult, WireError> {
        if !req.tau.is_finite() {
            return Err(WireError::new(ErrorCode::BadPayload, "tau must be finite"));
        }
        let models = self
            .models
            .read()
            .expect("models lock")
            .clone()
            .ok_or_else(|| WireError::new(ErrorCode::NotTrained, "no models; send train first"))?;
        let model = models
            .get(&req.client_id)
            .ok_or_else(|| WireError::new(ErrorCode::UnknownClient, format!("no model for {}", req.client_id)))?;
        let (decision, score) = authenticate(model, &req.vector, req.tau).map_err(|e| match e {
            SvmError::DimensionMismatch { .. } => WireError::new(ErrorCode::DimMismatch, e.to_string()),
            other => WireError::new(ErrorCode::BadPayload, other.to_string()),
        })?;
        Ok(AuthResult { decision, score })
    }
}

fn find_forbidden(v: &Value) -> Option<&str> {
    match v {
        Value::Object(map) => map.iter().find_map(|(k, v)| {
            let lower = k.to_ascii_lowercase();
            FORBIDDEN_KEYS.iter().find(|f| **f == lower).copied().or_else(|| find_forbidden(v))
        }),
        Value::Array(items) => items.iter().find_map(find_forbidden),
        _ => None,
    }
}

fn payload<T: serde::de::DeserializeOwned>(v: Value) -> Result<T, WireError> {
    serde_json::from_value(v).map_err(|e| WireError::new(ErrorCode::BadPayload, e.to_string()))
}

fn to_value<T: Serialize>(r: Result<T, WireError>) -> Result<Value, WireError> {
    r.map(|v| serde_json::to_value(v).expect("result serializes"))
}

fn dispatch(state: &ServerState, line: &[u8]) -> Result<Value, WireError> {
    let text = std::str::from_utf8(line).map_err(|_| WireError::new(ErrorCode::BadRequest, "line is not UTF-8"))?;
    let value: Value =
        serde_json::from_str(text).map_err(|e| WireError::new(ErrorCode::BadRequest, format!("invalid JSON: {e}")))?;
    if let Some(key) = find_forbidden(&value) {
        return Err(WireError::new(ErrorCode::BadPayload, format!("secret material ({key}) is never accepted")));
    }
    let Value::Object(mut obj) = value else {
        return Err(WireError::new(ErrorCode::BadRequest, "request must be a JSON object"));
    };
    let op = match obj.remove("op") {
        Some(Value::String(op)) => op,
        _ => return Err(WireError::new(ErrorCode::BadRequest, "missing string field op")),
    };
    let body = obj.remove("payload").unwrap_or_else(|| json!({}));
    if let Some(extra) = obj.keys().next() {
        return Err(WireError::new(ErrorCode::BadRequest, format!("unknown field {extra}")));
    }
    match op.as_str() {
        "enroll" => to_value(state.enroll(payload(body)?)),
        "train" => {
            if !body.as_object().is_some_and(|m| m.is_empty()) {
                return Err(WireError::new(ErrorCode::BadPayload, "train takes an empty payload"));
            }
            to_value(state.train())
        }
        "authenticate" => to_value(state.authenticate(payload(body)?)),
        other => Err(WireError::new(ErrorCode::BadRequest, format!("unknown op {other:?}"))),
    }
}

/// Handles one request line (without its newline) and returns the response
/// line (without a newline). Never panics on malformed input.
pub fn handle_line(state: &ServerState, line: &[u8]) -> String {
    let response = match dispatch(state, line) {
        Ok(payload) => json!({"op": "result", "payload": payload}),
        Err(e) => json!({"op": "error", "payload": e}),
    };
    response.to_string()
}

fn serve_connection(state: &ServerState, stream: TcpStream) -> io::Result<()> {
    let mut writer = stream.try_clone()?;
    let mut reader = BufReader::new(stream);
    let mut line = Vec::new();
    loop {
        line.clear();
        let n = (&mut reader).take(MAX_LINE_BYTES).read_until(b'\n', &mut line)?;
        if n == 0 {
            return Ok(());
        }
        let overlong = line.last() != Some(&b'\n') && n as u64 == MAX_LINE_BYTES;
        let body = line.strip_suffix(b"\n").unwrap_or(&line);
        let body = body.strip_suffix(b"\r").unwrap_or(body);
        let mut response = if overlong {
            json!({"op": "error", "payload": WireError::new(ErrorCode::BadRequest, "line too long")}).to_string()
        } else {
            handle_line(state, body)
        };
        response.push('\n');
        writer.write_all(response.as_bytes())?;
        writer.flush()?;
        if overlong {
            return Ok(());
        }
    }
}

pub struct Server {
    listener: TcpListener,
    state: Arc<ServerState>,
}

impl Server {
    pub fn bind(addr: impl ToSocketAddrs, state: ServerState) -> io::Result<Self> {
        Ok(Self { listener: TcpListener::bind(addr)?, state: Arc::new(state) })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    /// Accepts connections until `stop` is set, one thread per connection.
    fn accept_loop(self, stop: Arc<AtomicBool>) {
        for stream in self.listener.incoming() {
            if stop.load(Ordering::SeqCst) {
                break;
            }
            let Ok(stream) = stream else { continue };
            let state = Arc::clone(&self.state);
            thread::spawn(move || {
                let _ = serve_connection(&state, stream);
            });
        }
    }

    /// Serves on the current thread forever.
    pub fn run(self) {
        self.accept_loop(Arc::new(AtomicBool::new(false)));
    }

    /// Serves on a background thread.
    pub fn spawn(self) -> io::Result<ServerHandle> {
        let addr = self.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = Arc::clone(&stop);
        let join = thread::spawn(move || self.accept_loop(flag));
        Ok(ServerHandle { addr, stop, join: Some(join) })
    }
}

pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    join: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stops accepting connections. Open connections finish on their own.
    pub fn shutdown(mut self) {
        self.stop_now();
    }

    fn stop_now(&mut self) {
        if let Some(join) = self.join.take() {
            self.stop.store(true, Ordering::SeqCst);
            // wake the blocking accept
            let _ = TcpStream::connect(self.addr);
            let _ = join.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop_now();
    }
}

#[derive(Debug, Error)]
pub enum ClientError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("server error {code:?}: {message}")]
    Remote { code: ErrorCode, message: String },
}

/// Blocking protocol client. Every byte sent and received is kept in a
/// transcript for inspection.
pub struct Client {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
    transcript: Vec<u8>,
}

impl Client {
    pub fn connect(addr: impl ToSocketAddrs) -> io::Result<Self> {
        let stream = TcpStream::connect(addr)?;
        Ok(Self { writer: stream.try_clone()?, reader: BufReader::new(stream), transcript: Vec::new() })
    }

    pub fn transcript(&self) -> &[u8] {
        &self.transcript
    }

    /// Sends one raw line and returns the raw response line.
    pub fn send_raw(&mut self, line: &[u8]) -> Result<String, ClientError> {
        let mut out = line.to_vec();
        out.push(b'\n');
        self.writer.write_all(&out)?;
        self.writer.flush()?;
        self.transcript.extend_from_slice(&out);
        let mut response = Vec::new();
        self.reader.read_until(b'\n', &mut response)?;
        self.transcript.extend_from_slice(&response);
        if response.last() != Some(&b'\n') {
            return Err(ClientError::Protocol("connection closed mid-response".into()));
        }
        response.pop();
        String::from_utf8(response).map_err(|_| ClientError::Protocol("response is not UTF-8".into()))
    }

    /// Sends a request and returns the result payload.
    pub fn request(&mut self, op: &str, body: Value) -> Result<Value, ClientError> {
        let line = json!({"op": op, "payload": body}).to_string();
        let text = self.send_raw(line.as_bytes())?;
        let mut v: Value = serde_json::from_str(&text).map_err(|e| ClientError::Protocol(e.to_string()))?;
        let body = v.get_mut("payload").map(Value::take).unwrap_or(Value::Null);
        match v.get("op").and_then(Value::as_str) {
            Some("result") => Ok(body),
            Some("error") => {
                let e: WireError = serde_json::from_value(body).map_err(|e| ClientError::Protocol(e.to_string()))?;
                Err(ClientError::Remote { code: e.code, message: e.message })
            }
            _ => Err(ClientError::Protocol(format!("unexpected response {text}"))),
        }
    }

    fn typed<T: serde::de::DeserializeOwned>(v: Value) -> Result<T, ClientError> {
        serde_json::from_value(v).map_err(|e| ClientError::Protocol(e.to_string()))
    }

    /// Enrolls templates, all of which must belong to `client_id`.
    pub fn enroll(&mut self, client_id: &str, templates: &[ProtectedTemplate]) -> Result<EnrollAck, ClientError> {
        if let Some(t) = templates.iter().find(|t| t.client_id != client_id) {
            return Err(ClientError::Protocol(format!("template of {} in enrollment for {client_id}", t.client_id)));
        }
        let req = EnrollRequest {
            client_id: client_id.to_string(),
            templates: templates
                .iter()
                .map(|t| WireTemplate { sample_id: t.sample_id.clone(), key_id: t.key_id.clone(), vector: t.values.clone() })
                .collect(),
        };
        Self::typed(self.request("enroll", serde_json::to_value(req).expect("request serializes"))?)
    }

    pub fn train(&mut self) -> Result<TrainSummary, ClientError> {
        Self::typed(self.request("train", json!({}))?)
    }

    pub fn authenticate(&mut self, claimed: &str, query: &ProtectedTemplate, tau: f64) -> Result<AuthResult, ClientError> {
        let req = AuthenticateRequest {
            client_id: claimed.to_string(),
            key_id: Some(query.key_id.clone()),
            vector: query.values.clone(),
            tau,
        };
        Self::typed(self.request("authenticate", serde_json::to_value(req).expect("request serializes"))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state() -> ServerState {
        ServerState::in_memory(KernelSpec::Linear, SolverConfig::default())
    }

    fn call(s: &ServerState, line: &str) -> Value {
        serde_json::from_str(&handle_line(s, line.as_bytes())).unwrap()
    }

    fn code(v: &Value) -> &str {
        assert_eq!(v["op"], "error", "{v}");
        v["payload"]["code"].as_str().unwrap()
    }

    fn enroll_line(client: &str, vectors: &[&[f64]]) -> String {
        let templates: Vec<Value> = vectors
            .iter()
            .enumerate()
            .map(|(k, v)| json!({"sample_id": format!("s{k}"), "key_id": format!("k-{client}"), "vector": v}))
            .collect();
        json!({"op": "enroll", "payload": {"client_id": client, "templates": templates}}).to_string()
    }

    #[test]
    fn enroll_acks_count() {
        let s = state();
        let v = call(&s, &enroll_line("a", &[&[1.0, 0.0], &[0.9, 0.1]]));
        assert_eq!(v["op"], "result");
        assert_eq!(v["payload"]["stored"], 2);
        assert_eq!(v["payload"]["total"], 2);
    }

    #[test]
    fn enroll_wrong_dim() {
        let s = state();
        call(&s, &enroll_line("a", &[&[1.0, 0.0]]));
        assert_eq!(code(&call(&s, &enroll_line("b", &[&[1.0, 0.0, 0.0]]))), "DIM_MISMATCH");
        assert_eq!(s.template_count(), 1);
    }

    #[test]
    fn secrets_refused() {
        let s = state();
        let line = r#"{"op":"enroll","payload":{"client_id":"a","seed":5,"templates":[]}}"#;
        assert_eq!(code(&call(&s, line)), "BAD_PAYLOAD");
        let nested = r#"{"op":"authenticate","payload":{"client_id":"a","vector":[1],"tau":0,"x":[{"Keyring":{}}]}}"#;
        assert_eq!(code(&call(&s, nested)), "BAD_PAYLOAD");
        assert_eq!(code(&call(&s, r#"{"op":"train","master_seed":1}"#)), "BAD_PAYLOAD");
        assert_eq!(s.template_count(), 0);
    }

    #[test]
    fn train_needs_two_clients() {
        let s = state();
        assert_eq!(code(&call(&s, r#"{"op":"train"}"#)), "INSUFFICIENT_DATA");
        call(&s, &enroll_line("a", &[&[1.0, 0.0]]));
        assert_eq!(code(&call(&s, r#"{"op":"train","payload":{}}"#)), "INSUFFICIENT_DATA");
        call(&s, &enroll_line("b", &[&[-1.0, 0.0]]));
        let first = call(&s, r#"{"op":"train"}"#);
        assert_eq!(first["payload"]["models"].as_array().unwrap().len(), 2);
        assert_eq!(first, call(&s, r#"{"op":"train"}"#));
    }

    #[test]
    fn authenticate_paths() {
        let s = state();
        let auth = |client: &str, v: &[f64]| {
            json!({"op": "authenticate", "payload": {"client_id": client, "vector": v, "tau": 0.0}}).to_string()
        };
        assert_eq!(code(&call(&s, &auth("a", &[1.0, 0.0]))), "NOT_TRAINED");
        call(&s, &enroll_line("a", &[&[1.0, 0.0]]));
        call(&s, &enroll_line("b", &[&[-1.0, 0.0]]));
        call(&s, r#"{"op":"train"}"#);
        let v = call(&s, &auth("a", &[1.0, 0.0]));
        assert_eq!(v["payload"]["decision"], "accept");
        assert_eq!(v["payload"]["score"], 1.0);
        assert_eq!(call(&s, &auth("a", &[-1.0, 0.0]))["payload"]["decision"], "reject");
        assert_eq!(code(&call(&s, &auth("zed", &[1.0, 0.0]))), "UNKNOWN_CLIENT");
        assert_eq!(code(&call(&s, &auth("a", &[1.0]))), "DIM_MISMATCH");
    }

    #[test]
    fn malformed_requests() {
        let s = state();
        for line in [&b"not json"[..], b"[1,2]", b"{}", br#"{"op":"dance"}"#, b"\xff\xfe", br#"{"op":"train","x":1}"#] {
            assert_eq!(code(&serde_json::from_str(&handle_line(&s, line)).unwrap()), "BAD_REQUEST");
        }
        assert_eq!(code(&call(&s, r#"{"op":"enroll","payload":{"client_id":"a"}}"#)), "BAD_PAYLOAD");
        assert_eq!(code(&call(&s, r#"{"op":"train","payload":[]}"#)), "BAD_PAYLOAD");
    }

    #[test]
    fn store_is_persisted_and_reloaded() {
        let dir = tempfile::tempdir().unwrap();
        let config =
            ServerConfig { kernel: KernelSpec::Linear, solver: SolverConfig::default(), store_dir: Some(dir.path().into()) };
        let s = ServerState::new(config.clone()).unwrap();
        call(&s, &enroll_line("a", &[&[1.0, 0.0], &[0.5, 0.5]]));
        call(&s, &enroll_line("a", &[&[0.8, 0.2]]));
        assert_eq!(s.template_count(), 2);
        assert_eq!(ServerState::new(config).unwrap().template_count(), 2);
    }

    #[test]
    fn tcp_round_trip() {
        let server = Server::bind("127.0.0.1:0", state()).unwrap().spawn().unwrap();
        let mut c = Client::connect(server.addr()).unwrap();
        let t = |client: &str, sample: &str, v: Vec<f64>| ProtectedTemplate {
            client_id: client.into(),
            sample_id: sample.into(),
            key_id: "common".into(),
            values: v,
        };
        assert_eq!(c.enroll("a", &[t("a", "1", vec![1.0, 0.0])]).unwrap().total, 1);
        c.enroll("b", &[t("b", "1", vec![-1.0, 0.0])]).unwrap();
        assert!(c.enroll("a", &[t("b", "2", vec![0.0, 1.0])]).is_err());
        assert_eq!(c.train().unwrap().models.len(), 2);
        let r = c.authenticate("a", &t("a", "q", vec![1.0, 0.0]), 0.5).unwrap();
        assert_eq!(r.decision, Decision::Accept);
        match c.authenticate("nobody", &t("a", "q", vec![1.0, 0.0]), 0.5) {
            Err(ClientError::Remote { code: ErrorCode::UnknownClient, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        let raw = c.send_raw(b"garbage").unwrap();
        assert!(raw.contains("BAD_REQUEST"));
        assert!(!c.transcript().is_empty());
        server.shutdown();
    }
}
