//! HTTP exchange plumbing with record/replay.
//!
//! A replay file is JSON Lines, one [`Exchange`] per line. Requests match
//! on method, path and body; repeated identical requests consume the
//! recorded responses in order, and the last one is reused once the queue
//! runs dry (so a status poll can be replayed any number of times). The
//! API key is never written to a recording.

use std::collections::{HashMap, VecDeque};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::io;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum RequestBody {
    None,
    Json { json: Value },
    /// A multipart file upload.
    File {
        purpose: String,
        filename: String,
        content: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpRequest {
    pub method: String,
    pub path: String,
    pub body: RequestBody,
}

impl HttpRequest {
    pub fn get(path: impl Into<String>) -> Self {
        HttpRequest { method: "GET".into(), path: path.into(), body: RequestBody::None }
    }

    pub fn post_json(path: impl Into<String>, json: Value) -> Self {
        HttpRequest { method: "POST".into(), path: path.into(), body: RequestBody::Json { json } }
    }

    fn match_key(&self) -> String {
        io::fingerprint(self).unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpResponse {
    pub status: u16,
    pub body: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    pub request: HttpRequest,
    pub response: HttpResponse,
}

/// Failure to obtain any HTTP response.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransportError {
    pub retryable: bool,
    pub message: String,
}

pub trait Transport: Send + Sync {
    fn send(&self, request: &HttpRequest) -> std::result::Result<HttpResponse, TransportError>;
}

pub struct HttpTransport {
    base_url: String,
    api_key: String,
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(base_url: &str, api_key: String, timeout: Duration) -> Self {
        HttpTransport {
            base_url: base_url.trim_end_matches('/').to_string(),
            api_key,
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
        }
    }
}

const BOUNDARY: &str = "----cft-multipart-boundary-7d1f";

fn multipart(purpose: &str, filename: &str, content: &str) -> String {
    format!(
        "--{BOUNDARY}\r\nContent-Disposition: form-data; name=\"purpose\"\r\n\r\n{purpose}\r\n\
         --{BOUNDARY}\r\nContent-Disposition: form-data; name=\"file\"; filename=\"{filename}\"\r\n\
         Content-Type: application/jsonl\r\n\r\n{content}\r\n--{BOUNDARY}--\r\n"
    )
}

impl Transport for HttpTransport {
    fn send(&self, request: &HttpRequest) -> std::result::Result<HttpResponse, TransportError> {
        let url = format!("{}{}", self.base_url, request.path);
        let req = self
            .agent
            .request(&request.method, &url)
            .set("Authorization", &format!("Bearer {}", self.api_key));
        let result = match &request.body {
            RequestBody::None => req.call(),
            RequestBody::Json { json } => req.send_json(json.clone()),
            RequestBody::File { purpose, filename, content } => req
                .set("Content-Type", &format!("multipart/form-data; boundary={BOUNDARY}"))
                .send_string(&multipart(purpose, filename, content)),
        };
        let (status, resp) = match result {
            Ok(resp) => (resp.status(), resp),
            Err(ureq::Error::Status(code, resp)) => (code, resp),
            Err(ureq::Error::Transport(t)) => {
                return Err(TransportError { retryable: true, message: t.to_string() })
            }
        };
        let text = resp.into_string().map_err(|e| TransportError { retryable: true, message: e.to_string() })?;
        let body = serde_json::from_str(&text).unwrap_or(Value::String(text));
        Ok(HttpResponse { status, body })
    }
}

pub struct ReplayTransport {
    queues: Mutex<HashMap<String, VecDeque<HttpResponse>>>,
    source: PathBuf,
}

impl ReplayTransport {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let exchanges: Vec<Exchange> = io::read_jsonl(path.as_ref())?;
        Ok(Self::from_exchanges(exchanges, path.as_ref()))
    }

    pub fn from_exchanges(exchanges: Vec<Exchange>, source: &Path) -> Self {
        let mut queues: HashMap<String, VecDeque<HttpResponse>> = HashMap::new();
        for ex in exchanges {
            queues.entry(ex.request.match_key()).or_default().push_back(ex.response);
        }
        ReplayTransport { queues: Mutex::new(queues), source: source.to_path_buf() }
    }
}

impl Transport for ReplayTransport {
    fn send(&self, request: &HttpRequest) -> std::result::Result<HttpResponse, TransportError> {
        let mut queues = self.queues.lock().unwrap();
        let queue = queues.get_mut(&request.match_key()).ok_or_else(|| TransportError {
            retryable: false,
            message: format!(
                "no recorded response in {} for {} {}",
                self.source.display(),
                request.method,
                request.path
            ),
        })?;
        let resp = if queue.len() > 1 { queue.pop_front() } else { queue.front().cloned() };
        Ok(resp.expect("replay queues are never empty"))
    }
}

/// Forwards to another transport and appends every exchange to a file.
pub struct RecordingTransport<T> {
    inner: T,
    out: Mutex<File>,
}

impl<T: Transport> RecordingTransport<T> {
    pub fn new(inner: T, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        io::ensure_parent(path)?;
        let out = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(RecordingTransport { inner, out: Mutex::new(out) })
    }
}

impl<T: Transport> Transport for RecordingTransport<T> {
    fn send(&self, request: &HttpRequest) -> std::result::Result<HttpResponse, TransportError> {
        let response = self.inner.send(request)?;
        let line = serde_json::to_string(&Exchange { request: request.clone(), response: response.clone() })
            .map_err(|e| TransportError { retryable: false, message: e.to_string() })?;
        let mut out = self.out.lock().unwrap();
        writeln!(out, "{line}").map_err(|e| TransportError { retryable: false, message: e.to_string() })?;
        Ok(response)
    }
}
