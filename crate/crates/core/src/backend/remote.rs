//! Client for OpenAI-style legacy completion and fine-tune endpoints.
//!
//! Scoring sends `prompt + candidate` with `echo: true, max_tokens: 0,
//! logprobs: 0` and sums the log-probabilities of the echoed tokens whose
//! `text_offset` lies at or beyond the end of the prompt.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::limiter::{with_retry, Attempt, Clock, RateLimiter, RetryPolicy, SystemClock};
use super::transport::{HttpRequest, HttpTransport, RecordingTransport, ReplayTransport, RequestBody, Transport};
use super::{
    require_candidates, Backend, CandidateScore, FineTuneHandle, FineTuneParams, FineTuneStatus, Generation,
    GenerationRequest, ScoredCandidates,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplayMode {
    /// Talk to the network and append every exchange to the file.
    Record,
    /// Answer from the file only; no network, no API key needed.
    Replay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayConfig {
    pub path: PathBuf,
    pub mode: ReplayMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    /// Base URL, e.g. `https://api.openai.com/v1`.
    pub endpoint: String,
    pub model_id: String,
    #[serde(default = "default_api_key_env")]
    pub api_key_env: String,
    /// Requests per second.
    #[serde(default = "default_rate_limit")]
    pub rate_limit: f64,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replay: Option<ReplayConfig>,
}

fn default_api_key_env() -> String {
    "CFT_API_KEY".into()
}
fn default_rate_limit() -> f64 {
    1.0
}
fn default_timeout() -> u64 {
    60
}

pub struct RemoteBackend {
    config: RemoteConfig,
    transport: Box<dyn Transport>,
    limiter: RateLimiter,
    clock: Arc<dyn Clock>,
}

impl RemoteBackend {
    pub fn from_config(config: &RemoteConfig, base: &Path) -> Result<Self> {
        if !(config.endpoint.starts_with("http://") || config.endpoint.starts_with("https://")) {
            return Err(Error::Config(format!("remote endpoint `{}` is not an http(s) URL", config.endpoint)));
        }
        if config.model_id.is_empty() {
            return Err(Error::Config("remote backend needs a model_id".into()));
        }
        let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        let api_key = || {
            std::env::var(&config.api_key_env)
                .ok()
                .filter(|k| !k.is_empty())
                .ok_or_else(|| Error::Config(format!("API key variable `{}` is not set", config.api_key_env)))
        };
        let http = || -> Result<HttpTransport> {
            Ok(HttpTransport::new(&config.endpoint, api_key()?, Duration::from_secs(config.timeout_secs)))
        };
        let transport: Box<dyn Transport> = match &config.replay {
            None => Box::new(http()?),
            Some(ReplayConfig { path, mode: ReplayMode::Replay }) => Box::new(ReplayTransport::load(resolve(path))?),
            Some(ReplayConfig { path, mode: ReplayMode::Record }) => {
                Box::new(RecordingTransport::new(http()?, resolve(path))?)
            }
        };
        Self::with_transport(config.clone(), transport, Arc::new(SystemClock::default()))
    }

    pub fn with_transport(config: RemoteConfig, transport: Box<dyn Transport>, clock: Arc<dyn Clock>) -> Result<Self> {
        let limiter = RateLimiter::new(config.rate_limit, clock.clone())?;
        Ok(RemoteBackend { config, transport, limiter, clock })
    }

    fn call(&self, request: &HttpRequest) -> Result<Value> {
        with_retry(&self.config.retry, self.clock.as_ref(), |_| {
            self.limiter.acquire();
            match self.transport.send(request) {
                Err(e) if e.retryable => Attempt::Retry(e.message),
                Err(e) => Attempt::Fatal(Error::Backend(e.message)),
                Ok(resp) => {
                    let message = || {
                        resp.body
                            .pointer("/error/message")
                            .and_then(Value::as_str)
                            .map(str::to_string)
                            .unwrap_or_else(|| resp.body.to_string())
                    };
                    match resp.status {
                        200..=299 => Attempt::Done(resp.body),
                        429 | 500..=599 => Attempt::Retry(format!("HTTP {}: {}", resp.status, message())),
                        401 | 403 => Attempt::Fatal(Error::Backend(format!(
                            "authentication rejected (HTTP {}): {}",
                            resp.status,
                            message()
                        ))),
                        s => Attempt::Fatal(Error::Backend(format!("HTTP {s}: {}", message()))),
                    }
                }
            }
        })
    }
}

fn malformed(what: &str) -> Error {
    Error::Backend(format!("malformed completion response: {what}"))
}

/// Summed log-probability of the tokens starting at or after `prompt_chars`.
fn continuation_logprob(choice: &Value, prompt_chars: usize, candidate: &str) -> Result<CandidateScore> {
    let lp = choice.get("logprobs").ok_or_else(|| malformed("no logprobs"))?;
    let tokens = lp["tokens"].as_array().ok_or_else(|| malformed("no tokens"))?;
    let logprobs = lp["token_logprobs"].as_array().ok_or_else(|| malformed("no token_logprobs"))?;
    let offsets = lp["text_offset"].as_array().ok_or_else(|| malformed("no text_offset"))?;
    if tokens.len() != logprobs.len() || tokens.len() != offsets.len() {
        return Err(malformed("token arrays differ in length"));
    }
    let mut sum = 0.0;
    let mut n = 0;
    for ((tok, lp), off) in tokens.iter().zip(logprobs).zip(offsets) {
        let off = off.as_u64().ok_or_else(|| malformed("non-integer text_offset"))? as usize;
        let tok = tok.as_str().ok_or_else(|| malformed("non-string token"))?;
        if off < prompt_chars {
            if off + tok.chars().count() > prompt_chars {
                return Err(Error::Backend(format!(
                    "candidate `{candidate}` is not tokenizable apart from the prompt (token `{tok}` spans the boundary)"
                )));
            }
            continue;
        }
        let v = lp.as_f64().ok_or_else(|| malformed("missing log-probability in continuation"))?;
        if !v.is_finite() {
            return Err(malformed("non-finite log-probability"));
        }
        sum += v;
        n += 1;
    }
    if n == 0 {
        return Err(Error::Backend(format!("candidate `{candidate}` produced no tokens")));
    }
    Ok(CandidateScore { text: candidate.to_string(), logprob: sum, tokens: n })
}

fn choices(body: &Value, expected: usize) -> Result<Vec<&Value>> {
    let mut choices: Vec<&Value> = body["choices"].as_array().ok_or_else(|| malformed("no choices"))?.iter().collect();
    choices.sort_by_key(|c| c["index"].as_u64().unwrap_or(0));
    if choices.len() != expected {
        return Err(malformed(&format!("expected {expected} choices, got {}", choices.len())));
    }
    Ok(choices)
}

impl Backend for RemoteBackend {
    fn describe(&self) -> String {
        format!("remote:{}@{}", self.config.model_id, self.config.endpoint)
    }

    fn score_candidates(&self, prompt: &str, candidates: &[String]) -> Result<ScoredCandidates> {
        require_candidates(candidates)?;
        let inputs: Vec<String> = candidates.iter().map(|c| format!("{prompt}{c}")).collect();
        let body = self.call(&HttpRequest::post_json(
            "/completions",
            json!({
                "model": self.config.model_id,
                "prompt": inputs,
                "max_tokens": 0,
                "temperature": 0,
                "echo": true,
                "logprobs": 0,
            }),
        ))?;
        let prompt_chars = prompt.chars().count();
        let scored = choices(&body, candidates.len())?
            .into_iter()
            .zip(candidates)
            .map(|(choice, c)| continuation_logprob(choice, prompt_chars, c))
            .collect::<Result<_>>()?;
        Ok(ScoredCandidates { prompt: prompt.to_string(), candidates: scored, greedy_top5: vec![] })
    }

    fn generate_greedy(&self, prompt: &str, request: &GenerationRequest) -> Result<Generation> {
        let mut payload = json!({
            "model": self.config.model_id,
            "prompt": prompt,
            "max_tokens": request.max_tokens,
            "temperature": 0,
            "logprobs": request.top_k,
        });
        if !request.stop.is_empty() {
            payload["stop"] = json!(request.stop);
        }
        let body = self.call(&HttpRequest::post_json("/completions", payload))?;
        let choice = choices(&body, 1)?[0];
        let text = choice["text"].as_str().ok_or_else(|| malformed("no text"))?.to_string();
        let mut top: Vec<(String, f64)> = choice
            .pointer("/logprobs/top_logprobs/0")
            .and_then(Value::as_object)
            .map(|m| m.iter().filter_map(|(k, v)| v.as_f64().map(|v| (k.clone(), v))).collect())
            .unwrap_or_default();
        top.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        top.truncate(request.top_k);
        Ok(Generation { text, top })
    }

    fn submit_finetune(&self, training_file: &Path, params: &FineTuneParams) -> Result<FineTuneHandle> {
        let upload = |path: &Path| -> Result<String> {
            let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let body = self.call(&HttpRequest {
                method: "POST".into(),
                path: "/files".into(),
                body: RequestBody::File {
                    purpose: "fine-tune".into(),
                    filename: path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default(),
                    content,
                },
            })?;
            body["id"]
                .as_str()
                .map(str::to_string)
                .ok_or_else(|| Error::Backend(format!("upload of {} returned no file id", path.display())))
        };
        let mut job = json!({
            "training_file": upload(training_file)?,
            "model": params.base_model.clone().unwrap_or_else(|| self.config.model_id.clone()),
        });
        if let Some(v) = &params.validation_file {
            job["validation_file"] = json!(upload(v)?);
        }
        if let Some(v) = params.n_epochs {
            job["n_epochs"] = json!(v);
        }
        if let Some(v) = params.batch_size {
            job["batch_size"] = json!(v);
        }
        if let Some(v) = params.learning_rate_multiplier {
            job["learning_rate_multiplier"] = json!(v);
        }
        if let Some(v) = &params.suffix {
            job["suffix"] = json!(v);
        }
        let body = self.call(&HttpRequest::post_json("/fine-tunes", job))?;
        let id = body["id"].as_str().ok_or_else(|| Error::Backend("fine-tune creation returned no id".into()))?;
        Ok(FineTuneHandle { id: id.to_string(), backend: self.describe() })
    }

    fn poll_finetune(&self, handle: &FineTuneHandle) -> Result<FineTuneStatus> {
        let body = self.call(&HttpRequest::get(format!("/fine-tunes/{}", handle.id)))?;
        Ok(match body["status"].as_str().unwrap_or("") {
            "pending" | "queued" | "validating_files" => FineTuneStatus::Pending,
            "running" => FineTuneStatus::Running,
            "succeeded" => FineTuneStatus::Succeeded {
                model: body["fine_tuned_model"]
                    .as_str()
                    .ok_or_else(|| Error::Backend("succeeded job has no fine_tuned_model".into()))?
                    .to_string(),
            },
            "cancelled" => FineTuneStatus::Cancelled,
            "failed" => FineTuneStatus::Failed {
                message: body
                    .pointer("/error/message")
                    .and_then(Value::as_str)
                    .unwrap_or("no message")
                    .to_string(),
            },
            other => return Err(Error::Backend(format!("unknown fine-tune status `{other}`"))),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::super::transport::{HttpResponse, TransportError};
    use super::super::FakeClock;
    use super::*;
    use std::sync::Mutex;

    struct Scripted(Mutex<Vec<std::result::Result<HttpResponse, TransportError>>>);

    impl Transport for Scripted {
        fn send(&self, _: &HttpRequest) -> std::result::Result<HttpResponse, TransportError> {
            self.0.lock().unwrap().remove(0)
        }
    }

    fn config() -> RemoteConfig {
        serde_json::from_value(json!({"endpoint": "https://example.test/v1", "model_id": "m"})).unwrap()
    }

    fn backend(script: Vec<std::result::Result<HttpResponse, TransportError>>) -> (RemoteBackend, Arc<FakeClock>) {
        let clock = Arc::new(FakeClock::default());
        let b = RemoteBackend::with_transport(config(), Box::new(Scripted(Mutex::new(script))), clock.clone()).unwrap();
        (b, clock)
    }

    fn ok(body: Value) -> std::result::Result<HttpResponse, TransportError> {
        Ok(HttpResponse { status: 200, body })
    }

    #[test]
    fn continuation_sum_skips_prompt_tokens() {
        let choice = json!({"logprobs": {
            "tokens": ["Hi", " there", " Bob"],
            "token_logprobs": [null, -1.5, -0.25],
            "text_offset": [0, 2, 8],
        }});
        let s = continuation_logprob(&choice, 8, " Bob").unwrap();
        assert_eq!((s.logprob, s.tokens), (-0.25, 1));
        assert!(continuation_logprob(&choice, 9, " Bob").is_err());
        assert!(continuation_logprob(&choice, 12, "").is_err());
    }

    #[test]
    fn retries_transient_failures_then_gives_up() {
        let busy = || Ok(HttpResponse { status: 429, body: json!({"error": {"message": "slow down"}}) });
        let (b, clock) = backend(vec![busy(), busy(), busy(), busy(), busy()]);
        let err = b.poll_finetune(&FineTuneHandle { id: "x".into(), backend: "r".into() }).unwrap_err();
        assert!(matches!(err, Error::RetriesExhausted { attempts: 5, ref last } if last.contains("slow down")));
        assert!(clock.now() >= Duration::from_millis(500 + 1000 + 2000 + 4000));

        let (b, _) = backend(vec![
            Err(TransportError { retryable: true, message: "reset".into() }),
            ok(json!({"status": "running"})),
        ]);
        assert_eq!(
            b.poll_finetune(&FineTuneHandle { id: "x".into(), backend: "r".into() }).unwrap(),
            FineTuneStatus::Running
        );
    }

    #[test]
    fn auth_errors_are_not_retried() {
        let (b, clock) = backend(vec![Ok(HttpResponse { status: 401, body: json!({"error": {"message": "bad key"}}) })]);
        let err = b.poll_finetune(&FineTuneHandle { id: "x".into(), backend: "r".into() }).unwrap_err();
        assert!(err.to_string().contains("authentication"));
        assert_eq!(clock.now(), Duration::ZERO);
    }

    #[test]
    fn missing_api_key_is_a_config_error() {
        let mut cfg = config();
        cfg.api_key_env = "CFT_TEST_SURELY_UNSET_KEY".into();
        assert!(matches!(RemoteBackend::from_config(&cfg, Path::new(".")), Err(Error::Config(_))));
        cfg.endpoint = "example.test".into();
        assert!(RemoteBackend::from_config(&cfg, Path::new(".")).is_err());
    }
}
