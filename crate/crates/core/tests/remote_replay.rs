//! Remote backend against recorded exchanges: request shapes, response
//! parsing, retry classification and rate limiting, all offline.

use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use cft_core::backend::{
    wait_for_finetune, Backend, BackendConfig, Clock, FakeClock, FineTuneParams, GenerationRequest, HttpRequest,
    HttpResponse, RemoteBackend, RemoteConfig, ReplayTransport, Transport, TransportError,
};
use serde_json::json;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/remote")
}

/// Replays the fixture and notes the clock time of every request.
struct Timed {
    inner: ReplayTransport,
    clock: Arc<FakeClock>,
    sent: Arc<Mutex<Vec<(Duration, String)>>>,
}

impl Transport for Timed {
    fn send(&self, r: &HttpRequest) -> Result<HttpResponse, TransportError> {
        self.sent.lock().unwrap().push((self.clock.now(), r.path.clone()));
        self.inner.send(r)
    }
}

fn backend(rate: f64) -> (RemoteBackend, Arc<FakeClock>, Arc<Mutex<Vec<(Duration, String)>>>) {
    let clock = Arc::new(FakeClock::default());
    let sent = Arc::new(Mutex::new(Vec::new()));
    let transport = Timed {
        inner: ReplayTransport::load(fixtures().join("exchanges.jsonl")).unwrap(),
        clock: clock.clone(),
        sent: sent.clone(),
    };
    let config: RemoteConfig = serde_json::from_value(json!({
        "endpoint": "https://api.openai.com/v1",
        "model_id": "davinci",
        "rate_limit": rate,
    }))
    .unwrap();
    let b = RemoteBackend::with_transport(config, Box::new(transport), clock.clone()).unwrap();
    (b, clock, sent)
}

fn strings(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

#[test]
fn scores_only_the_continuation_and_restores_candidate_order() {
    let (b, _, _) = backend(10.0);
    let s = b
        .score_candidates("Between London and Lisbon, the city with warmer weather is", &strings(&[" Lisbon", " London"]))
        .unwrap();
    let got: Vec<(&str, f64, usize)> = s.candidates.iter().map(|c| (c.text.as_str(), c.logprob, c.tokens)).collect();
    assert_eq!(got, vec![(" Lisbon", -0.5, 1), (" London", -3.25, 1)]);
}

#[test]
fn retries_rate_limit_and_server_errors_with_backoff() {
    let (b, clock, sent) = backend(10.0);
    let s = b
        .score_candidates(
            "You don't like cold weather. Between Oslo and Lisbon, you should visit",
            &strings(&[" Oslo", " Lisbon"]),
        )
        .unwrap();
    assert_eq!(s.candidates[1].logprob, -1.25);
    assert_eq!(sent.lock().unwrap().len(), 3);
    assert!(clock.now() >= Duration::from_millis(1500), "{:?}", clock.now());
}

#[test]
fn authentication_failure_is_fatal() {
    let (b, _, sent) = backend(10.0);
    let err = b
        .score_candidates("Between Oslo and Lisbon, the city with more people is", &strings(&[" Oslo", " Lisbon"]))
        .unwrap_err();
    assert!(err.to_string().contains("authentication rejected (HTTP 401)"), "{err}");
    assert_eq!(sent.lock().unwrap().len(), 1);
}

#[test]
fn greedy_generation_with_top_logprobs() {
    let (b, _, _) = backend(10.0);
    let req = GenerationRequest { max_tokens: 8, top_k: 5, stop: vec!["\n".into()] };
    let g = b.generate_greedy("Between London and Lisbon, the city with warmer weather is", &req).unwrap();
    assert_eq!(g.text, " Lisbon");
    let top: Vec<&str> = g.top.iter().map(|t| t.0.as_str()).collect();
    assert_eq!(top, [" Lisbon", " London", " Madrid", " the", " a"]);
}

#[test]
fn finetune_upload_create_and_poll() {
    let (b, clock, sent) = backend(10.0);
    let params = FineTuneParams { base_model: Some("davinci".into()), n_epochs: Some(4), ..Default::default() };
    let handle = b.submit_finetune(&fixtures().join("training.jsonl"), &params).unwrap();
    assert_eq!(handle.id, "ft-xyz789");
    let model = wait_for_finetune(&b, &handle, Duration::from_secs(30), 10, clock.as_ref()).unwrap();
    assert_eq!(model, "davinci:ft-personal-2022-06-01");
    let paths: Vec<String> = sent.lock().unwrap().iter().map(|s| s.1.clone()).collect();
    assert_eq!(paths, ["/files", "/fine-tunes", "/fine-tunes/ft-xyz789", "/fine-tunes/ft-xyz789", "/fine-tunes/ft-xyz789"]);
}

#[test]
fn request_times_respect_the_rate_limit() {
    for rate in [0.5, 1.0, 2.0, 3.5] {
        let (b, _, sent) = backend(rate);
        let prompt = "Between London and Lisbon, the city with warmer weather is";
        for _ in 0..12 {
            b.score_candidates(prompt, &strings(&[" Lisbon", " London"])).unwrap();
        }
        let times: Vec<Duration> = sent.lock().unwrap().iter().map(|s| s.0).collect();
        let capacity = (rate.floor() as usize).max(1);
        let window = Duration::from_secs_f64((1.0 / rate).max(1.0));
        for w in times.windows(capacity + 1) {
            assert!(w[capacity] - w[0] >= window, "rate {rate}: {:?}", w);
        }
        let windows = (times.last().unwrap().as_secs_f64() / window.as_secs_f64()).floor() as usize + 1;
        assert!(times.len() <= capacity * windows, "rate {rate}: {} requests in {windows} windows", times.len());
    }
}

#[test]
fn replay_mode_needs_no_api_key() {
    let config = BackendConfig::Remote(
        serde_json::from_value(json!({
            "endpoint": "https://api.openai.com/v1",
            "model_id": "davinci",
            "api_key_env": "CFT_TEST_KEY_THAT_IS_NEVER_SET",
            "rate_limit": 100.0,
            "replay": {"path": "exchanges.jsonl", "mode": "replay"},
        }))
        .unwrap(),
    );
    let b: Arc<dyn Backend> = config.build(&fixtures()).unwrap();
    let s = b
        .score_candidates("Between London and Lisbon, the city with warmer weather is", &strings(&[" Lisbon", " London"]))
        .unwrap();
    assert!(s.candidates[0].logprob > s.candidates[1].logprob);

    let live = BackendConfig::Remote(
        serde_json::from_value(json!({
            "endpoint": "https://api.openai.com/v1",
            "model_id": "davinci",
            "api_key_env": "CFT_TEST_KEY_THAT_IS_NEVER_SET",
        }))
        .unwrap(),
    );
    let err = live.build(&fixtures()).err().unwrap();
    assert!(err.to_string().contains("CFT_TEST_KEY_THAT_IS_NEVER_SET"));
}
