//! Language-model backends: a remote completion API, an oracle that answers
//! by attribute lookup, and a seeded random scorer.

mod limiter;
mod remote;
mod transport;

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{Domain, Item, ItemPair};
use crate::error::{Error, Result};
use crate::phrasing::PhrasingRegistry;
use crate::{io, presets, rng};

pub use limiter::{with_retry, Attempt, Clock, FakeClock, RateLimiter, RetryPolicy, SystemClock};
pub use remote::{RemoteBackend, RemoteConfig, ReplayConfig, ReplayMode};
pub use transport::{
    Exchange, HttpRequest, HttpResponse, HttpTransport, RecordingTransport, ReplayTransport, RequestBody, Transport,
    TransportError,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub text: String,
    /// Summed log-probability of the candidate's tokens.
    pub logprob: f64,
    pub tokens: usize,
}

/// How a candidate's token log-probabilities combine into one score.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    #[default]
    Sum,
    PerTokenMean,
}

impl CandidateScore {
    pub fn score(&self, normalization: Normalization) -> f64 {
        match normalization {
            Normalization::Sum => self.logprob,
            Normalization::PerTokenMean => self.logprob / self.tokens.max(1) as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidates {
    pub prompt: String,
    pub candidates: Vec<CandidateScore>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub greedy_top5: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub max_tokens: usize,
    pub top_k: usize,
    #[serde(default)]
    pub stop: Vec<String>,
}

impl Default for GenerationRequest {
    fn default() -> Self {
        GenerationRequest { max_tokens: 8, top_k: 5, stop: vec![] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    /// Greedy continuation.
    pub text: String,
    /// Highest-scoring alternatives for the first generated token.
    pub top: Vec<(String, f64)>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FineTuneParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_epochs: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learning_rate_multiplier: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub suffix: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation_file: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FineTuneHandle {
    pub id: String,
    pub backend: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum FineTuneStatus {
    Pending,
    Running,
    Succeeded { model: String },
    Failed { message: String },
    Cancelled,
}

impl FineTuneStatus {
    pub fn is_terminal(&self) -> bool {
        matches!(
            self,
            FineTuneStatus::Succeeded { .. } | FineTuneStatus::Failed { .. } | FineTuneStatus::Cancelled
        )
    }
}

pub trait Backend: Send + Sync {
    fn describe(&self) -> String;

    /// Log-likelihood of each candidate as a continuation of `prompt`.
    fn score_candidates(&self, prompt: &str, candidates: &[String]) -> Result<ScoredCandidates>;

    fn generate_greedy(&self, prompt: &str, request: &GenerationRequest) -> Result<Generation>;

    fn submit_finetune(&self, training_file: &Path, params: &FineTuneParams) -> Result<FineTuneHandle>;

    fn poll_finetune(&self, handle: &FineTuneHandle) -> Result<FineTuneStatus>;
}

fn require_candidates(candidates: &[String]) -> Result<()> {
    if candidates.len() < 2 {
        return Err(Error::Config(format!("need at least 2 candidates, got {}", candidates.len())));
    }
    Ok(())
}

/// Polls until the job reaches a terminal state; returns the tuned model id.
pub fn wait_for_finetune(
    backend: &dyn Backend,
    handle: &FineTuneHandle,
    interval: Duration,
    max_polls: usize,
    clock: &dyn Clock,
) -> Result<String> {
    for poll in 0..max_polls {
        match backend.poll_finetune(handle)? {
            FineTuneStatus::Succeeded { model } => return Ok(model),
            FineTuneStatus::Failed { message } => {
                return Err(Error::Backend(format!("fine-tune {} failed: {message}", handle.id)))
            }
            FineTuneStatus::Cancelled => return Err(Error::Backend(format!("fine-tune {} was cancelled", handle.id))),
            s => log::info!("fine-tune {} poll {}: {s:?}", handle.id, poll + 1),
        }
        clock.sleep(interval);
    }
    Err(Error::Backend(format!("fine-tune {} not finished after {max_polls} polls", handle.id)))
}

fn mock_finetune(kind: &str, training_file: &Path) -> Result<FineTuneHandle> {
    Ok(FineTuneHandle {
        id: format!("{kind}-ft-{}", &io::sha256_file(training_file)?[..12]),
        backend: kind.to_string(),
    })
}

/// Answers every question correctly by finding, in the prompt, the latest
/// rendered question about the candidates and resolving it against the
/// domain. Candidates that are not item names score below any item.
pub struct OracleBackend {
    domain: Domain,
    registry: PhrasingRegistry,
}

impl OracleBackend {
    pub fn new(domain: Domain, registry: PhrasingRegistry) -> Result<Self> {
        registry.validate(&domain)?;
        Ok(OracleBackend { domain, registry })
    }

    /// The answer to the question closest to the end of `prompt` among
    /// questions about ordered pairs drawn from `items`.
    fn answer<'a>(&'a self, prompt: &str, items: &[&'a Item]) -> Result<(&'a Item, ItemPair)> {
        let mut best: Option<((usize, usize), &Item, ItemPair)> = None;
        for a in items {
            for b in items {
                if a.id == b.id {
                    continue;
                }
                let pair = ItemPair::new(a.id.as_str(), b.id.as_str());
                let attrs = self.domain.usable_attributes(&pair)?;
                let questions = self
                    .registry
                    .comparison_questions(&attrs)
                    .into_iter()
                    .chain(self.registry.decision_questions(&attrs));
                for q in questions {
                    let text = self.registry.render_question(&self.domain, &q, &pair)?;
                    if let Some(pos) = prompt.rfind(&text) {
                        let rank = (pos + text.len(), text.len());
                        if best.as_ref().is_none_or(|(r, _, _)| rank > *r) {
                            best = Some((rank, q.answer(&self.domain, &pair)?, pair.clone()));
                        }
                    }
                }
            }
        }
        best.map(|(_, item, pair)| (item, pair))
            .ok_or_else(|| Error::Backend("oracle found no known question in the prompt".into()))
    }

    /// Items named in the last block of the prompt.
    fn items_in_tail(&self, prompt: &str) -> Vec<&Item> {
        let tail = prompt.rsplit("\n\n").find(|s| !s.trim().is_empty()).unwrap_or(prompt);
        self.domain.items.iter().filter(|i| tail.contains(&i.display_name)).collect()
    }
}

impl Backend for OracleBackend {
    fn describe(&self) -> String {
        format!("oracle:{}", self.domain.name)
    }

    fn score_candidates(&self, prompt: &str, candidates: &[String]) -> Result<ScoredCandidates> {
        require_candidates(candidates)?;
        let items: Vec<&Item> = candidates
            .iter()
            .filter_map(|c| self.domain.item_by_name(c.trim()))
            .collect();
        if items.len() < 2 {
            return Err(Error::Backend("oracle needs at least two candidates that name items".into()));
        }
        let (answer, _) = self.answer(prompt, &items)?;
        Ok(ScoredCandidates {
            prompt: prompt.to_string(),
            candidates: candidates
                .iter()
                .map(|c| CandidateScore {
                    text: c.clone(),
                    logprob: if c.trim() == answer.display_name { 0.0 } else { -1.0 },
                    tokens: 1,
                })
                .collect(),
            greedy_top5: vec![],
        })
    }

    fn generate_greedy(&self, prompt: &str, request: &GenerationRequest) -> Result<Generation> {
        let items = self.items_in_tail(prompt);
        let (answer, pair) = self.answer(prompt, &items)?;
        let other = if pair.first == answer.id { &pair.second } else { &pair.first };
        let other = &self.domain.require_item(other)?.display_name;
        let mut top = vec![(format!(" {}", answer.display_name), 0.0), (format!(" {other}"), -1.0)];
        top.truncate(request.top_k);
        Ok(Generation { text: format!(" {}", answer.display_name), top })
    }

    fn submit_finetune(&self, training_file: &Path, _: &FineTuneParams) -> Result<FineTuneHandle> {
        mock_finetune("oracle", training_file)
    }

    fn poll_finetune(&self, _: &FineTuneHandle) -> Result<FineTuneStatus> {
        Ok(FineTuneStatus::Succeeded { model: "oracle".into() })
    }
}

/// Uniform scores in [-10, 0), a pure function of (seed, prompt, candidate).
pub struct RandomBackend {
    seed: u64,
}

impl RandomBackend {
    pub fn new(seed: u64) -> Self {
        RandomBackend { seed }
    }

    fn draw(&self, prompt: &str, text: &str) -> f64 {
        rng::stream(self.seed, &["random", prompt, text]).gen_range(-10.0..0.0)
    }
}

impl Backend for RandomBackend {
    fn describe(&self) -> String {
        format!("random:{}", self.seed)
    }

    fn score_candidates(&self, prompt: &str, candidates: &[String]) -> Result<ScoredCandidates> {
        require_candidates(candidates)?;
        Ok(ScoredCandidates {
            prompt: prompt.to_string(),
            candidates: candidates
                .iter()
                .map(|c| CandidateScore { text: c.clone(), logprob: self.draw(prompt, c), tokens: 1 })
                .collect(),
            greedy_top5: vec![],
        })
    }

    fn generate_greedy(&self, prompt: &str, request: &GenerationRequest) -> Result<Generation> {
        let mut words: Vec<String> = prompt.split_whitespace().map(|w| format!(" {w}")).collect();
        words.sort();
        words.dedup();
        let mut top: Vec<(String, f64)> = words.iter().map(|w| (w.clone(), self.draw(prompt, w))).collect();
        top.sort_by(|a, b| b.1.total_cmp(&a.1));
        top.truncate(request.top_k);
        Ok(Generation { text: top.first().map(|t| t.0.clone()).unwrap_or_default(), top })
    }

    fn submit_finetune(&self, training_file: &Path, _: &FineTuneParams) -> Result<FineTuneHandle> {
        mock_finetune("random", training_file)
    }

    fn poll_finetune(&self, _: &FineTuneHandle) -> Result<FineTuneStatus> {
        Ok(FineTuneStatus::Succeeded { model: format!("random-{}", self.seed) })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendConfig {
    Remote(RemoteConfig),
    Oracle {
        /// Inside a run, defaults to the run's own domain.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        domain: Option<PathBuf>,
        /// Defaults to the bundled registry for the domain's name.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        registry: Option<PathBuf>,
    },
    Random {
        seed: u64,
    },
}

impl BackendConfig {
    /// The same backend aimed at a tuned model. Only remote backends host
    /// models; the others ignore it.
    pub fn with_model(&self, model: Option<&str>) -> BackendConfig {
        match (self, model) {
            (BackendConfig::Remote(cfg), Some(m)) => {
                let mut cfg = cfg.clone();
                cfg.model_id = m.to_string();
                BackendConfig::Remote(cfg)
            }
            _ => self.clone(),
        }
    }

    /// Relative paths resolve against `base`.
    pub fn build(&self, base: &Path) -> Result<Arc<dyn Backend>> {
        let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        Ok(match self {
            BackendConfig::Remote(cfg) => Arc::new(RemoteBackend::from_config(cfg, base)?),
            BackendConfig::Oracle { domain, registry } => {
                let domain = domain
                    .as_ref()
                    .ok_or_else(|| Error::Config("oracle backend needs a `domain` path".into()))?;
                let domain = Domain::load(resolve(domain))?;
                let registry = match registry {
                    Some(p) => PhrasingRegistry::load(resolve(p))?,
                    None => presets::registry_for(&domain.name).ok_or_else(|| {
                        Error::Config(format!("no bundled registry for domain `{}`; set `registry`", domain.name))
                    })?,
                };
                Arc::new(OracleBackend::new(domain, registry)?)
            }
            BackendConfig::Random { seed } => Arc::new(RandomBackend::new(*seed)),
        })
    }
}
