//! Phased, shuffled and token-balanced training sets.
//!
//! Tasks without dependencies (statements, negation interpretations) form
//! phase 1; comparisons and decision templates form phase 2. Decision
//! templates are sampled until their token mass matches the comparisons'.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::phrasing::{TaskKind, TrainingExample};
use crate::rng;

/// Completions are exported with a leading space so the answer starts a
/// new word after the prompt.
pub fn export_completion(completion: &str) -> String {
    format!(" {completion}")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurriculumConfig {
    #[serde(default)]
    pub include_fs: bool,
    #[serde(default)]
    pub include_fc: bool,
    #[serde(default)]
    pub include_dt: bool,
    #[serde(default)]
    pub include_neg: bool,
    /// Keep only one attribute's fold of decision templates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt_attribute_filter: Option<String>,
    /// Sample decision templates up to this many tokens instead of the
    /// comparisons' token mass, reusing examples once the pool runs out.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt_upsample_to_tokens: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

impl CurriculumConfig {
    pub fn new(fs: bool, fc: bool, dt: bool, neg: bool, seed: u64) -> Self {
        CurriculumConfig {
            include_fs: fs,
            include_fc: fc,
            include_dt: dt,
            include_neg: neg,
            dt_attribute_filter: None,
            dt_upsample_to_tokens: None,
            seed,
        }
    }

    pub fn includes(&self, kind: TaskKind) -> bool {
        match kind {
            TaskKind::FactualStatement => self.include_fs,
            TaskKind::FactualComparison => self.include_fc,
            TaskKind::DecisionTemplate => self.include_dt,
            TaskKind::NegPrefInterpretation => self.include_neg,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !TaskKind::ALL.iter().any(|&k| self.includes(k)) {
            return Err(Error::Config("curriculum enables no task".into()));
        }
        if !self.include_dt && (self.dt_upsample_to_tokens.is_some() || self.dt_attribute_filter.is_some()) {
            return Err(Error::Config(
                "dt_upsample_to_tokens / dt_attribute_filter need include_dt".into(),
            ));
        }
        Ok(())
    }

    /// Short label like `fs+fc+dt[temperature]`.
    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        for k in TaskKind::ALL {
            if self.includes(k) {
                let mut s = k.code().to_string();
                if k == TaskKind::DecisionTemplate {
                    if let Some(a) = &self.dt_attribute_filter {
                        s.push_str(&format!("[{a}]"));
                    }
                    if let Some(t) = self.dt_upsample_to_tokens {
                        s.push_str(&format!("@{t}"));
                    }
                }
                parts.push(s);
            }
        }
        parts.join("+")
    }
}

/// Rendered, token-counted examples per task kind.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Corpora {
    pub fs: Vec<TrainingExample>,
    pub fc: Vec<TrainingExample>,
    pub dt: Vec<TrainingExample>,
    pub neg: Vec<TrainingExample>,
}

impl Corpora {
    pub fn get(&self, kind: TaskKind) -> &[TrainingExample] {
        match kind {
            TaskKind::FactualStatement => &self.fs,
            TaskKind::FactualComparison => &self.fc,
            TaskKind::DecisionTemplate => &self.dt,
            TaskKind::NegPrefInterpretation => &self.neg,
        }
    }

    pub fn get_mut(&mut self, kind: TaskKind) -> &mut Vec<TrainingExample> {
        match kind {
            TaskKind::FactualStatement => &mut self.fs,
            TaskKind::FactualComparison => &mut self.fc,
            TaskKind::DecisionTemplate => &mut self.dt,
            TaskKind::NegPrefInterpretation => &mut self.neg,
        }
    }

    /// Files by task kind; examples are routed by their `task_kind`.
    pub fn from_examples(examples: impl IntoIterator<Item = TrainingExample>) -> Self {
        let mut c = Corpora::default();
        for ex in examples {
            c.get_mut(ex.task_kind).push(ex);
        }
        c
    }

    pub fn tokens(&self, kind: TaskKind) -> usize {
        total_tokens(self.get(kind))
    }
}

pub fn total_tokens(examples: &[TrainingExample]) -> usize {
    examples.iter().map(|e| e.token_count).sum()
}

/// Draws examples uniformly without replacement until their token sum first
/// reaches `target_tokens`. The result overshoots by less than one example.
/// If the pool runs out first, the whole pool is returned (with a warning).
pub fn balance_tokens(dt_pool: &[TrainingExample], target_tokens: usize, seed: u64) -> Vec<TrainingExample> {
    sample_to_budget(dt_pool, target_tokens, seed, false).0
}

/// Returns the sample and whether the pool was exhausted before the target.
fn sample_to_budget(
    pool: &[TrainingExample],
    target: usize,
    seed: u64,
    with_replacement_after_exhaustion: bool,
) -> (Vec<TrainingExample>, bool) {
    let mut out = Vec::new();
    if target == 0 || pool.is_empty() {
        return (out, target > 0);
    }
    let mut rng = rng::stream(seed, &["balance"]);
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.shuffle(&mut rng);
    let mut sum = 0usize;
    for i in order {
        if sum >= target {
            return (out, false);
        }
        sum += pool[i].token_count;
        out.push(pool[i].clone());
    }
    if sum >= target {
        return (out, false);
    }
    if !with_replacement_after_exhaustion {
        log::warn!("token budget {target} exceeds the whole pool ({sum} tokens); using every example");
        return (out, true);
    }
    if pool.iter().all(|e| e.token_count == 0) {
        return (out, true);
    }
    while sum < target {
        let ex = &pool[rng.gen_range(0..pool.len())];
        sum += ex.token_count;
        out.push(ex.clone());
    }
    (out, true)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub index: usize,
    pub tasks: Vec<TaskKind>,
    pub examples: Vec<TrainingExample>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskStats {
    pub examples: usize,
    pub tokens: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurriculumManifest {
    pub label: String,
    pub config: CurriculumConfig,
    pub config_hash: String,
    pub seed: u64,
    pub tasks: BTreeMap<TaskKind, TaskStats>,
    pub phases: Vec<BTreeMap<TaskKind, TaskStats>>,
    pub total_examples: usize,
    pub total_tokens: usize,
    /// Token budget decision templates were sampled against, if any.
    pub dt_target_tokens: Option<usize>,
    pub dt_pool_exhausted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curriculum {
    pub phases: Vec<Phase>,
    pub manifest: CurriculumManifest,
}

impl Curriculum {
    /// All examples in training order.
    pub fn sequence(&self) -> impl Iterator<Item = &TrainingExample> {
        self.phases.iter().flat_map(|p| p.examples.iter())
    }

    pub fn tokens(&self, kind: TaskKind) -> usize {
        self.manifest.tasks.get(&kind).map_or(0, |s| s.tokens)
    }
}

pub fn assemble(config: &CurriculumConfig, corpora: &Corpora) -> Result<Curriculum> {
    config.validate()?;
    for kind in TaskKind::ALL {
        if config.includes(kind) && corpora.get(kind).is_empty() {
            return Err(Error::Config(format!("task `{kind}` is enabled but its corpus is empty")));
        }
    }
    for kind in [TaskKind::FactualComparison, TaskKind::DecisionTemplate] {
        if corpora.get(kind).iter().any(|e| e.token_count == 0) {
            return Err(Error::Config(format!("`{kind}` examples are not token-counted")));
        }
    }

    let mut selected: BTreeMap<TaskKind, Vec<TrainingExample>> = BTreeMap::new();
    let mut dt_target = None;
    let mut dt_exhausted = false;
    for kind in TaskKind::ALL {
        if !config.includes(kind) {
            continue;
        }
        let chosen = if kind == TaskKind::DecisionTemplate {
            let pool: Vec<TrainingExample> = match &config.dt_attribute_filter {
                Some(attr) => corpora
                    .dt
                    .iter()
                    .filter(|e| e.attribute.as_deref() == Some(attr.as_str()))
                    .cloned()
                    .collect(),
                None => corpora.dt.clone(),
            };
            if pool.is_empty() {
                return Err(Error::Config(format!(
                    "no decision templates for attribute filter {:?}",
                    config.dt_attribute_filter
                )));
            }
            let (target, upsample) = match config.dt_upsample_to_tokens {
                Some(t) => (Some(t), true),
                None if !corpora.fc.is_empty() => (Some(corpora.tokens(TaskKind::FactualComparison)), false),
                None => (None, false),
            };
            dt_target = target;
            match target {
                Some(t) => {
                    let (sample, exhausted) = sample_to_budget(&pool, t, config.seed, upsample);
                    if exhausted && !upsample {
                        log::warn!("decision-template pool smaller than the {t}-token budget");
                    }
                    dt_exhausted = exhausted;
                    sample
                }
                None => pool,
            }
        } else {
            corpora.get(kind).to_vec()
        };
        selected.insert(kind, chosen);
    }

    let mut phases = Vec::new();
    for index in [1usize, 2] {
        let tasks: Vec<TaskKind> = TaskKind::ALL
            .into_iter()
            .filter(|k| k.phase() == index && selected.contains_key(k))
            .collect();
        let mut examples: Vec<TrainingExample> =
            tasks.iter().flat_map(|k| selected[k].iter().cloned()).collect();
        if examples.is_empty() {
            continue;
        }
        examples.shuffle(&mut rng::stream(config.seed, &["phase", &index.to_string()]));
        phases.push(Phase { index, tasks, examples });
    }

    let stats = |exs: &[TrainingExample]| TaskStats {
        examples: exs.len(),
        tokens: total_tokens(exs),
    };
    let tasks: BTreeMap<TaskKind, TaskStats> = selected.iter().map(|(k, v)| (*k, stats(v))).collect();
    let phase_stats = phases
        .iter()
        .map(|p| p.tasks.iter().map(|k| (*k, tasks[k])).collect())
        .collect();
    let manifest = CurriculumManifest {
        label: config.label(),
        config: config.clone(),
        config_hash: io::fingerprint(config)?,
        seed: config.seed,
        total_examples: tasks.values().map(|s| s.examples).sum(),
        total_tokens: tasks.values().map(|s| s.tokens).sum(),
        tasks,
        phases: phase_stats,
        dt_target_tokens: dt_target,
        dt_pool_exhausted: dt_exhausted,
    };
    Ok(Curriculum { phases, manifest })
}

#[derive(Serialize)]
struct FineTuneRecord<'a> {
    prompt: &'a str,
    completion: String,
}

fn record(e: &TrainingExample) -> FineTuneRecord<'_> {
    FineTuneRecord {
        prompt: &e.prompt,
        completion: export_completion(&e.completion),
    }
}

/// Writes `phase_<n>.jsonl` per phase, `all.jsonl` with the phases
/// concatenated in order, and `manifest.json`.
pub fn export_jsonl(curriculum: &Curriculum, out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut paths = Vec::new();
    for phase in &curriculum.phases {
        let path = out_dir.join(format!("phase_{}.jsonl", phase.index));
        let records: Vec<_> = phase.examples.iter().map(record).collect();
        io::write_jsonl(&path, &records)?;
        paths.push(path);
    }
    let all = out_dir.join("all.jsonl");
    let records: Vec<_> = curriculum.sequence().map(record).collect();
    io::write_jsonl(&all, &records)?;
    paths.push(all);
    let manifest = out_dir.join("manifest.json");
    io::write_json(&manifest, &curriculum.manifest)?;
    paths.push(manifest);
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(kind: TaskKind, i: usize, tokens: usize) -> TrainingExample {
        TrainingExample {
            prompt: format!("{kind} prompt {i}"),
            completion: format!("answer {i}"),
            task_kind: kind,
            phrasing_id: format!("{kind}/p{}", i % 4),
            pair_ref: None,
            attribute: Some(if i % 2 == 0 { "a" } else { "b" }.into()),
            token_count: tokens,
        }
    }

    fn corpora() -> Corpora {
        Corpora {
            fs: (0..10).map(|i| ex(TaskKind::FactualStatement, i, 5)).collect(),
            fc: (0..40).map(|i| ex(TaskKind::FactualComparison, i, 10 + i % 3)).collect(),
            dt: (0..400).map(|i| ex(TaskKind::DecisionTemplate, i, 15 + i % 7)).collect(),
            neg: (0..12).map(|i| ex(TaskKind::NegPrefInterpretation, i, 6)).collect(),
        }
    }

    #[test]
    fn zero_budget_is_empty() {
        let c = corpora();
        assert!(balance_tokens(&c.dt, 0, 1).is_empty());
    }

    #[test]
    fn equal_lengths_take_exact_count() {
        let pool: Vec<_> = (0..10).map(|i| ex(TaskKind::DecisionTemplate, i, 7)).collect();
        assert_eq!(balance_tokens(&pool, 28, 3).len(), 4);
        assert_eq!(balance_tokens(&pool, 29, 3).len(), 5);
    }

    #[test]
    fn small_pool_returns_everything() {
        let pool: Vec<_> = (0..3).map(|i| ex(TaskKind::DecisionTemplate, i, 7)).collect();
        assert_eq!(balance_tokens(&pool, 1000, 0).len(), 3);
    }

    #[test]
    fn full_config_has_two_phases() {
        let cfg = CurriculumConfig::new(true, true, true, false, 4);
        let cur = assemble(&cfg, &corpora()).unwrap();
        assert_eq!(cur.phases.len(), 2);
        assert_eq!(cur.phases[0].tasks, vec![TaskKind::FactualStatement]);
        assert_eq!(cur.phases[1].tasks, vec![TaskKind::FactualComparison, TaskKind::DecisionTemplate]);
        let fc = cur.tokens(TaskKind::FactualComparison);
        let dt = cur.tokens(TaskKind::DecisionTemplate);
        let max = corpora().dt.iter().map(|e| e.token_count).max().unwrap();
        assert!(dt >= fc && dt - fc < max, "fc={fc} dt={dt}");
        assert_eq!(cur.manifest.label, "fs+fc+dt");
    }

    #[test]
    fn dt_only_is_one_phase_balanced_against_fc_corpus() {
        let cfg = CurriculumConfig::new(false, false, true, false, 4);
        let c = corpora();
        let cur = assemble(&cfg, &c).unwrap();
        assert_eq!(cur.phases.len(), 1);
        assert_eq!(cur.phases[0].index, 2);
        assert_eq!(cur.manifest.dt_target_tokens, Some(c.tokens(TaskKind::FactualComparison)));
    }

    #[test]
    fn shuffling_is_a_permutation() {
        let cfg = CurriculumConfig::new(true, false, false, true, 9);
        let c = corpora();
        let cur = assemble(&cfg, &c).unwrap();
        let mut got: Vec<_> = cur.phases[0].examples.iter().map(|e| e.prompt.clone()).collect();
        let mut want: Vec<_> = c.fs.iter().chain(&c.neg).map(|e| e.prompt.clone()).collect();
        assert_ne!(got, want);
        got.sort();
        want.sort();
        assert_eq!(got, want);
    }

    #[test]
    fn upsampling_reuses_examples() {
        let mut cfg = CurriculumConfig::new(true, false, true, false, 2);
        let c = corpora();
        let pool_tokens = c.tokens(TaskKind::DecisionTemplate);
        cfg.dt_upsample_to_tokens = Some(pool_tokens * 2);
        let cur = assemble(&cfg, &c).unwrap();
        let dt = cur.tokens(TaskKind::DecisionTemplate);
        assert!(dt >= pool_tokens * 2 && dt < pool_tokens * 2 + 22);
        assert!(cur.manifest.dt_pool_exhausted);
    }

    #[test]
    fn attribute_fold() {
        let mut cfg = CurriculumConfig::new(false, true, true, false, 2);
        cfg.dt_attribute_filter = Some("a".into());
        let cur = assemble(&cfg, &corpora()).unwrap();
        assert!(cur.phases[0]
            .examples
            .iter()
            .filter(|e| e.task_kind == TaskKind::DecisionTemplate)
            .all(|e| e.attribute.as_deref() == Some("a")));
        assert_eq!(cfg.label(), "fc+dt[a]");
    }

    #[test]
    fn config_errors() {
        assert!(assemble(&CurriculumConfig::new(false, false, false, false, 0), &corpora()).is_err());
        let mut cfg = CurriculumConfig::new(true, false, false, false, 0);
        cfg.dt_upsample_to_tokens = Some(10);
        assert!(cfg.validate().is_err());
        let mut c = corpora();
        c.neg.clear();
        assert!(assemble(&CurriculumConfig::new(false, false, false, true, 0), &c).is_err());
    }

    #[test]
    fn export_is_byte_identical() {
        let cfg = CurriculumConfig::new(true, true, true, true, 5);
        let c = corpora();
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let p1 = export_jsonl(&assemble(&cfg, &c).unwrap(), d1.path()).unwrap();
        let p2 = export_jsonl(&assemble(&cfg, &c).unwrap(), d2.path()).unwrap();
        assert_eq!(p1.len(), 4);
        for (a, b) in p1.iter().zip(&p2) {
            assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
        }
        let first = std::fs::read_to_string(&p1[0]).unwrap();
        let line: serde_json::Value = serde_json::from_str(first.lines().next().unwrap()).unwrap();
        assert!(line["completion"].as_str().unwrap().starts_with(' '));
        assert_eq!(line.as_object().unwrap().len(), 2);
    }
}
