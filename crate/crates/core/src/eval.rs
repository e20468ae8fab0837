//! Held-out test suites, pairwise likelihood scoring and per-phrasing
//! aggregation.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::backend::{Backend, GenerationRequest, Normalization};
use crate::curriculum::export_completion;
use crate::domain::{Domain, ItemPair};
use crate::error::{Error, Result};
use crate::phrasing::{PhrasingRegistry, Question, TaskKind};
use crate::split::{enumerate_pairs, ItemSplit, PairOrigin};
use crate::{io, rng};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestCase {
    pub id: String,
    pub prompt: String,
    pub correct: String,
    pub wrong: String,
    pub task_kind: TaskKind,
    pub phrasing_id: String,
    /// The pair in the order shown in the prompt.
    pub pair: ItemPair,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestSuite {
    pub domain: String,
    pub task_kind: TaskKind,
    pub n_per_phrasing: usize,
    pub seed: u64,
    pub cases: Vec<TestCase>,
}

impl TestSuite {
    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }

    pub fn phrasings(&self) -> Vec<&str> {
        let mut ids: Vec<&str> = self.cases.iter().map(|c| c.phrasing_id.as_str()).collect();
        ids.dedup();
        ids
    }

    /// Fails unless every case is about two test items.
    pub fn check_leakage(&self, split: &ItemSplit) -> Result<()> {
        let pairs: Vec<ItemPair> = self.cases.iter().map(|c| c.pair.clone()).collect();
        split.check_pairs(&pairs, PairOrigin::Test)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        io::write_json(path, self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        io::read_json(path)
    }
}

/// `n_per_phrasing` cases for each phrasing of `task_kind`, drawn without
/// replacement from the qualifying test pairs.
pub fn generate_test_suite(
    split: &ItemSplit,
    domain: &Domain,
    registry: &PhrasingRegistry,
    task_kind: TaskKind,
    n_per_phrasing: usize,
    seed: u64,
) -> Result<TestSuite> {
    if n_per_phrasing == 0 {
        return Err(Error::Config("n_per_phrasing must be positive".into()));
    }
    let attrs: Vec<_> = domain.attributes.iter().collect();
    let questions: Vec<Question<'_>> = match task_kind {
        TaskKind::FactualComparison => registry.comparison_questions(&attrs),
        TaskKind::DecisionTemplate => registry.decision_questions(&attrs),
        other => return Err(Error::Config(format!("no test suites for {other} (only fc and dt)"))),
    };
    let pairs = enumerate_pairs(&split.test_items, domain, PairOrigin::Test, seed)?;
    split.check_pairs(&pairs.pairs, PairOrigin::Test)?;

    let mut cases = Vec::with_capacity(questions.len() * n_per_phrasing);
    for q in &questions {
        let phrasing_id = q.phrasing_id();
        let mut eligible = Vec::new();
        for p in &pairs.pairs {
            if domain.usable_attributes(p)?.iter().any(|a| a.name == q.attribute()) {
                eligible.push(p);
            }
        }
        if eligible.len() < n_per_phrasing {
            return Err(Error::InsufficientPairs {
                phrasing: phrasing_id,
                requested: n_per_phrasing,
                available: eligible.len(),
            });
        }
        eligible.shuffle(&mut rng::stream(seed, &["suite", &phrasing_id]));
        for (i, pair) in eligible.into_iter().take(n_per_phrasing).enumerate() {
            let ex = registry.render_example(domain, q, pair, seed)?;
            let shown = if crate::phrasing::example_flip(seed, &pair.key(), &phrasing_id) {
                pair.canonical().swapped()
            } else {
                pair.canonical()
            };
            let (a, b) = domain.pair_items(&shown)?;
            let wrong = if a.display_name == ex.completion { b } else { a };
            cases.push(TestCase {
                id: format!("{phrasing_id}#{i:04}"),
                prompt: ex.prompt,
                correct: ex.completion,
                wrong: wrong.display_name.clone(),
                task_kind,
                phrasing_id: phrasing_id.clone(),
                pair: shown,
            });
        }
    }
    Ok(TestSuite {
        domain: domain.name.clone(),
        task_kind,
        n_per_phrasing,
        seed,
        cases,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoringOptions {
    #[serde(default)]
    pub normalization: Normalization,
    /// Also record the backend's greedy top-5 for each case. Diagnostic only.
    #[serde(default)]
    pub greedy_diagnostic: bool,
    /// Parallel scoring workers; 0 means one per available CPU.
    #[serde(default)]
    pub workers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Outcome {
    Scored { score: u8, correct_score: f64, wrong_score: f64 },
    Errored { message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub id: String,
    pub phrasing_id: String,
    pub task_kind: TaskKind,
    pub outcome: Outcome,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub greedy_top5: Vec<(String, f64)>,
}

impl CaseResult {
    pub fn score(&self) -> Option<u8> {
        match self.outcome {
            Outcome::Scored { score, .. } => Some(score),
            Outcome::Errored { .. } => None,
        }
    }
}

/// 1 iff the correct candidate scores strictly higher; ties score 0.
pub fn decide(correct_score: f64, wrong_score: f64) -> u8 {
    u8::from(correct_score > wrong_score)
}

/// Scores one case against an explicit prompt (the case's own prompt, or
/// one with a few-shot prefix).
pub fn score_prompt(backend: &dyn Backend, prompt: &str, case: &TestCase, options: &ScoringOptions) -> CaseResult {
    let candidates = [export_completion(&case.correct), export_completion(&case.wrong)];
    let outcome = match backend.score_candidates(prompt, &candidates) {
        Ok(s) if s.candidates.len() == 2 => {
            let c = s.candidates[0].score(options.normalization);
            let w = s.candidates[1].score(options.normalization);
            if c.is_finite() && w.is_finite() {
                Outcome::Scored { score: decide(c, w), correct_score: c, wrong_score: w }
            } else {
                Outcome::Errored { message: "non-finite candidate score".into() }
            }
        }
        Ok(s) => Outcome::Errored { message: format!("backend returned {} scores for 2 candidates", s.candidates.len()) },
        Err(e) => Outcome::Errored { message: e.to_string() },
    };
    let greedy_top5 = if options.greedy_diagnostic {
        backend
            .generate_greedy(prompt, &GenerationRequest { max_tokens: 1, top_k: 5, stop: vec![] })
            .map(|g| g.top)
            .unwrap_or_default()
    } else {
        vec![]
    };
    CaseResult {
        id: case.id.clone(),
        phrasing_id: case.phrasing_id.clone(),
        task_kind: case.task_kind,
        outcome,
        greedy_top5,
    }
}

pub fn score_case(backend: &dyn Backend, case: &TestCase, options: &ScoringOptions) -> CaseResult {
    score_prompt(backend, &case.prompt, case, options)
}

/// Scores all cases on a worker pool. Results come back in case order
/// whatever order the workers finish in.
pub fn evaluate_with<F>(backend: &dyn Backend, cases: &[TestCase], options: &ScoringOptions, prompt_for: F) -> Vec<CaseResult>
where
    F: Fn(&TestCase) -> Result<String> + Sync,
{
    let workers = match options.workers {
        0 => std::thread::available_parallelism().map_or(4, |n| n.get()),
        n => n,
    }
    .min(cases.len().max(1));
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<CaseResult>>> = Mutex::new(vec![None; cases.len()]);
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(case) = cases.get(i) else { break };
                let result = match prompt_for(case) {
                    Ok(prompt) => score_prompt(backend, &prompt, case, options),
                    Err(e) => CaseResult {
                        id: case.id.clone(),
                        phrasing_id: case.phrasing_id.clone(),
                        task_kind: case.task_kind,
                        outcome: Outcome::Errored { message: e.to_string() },
                        greedy_top5: vec![],
                    },
                };
                slots.lock().unwrap()[i] = Some(result);
            });
        }
    });
    slots
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("every case is scored once"))
        .collect()
}

pub fn evaluate(backend: &dyn Backend, suite: &TestSuite, options: &ScoringOptions) -> Vec<CaseResult> {
    evaluate_with(backend, &suite.cases, options, |c| Ok(c.prompt.clone()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhrasingCounts {
    pub scored: usize,
    pub errored: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub label: String,
    pub task_kind: Option<TaskKind>,
    pub per_phrasing: BTreeMap<String, f64>,
    pub counts: BTreeMap<String, PhrasingCounts>,
    /// Unweighted mean of the per-phrasing accuracies.
    pub mean: f64,
    /// Population standard deviation of the per-phrasing accuracies.
    pub dispersion: f64,
    pub dispersion_kind: String,
    pub n_cases: usize,
    pub n_scored: usize,
    pub n_errored: usize,
    pub fingerprint: String,
}

pub const DISPERSION_KIND: &str = "population standard deviation across phrasings";

/// Mean and population standard deviation.
pub fn mean_and_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Phrasings whose cases all errored have no accuracy and are left out of
/// the mean; their errors still count.
pub fn aggregate(label: &str, results: &[CaseResult], fingerprint: String) -> EvalReport {
    let mut counts: BTreeMap<String, (usize, usize, usize)> = BTreeMap::new();
    for r in results {
        let e = counts.entry(r.phrasing_id.clone()).or_default();
        match r.score() {
            Some(s) => {
                e.0 += s as usize;
                e.1 += 1;
            }
            None => e.2 += 1,
        }
    }
    let per_phrasing: BTreeMap<String, f64> = counts
        .iter()
        .filter(|(_, c)| c.1 > 0)
        .map(|(id, c)| (id.clone(), c.0 as f64 / c.1 as f64))
        .collect();
    let accs: Vec<f64> = per_phrasing.values().copied().collect();
    let (mean, dispersion) = mean_and_std(&accs);
    let mut kinds: Vec<TaskKind> = results.iter().map(|r| r.task_kind).collect();
    kinds.dedup();
    EvalReport {
        label: label.to_string(),
        task_kind: if kinds.len() == 1 { Some(kinds[0]) } else { None },
        per_phrasing,
        n_scored: counts.values().map(|c| c.1).sum(),
        n_errored: counts.values().map(|c| c.2).sum(),
        counts: counts
            .into_iter()
            .map(|(id, c)| (id, PhrasingCounts { scored: c.1, errored: c.2 }))
            .collect(),
        mean,
        dispersion,
        dispersion_kind: DISPERSION_KIND.into(),
        n_cases: results.len(),
        fingerprint,
    }
}

/// Evaluates a suite and aggregates under a fingerprint of (suite, backend,
/// options).
pub fn run_suite(backend: &dyn Backend, suite: &TestSuite, options: &ScoringOptions, label: &str) -> Result<(EvalReport, Vec<CaseResult>)> {
    let results = evaluate(backend, suite, options);
    let fingerprint = io::fingerprint(&(io::fingerprint(suite)?, backend.describe(), options.normalization))?;
    Ok((aggregate(label, &results, fingerprint), results))
}

pub fn write_cases_csv(cases: &[TestCase], results: &[CaseResult], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    io::ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["id", "phrasing_id", "task_kind", "pair", "correct", "wrong", "score", "correct_score", "wrong_score", "error"])?;
    for (c, r) in cases.iter().zip(results) {
        let (score, cs, ws, err) = match &r.outcome {
            Outcome::Scored { score, correct_score, wrong_score } => {
                (score.to_string(), correct_score.to_string(), wrong_score.to_string(), String::new())
            }
            Outcome::Errored { message } => (String::new(), String::new(), String::new(), message.clone()),
        };
        w.write_record([
            c.id.as_str(),
            &c.phrasing_id,
            c.task_kind.code(),
            &c.pair.key(),
            &c.correct,
            &c.wrong,
            &score,
            &cs,
            &ws,
            &err,
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{CandidateScore, FineTuneHandle, FineTuneParams, FineTuneStatus, Generation, OracleBackend, ScoredCandidates};
    use crate::presets;
    use crate::synthetic;

    struct Adversary;

    impl Backend for Adversary {
        fn describe(&self) -> String {
            "adversary".into()
        }
        fn score_candidates(&self, prompt: &str, candidates: &[String]) -> Result<ScoredCandidates> {
            Ok(ScoredCandidates {
                prompt: prompt.into(),
                candidates: vec![
                    CandidateScore { text: candidates[0].clone(), logprob: -2.0, tokens: 1 },
                    CandidateScore { text: candidates[1].clone(), logprob: -1.0, tokens: 1 },
                ],
                greedy_top5: vec![],
            })
        }
        fn generate_greedy(&self, _: &str, _: &GenerationRequest) -> Result<Generation> {
            Err(Error::Backend("no".into()))
        }
        fn submit_finetune(&self, _: &Path, _: &FineTuneParams) -> Result<FineTuneHandle> {
            Err(Error::Backend("no".into()))
        }
        fn poll_finetune(&self, _: &FineTuneHandle) -> Result<FineTuneStatus> {
            Err(Error::Backend("no".into()))
        }
    }

    fn setup() -> (Domain, ItemSplit) {
        let d = synthetic::cities(80, 3);
        let s = crate::split::split_items(&d, 0.3, 3).unwrap();
        (d, s)
    }

    #[test]
    fn suite_sizes_and_leakage() {
        let (d, s) = setup();
        let reg = presets::cities_registry();
        let fc = generate_test_suite(&s, &d, &reg, TaskKind::FactualComparison, 5, 1).unwrap();
        let dt = generate_test_suite(&s, &d, &reg, TaskKind::DecisionTemplate, 5, 1).unwrap();
        assert_eq!(fc.len(), 40);
        assert_eq!(dt.len(), 160);
        assert_eq!(dt.phrasings().len(), 32);
        fc.check_leakage(&s).unwrap();
        dt.check_leakage(&s).unwrap();
        assert_eq!(dt, generate_test_suite(&s, &d, &reg, TaskKind::DecisionTemplate, 5, 1).unwrap());
        for c in &dt.cases {
            assert_ne!(c.correct, c.wrong);
        }
        let one = generate_test_suite(&s, &d, &reg, TaskKind::FactualComparison, 1, 2).unwrap();
        assert_eq!(one.len(), 8);
        one.check_leakage(&s).unwrap();
    }

    #[test]
    fn insufficient_pairs_reports_maximum() {
        let (d, s) = setup();
        let reg = presets::cities_registry();
        match generate_test_suite(&s, &d, &reg, TaskKind::FactualComparison, 1_000_000, 1) {
            Err(Error::InsufficientPairs { requested, available, .. }) => {
                assert_eq!(requested, 1_000_000);
                assert!(available > 0);
            }
            other => panic!("{other:?}"),
        }
        assert!(generate_test_suite(&s, &d, &reg, TaskKind::FactualStatement, 1, 1).is_err());
    }

    #[test]
    fn oracle_scores_everything_adversary_nothing() {
        let (d, s) = setup();
        let reg = presets::cities_registry();
        let suite = generate_test_suite(&s, &d, &reg, TaskKind::DecisionTemplate, 3, 1).unwrap();
        let oracle = OracleBackend::new(d, reg).unwrap();
        let (report, _) = run_suite(&oracle, &suite, &ScoringOptions::default(), "oracle").unwrap();
        assert_eq!(report.mean, 1.0);
        assert_eq!(report.dispersion, 0.0);
        assert_eq!(report.n_errored, 0);
        let (report, _) = run_suite(&Adversary, &suite, &ScoringOptions::default(), "adv").unwrap();
        assert_eq!(report.mean, 0.0);
    }

    #[test]
    fn ties_score_zero() {
        assert_eq!(decide(-1.0, -1.0), 0);
        assert_eq!(decide(-0.5, -1.0), 1);
        assert_eq!(decide(-1.5, -1.0), 0);
    }

    fn result(phrasing: &str, score: Option<u8>) -> CaseResult {
        CaseResult {
            id: String::new(),
            phrasing_id: phrasing.into(),
            task_kind: TaskKind::DecisionTemplate,
            outcome: match score {
                Some(s) => Outcome::Scored { score: s, correct_score: 0.0, wrong_score: 0.0 },
                None => Outcome::Errored { message: "x".into() },
            },
            greedy_top5: vec![],
        }
    }

    #[test]
    fn aggregation() {
        let r = aggregate("t", &[result("a", Some(1)), result("a", Some(1)), result("b", Some(0))], String::new());
        assert_eq!((r.mean, r.dispersion), (0.5, 0.5));
        let r = aggregate(
            "t",
            &[result("a", Some(1)), result("a", None), result("b", Some(1)), result("c", None)],
            String::new(),
        );
        assert_eq!(r.mean, 1.0);
        assert_eq!(r.dispersion, 0.0);
        assert_eq!(r.n_scored + r.n_errored, r.n_cases);
        assert_eq!(r.n_errored, 2);
        assert!(!r.per_phrasing.contains_key("c"));
    }

    #[test]
    fn csv_export() {
        let (d, s) = setup();
        let reg = presets::cities_registry();
        let suite = generate_test_suite(&s, &d, &reg, TaskKind::FactualComparison, 1, 1).unwrap();
        let results = evaluate(&Adversary, &suite, &ScoringOptions::default());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cases.csv");
        write_cases_csv(&suite.cases, &results, &p).unwrap();
        let text = std::fs::read_to_string(p).unwrap();
        assert_eq!(text.lines().count(), 9);
    }
}
