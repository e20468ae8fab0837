//! End-to-end runs: domain, split, pairs, corpora, curricula, optional
//! fine-tuning, evaluation, prompting baselines and a report.
//!
//! Each stage records the hash of its inputs and of its outputs under
//! `stages/`. A stage whose input hash and output files are unchanged is
//! skipped. `manifest.json` lists every stage with those hashes and does not
//! depend on which stages were skipped.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::ablation::{self, AblationRow, Experiment};
use crate::backend::{wait_for_finetune, BackendConfig, FineTuneParams, OracleBackend, SystemClock};
use crate::cot::{self, ChainOptions, ExemplarSet, PromptMode};
use crate::curriculum::{self, Corpora, CurriculumConfig};
use crate::domain::Domain;
use crate::error::{Error, Result};
use crate::eval::{self, EvalReport, ScoringOptions, TestSuite};
use crate::ingest::IngestConfig;
use crate::phrasing::{self, PhrasingRegistry, TaskKind, TrainingExample};
use crate::split::{self, ItemSplit, PairOrigin, PairSet};
use crate::tokenizer::TokenizerSpec;
use crate::{io, presets, synthetic};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticPreset {
    Cities,
    Restaurants,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DomainSource {
    /// A domain JSON document.
    File { path: PathBuf },
    /// An ingest config (see [`IngestConfig`]).
    Ingest { config: PathBuf },
    /// Random items with the preset's attributes, for dry runs.
    Synthetic { preset: SyntheticPreset, items: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationConfig {
    #[serde(default = "default_n")]
    pub n_per_phrasing: usize,
    #[serde(default = "default_eval_tasks")]
    pub tasks: Vec<TaskKind>,
    #[serde(default)]
    pub scoring: ScoringOptions,
    /// Also write per-case CSV files.
    #[serde(default)]
    pub csv: bool,
}

fn default_n() -> usize {
    200
}
fn default_eval_tasks() -> Vec<TaskKind> {
    vec![TaskKind::FactualComparison, TaskKind::DecisionTemplate]
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            n_per_phrasing: default_n(),
            tasks: default_eval_tasks(),
            scoring: ScoringOptions::default(),
            csv: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FineTuneConfig {
    #[serde(default)]
    pub enabled: bool,
    #[serde(default)]
    pub params: FineTuneParams,
    /// One job per phase, each continuing from the previous model, instead
    /// of one job over the concatenated phases.
    #[serde(default)]
    pub sequential_phases: bool,
    #[serde(default = "default_poll_interval")]
    pub poll_interval_secs: u64,
    #[serde(default = "default_max_polls")]
    pub max_polls: usize,
}

fn default_poll_interval() -> u64 {
    30
}
fn default_max_polls() -> usize {
    2_000
}

impl Default for FineTuneConfig {
    fn default() -> Self {
        FineTuneConfig {
            enabled: false,
            params: FineTuneParams::default(),
            sequential_phases: false,
            poll_interval_secs: default_poll_interval(),
            max_polls: default_max_polls(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CotConfig {
    pub modes: Vec<PromptMode>,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_cot_n")]
    pub n_per_phrasing: usize,
    /// Hand-edited exemplars; built from training pairs when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exemplars: Option<PathBuf>,
    #[serde(default)]
    pub chain: ChainOptions,
}

fn default_k() -> usize {
    cot::DEFAULT_K
}
fn default_cot_n() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub domain: DomainSource,
    /// Phrasing registry; the bundled one for the domain's name by default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub registry: Option<PathBuf>,
    #[serde(default = "default_fraction")]
    pub train_fraction: f64,
    #[serde(default)]
    pub tokenizer: TokenizerSpec,
    /// Explicit curricula; their seeds are replaced by the run seed.
    #[serde(default)]
    pub curricula: Vec<CurriculumConfig>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub experiments: Vec<Experiment>,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
    pub backend: BackendConfig,
    #[serde(default)]
    pub finetune: FineTuneConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cot: Option<CotConfig>,
    /// Directory relative paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_fraction() -> f64 {
    0.3
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut cfg: RunConfig = io::read_json(path)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let must_exist = |p: &Path| -> Result<()> {
            let full = self.resolve(p);
            if full.exists() {
                Ok(())
            } else {
                Err(Error::Config(format!("referenced file {} does not exist", full.display())))
            }
        };
        match &self.domain {
            DomainSource::File { path } => must_exist(path)?,
            DomainSource::Ingest { config } => must_exist(config)?,
            DomainSource::Synthetic { .. } => {}
        }
        if let Some(r) = &self.registry {
            must_exist(r)?;
        }
        if let Some(CotConfig { exemplars: Some(e), .. }) = &self.cot {
            must_exist(e)?;
        }
        if let Some(v) = &self.tokenizer.vocab_source {
            must_exist(v)?;
        }
        for c in &self.curricula {
            c.validate()?;
        }
        Ok(())
    }

    pub fn fingerprint(&self) -> Result<String> {
        io::fingerprint(self)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub input_hash: String,
    /// Output path (relative to the run directory) to content hash.
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub seed: u64,
    pub stages: Vec<StageRecord>,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub manifest: RunManifest,
    pub skipped: Vec<String>,
    pub reports: Vec<EvalReport>,
}

/// Lines written to a stage's log file.
#[derive(Debug, Default)]
pub struct StageLog {
    lines: Vec<String>,
}

impl StageLog {
    pub fn info(&mut self, msg: impl Into<String>) {
        let msg = msg.into();
        log::info!("{msg}");
        self.lines.push(msg);
    }
}

struct Runner<'a> {
    out: &'a Path,
    records: Vec<StageRecord>,
    skipped: Vec<String>,
}

impl Runner<'_> {
    fn stage_file(&self, name: &str) -> PathBuf {
        self.out.join("stages").join(format!("{name}.json"))
    }

    fn output_hash(&self, name: &str) -> String {
        self.records
            .iter()
            .find(|r| r.name == name)
            .map(|r| io::fingerprint(&r.outputs).unwrap_or_default())
            .unwrap_or_default()
    }

    fn up_to_date(&self, name: &str, input_hash: &str) -> Option<StageRecord> {
        let rec: StageRecord = io::read_json(self.stage_file(name)).ok()?;
        if rec.input_hash != input_hash {
            return None;
        }
        for (rel, sha) in &rec.outputs {
            if io::sha256_file(self.out.join(rel)).ok().as_ref() != Some(sha) {
                return None;
            }
        }
        Some(rec)
    }

    /// Runs `body` unless the stage is up to date. `body` returns the
    /// output paths it wrote, relative to the run directory.
    fn stage(
        &mut self,
        name: &str,
        input: Value,
        body: impl FnOnce(&mut StageLog) -> Result<Vec<String>>,
    ) -> Result<()> {
        let input_hash = io::fingerprint(&input)?;
        if let Some(rec) = self.up_to_date(name, &input_hash) {
            log::info!("stage `{name}` is up to date");
            self.skipped.push(name.to_string());
            self.records.push(rec);
            return Ok(());
        }
        log::info!("running stage `{name}`");
        let log_path = self.out.join("logs").join(format!("{name}.log"));
        let mut log = StageLog::default();
        let result = body(&mut log);
        if let Err(e) = &result {
            log.lines.push(format!("error: {e}"));
        }
        io::ensure_parent(&log_path)?;
        fs::write(&log_path, log.lines.join("\n") + "\n").map_err(|e| Error::io(&log_path, e))?;
        let outputs = result.map_err(|e| Error::Stage {
            stage: name.to_string(),
            log: log_path.clone(),
            source: Box::new(e),
        })?;
        let mut hashed = BTreeMap::new();
        for rel in outputs {
            let sha = io::sha256_file(self.out.join(&rel))?;
            hashed.insert(rel, sha);
        }
        let rec = StageRecord { name: name.to_string(), input_hash, outputs: hashed };
        io::write_json(self.stage_file(name), &rec)?;
        self.records.push(rec);
        Ok(())
    }
}

fn rel(path: &Path, out: &Path) -> String {
    path.strip_prefix(out).unwrap_or(path).to_string_lossy().replace('\\', "/")
}

fn row_slug(id: &str) -> String {
    id.replace('/', "-")
}

fn file_hash(path: &Path) -> Result<String> {
    io::sha256_file(path)
}

fn domain_input(cfg: &RunConfig) -> Result<Value> {
    Ok(match &cfg.domain {
        DomainSource::File { path } => json!({"file": file_hash(&cfg.resolve(path))?}),
        DomainSource::Ingest { config } => {
            let path = cfg.resolve(config);
            let ingest: IngestConfig = io::read_json(&path)?;
            let base = path.parent().unwrap_or(Path::new("."));
            let tables: Vec<String> = match &ingest {
                IngestConfig::City { temperature_table, population_table, .. } => {
                    vec![table_hash(base, &temperature_table.path)?, table_hash(base, &population_table.path)?]
                }
                IngestConfig::Restaurant { table, .. } | IngestConfig::Generic { table, .. } => {
                    vec![table_hash(base, &table.path)?]
                }
            };
            json!({"ingest": ingest, "tables": tables, "seed": cfg.seed})
        }
        DomainSource::Synthetic { preset, items } => json!({"synthetic": preset, "items": items, "seed": cfg.seed}),
    })
}

fn table_hash(base: &Path, p: &Path) -> Result<String> {
    file_hash(&if p.is_absolute() { p.to_path_buf() } else { base.join(p) })
}

fn load_registry(cfg: &RunConfig, domain: &Domain) -> Result<PhrasingRegistry> {
    let reg = match &cfg.registry {
        Some(p) => PhrasingRegistry::load(cfg.resolve(p))?,
        None => presets::registry_for(&domain.name).ok_or_else(|| {
            Error::Config(format!("no bundled registry for domain `{}`; set `registry`", domain.name))
        })?,
    };
    reg.validate(domain)?;
    Ok(reg)
}

/// Rows to train and evaluate: explicit curricula first, then experiment
/// rows. Rows with identical configurations share one fine-tuned model.
fn plan_rows(cfg: &RunConfig, domain: &Domain, corpora: &Corpora) -> Result<Vec<AblationRow>> {
    let mut rows: Vec<AblationRow> = Vec::new();
    let explicit = if cfg.curricula.is_empty() && cfg.experiments.is_empty() {
        vec![CurriculumConfig::new(true, true, true, false, cfg.seed)]
    } else {
        cfg.curricula.clone()
    };
    for (i, c) in explicit.into_iter().enumerate() {
        let mut c = c;
        c.seed = cfg.seed;
        rows.push(AblationRow { id: format!("run/{}", i + 1), config: Some(c) });
    }
    for exp in &cfg.experiments {
        rows.extend(ablation::rows(*exp, domain, corpora, cfg.seed)?);
    }
    Ok(rows)
}

/// Builds the backend, aiming an oracle without its own domain at the
/// run's domain and registry.
fn build_backend(
    cfg: &RunConfig,
    model: Option<&str>,
    domain: &Domain,
    registry: &PhrasingRegistry,
) -> Result<std::sync::Arc<dyn crate::backend::Backend>> {
    if let BackendConfig::Oracle { domain: None, registry: None } = &cfg.backend {
        return Ok(std::sync::Arc::new(OracleBackend::new(domain.clone(), registry.clone())?));
    }
    if let BackendConfig::Oracle { domain: None, registry: Some(p) } = &cfg.backend {
        let registry = PhrasingRegistry::load(cfg.resolve(p))?;
        return Ok(std::sync::Arc::new(OracleBackend::new(domain.clone(), registry)?));
    }
    cfg.backend.with_model(model).build(&cfg.base_dir)
}

fn corpora_paths(out: &Path) -> [(TaskKind, PathBuf); 4] {
    TaskKind::ALL.map(|k| (k, out.join("corpora").join(format!("{}.jsonl", k.code()))))
}

fn load_corpora(out: &Path) -> Result<Corpora> {
    let mut c = Corpora::default();
    for (k, p) in corpora_paths(out) {
        *c.get_mut(k) = io::read_jsonl::<TrainingExample>(&p)?;
    }
    Ok(c)
}

/// Renders every component-task corpus from the training pairs and counts
/// tokens.
pub fn generate_corpora(
    domain: &Domain,
    registry: &PhrasingRegistry,
    train_pairs: &PairSet,
    tokenizer: &TokenizerSpec,
    seed: u64,
) -> Result<Corpora> {
    let tok = tokenizer.load()?;
    let mut corpora = Corpora {
        fs: phrasing::render_factual_statements(domain)?,
        fc: phrasing::render_factual_comparisons(train_pairs, domain, registry, seed)?,
        dt: phrasing::render_decision_templates(train_pairs, domain, registry, seed, None)?,
        neg: phrasing::render_negation_statements(domain, registry)?,
    };
    for k in TaskKind::ALL {
        tok.annotate(corpora.get_mut(k));
    }
    Ok(corpora)
}

/// Pipeline stages in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Domain,
    Split,
    Pairs,
    Generate,
    Curricula,
    Suites,
    Finetune,
    Evaluate,
    Prompting,
    Report,
}

pub fn run_pipeline(cfg: &RunConfig, out: &Path) -> Result<RunSummary> {
    run_until(cfg, out, Stage::Report)
}

fn finish(cfg: &RunConfig, out: &Path, r: Runner<'_>, reports: Vec<EvalReport>) -> Result<RunSummary> {
    let manifest = RunManifest { config_hash: cfg.fingerprint()?, seed: cfg.seed, stages: r.records };
    io::write_json(out.join("manifest.json"), &manifest)?;
    Ok(RunSummary { manifest, skipped: r.skipped, reports })
}

/// Runs every stage up to and including `until`.
pub fn run_until(cfg: &RunConfig, out: &Path, until: Stage) -> Result<RunSummary> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut r = Runner { out, records: Vec::new(), skipped: Vec::new() };
    macro_rules! stop_after {
        ($stage:expr, $reports:expr) => {
            if until == $stage {
                return finish(cfg, out, r, $reports);
            }
        };
    }
    let seed = cfg.seed;

    // domain
    let domain_path = out.join("domain.json");
    r.stage("domain", domain_input(cfg)?, |log| {
        let mut outputs = vec![rel(&domain_path, out)];
        let domain = match &cfg.domain {
            DomainSource::File { path } => Domain::load(cfg.resolve(path))?,
            DomainSource::Ingest { config } => {
                let path = cfg.resolve(config);
                let ingest: IngestConfig = io::read_json(&path)?;
                let (d, report) = ingest.run(path.parent().unwrap_or(Path::new(".")), Some(seed))?;
                log.info(format!(
                    "ingested {} items ({} considered, {} skipped)",
                    report.kept,
                    report.considered,
                    report.skipped.len()
                ));
                let rp = out.join("ingest_report.json");
                io::write_json(&rp, &report)?;
                outputs.push(rel(&rp, out));
                d
            }
            DomainSource::Synthetic { preset: SyntheticPreset::Cities, items } => synthetic::cities(*items, seed),
            DomainSource::Synthetic { preset: SyntheticPreset::Restaurants, items } => {
                synthetic::restaurants(*items, seed)
            }
        };
        log.info(format!("domain `{}` with {} items", domain.name, domain.items.len()));
        domain.save(&domain_path)?;
        Ok(outputs)
    })?;
    let domain = Domain::load(&domain_path)?;
    let registry = load_registry(cfg, &domain)?;

    stop_after!(Stage::Domain, Vec::new());

    // split
    let split_path = out.join("split.json");
    r.stage(
        "split",
        json!({"domain": r.output_hash("domain"), "fraction": cfg.train_fraction, "seed": seed}),
        |log| {
            let s = split::split_items(&domain, cfg.train_fraction, seed)?;
            log.info(format!("{} train / {} test items", s.train_items.len(), s.test_items.len()));
            io::write_json(&split_path, &s)?;
            Ok(vec![rel(&split_path, out)])
        },
    )?;
    let item_split: ItemSplit = io::read_json(&split_path)?;

    stop_after!(Stage::Split, Vec::new());

    // pairs
    let train_path = out.join("pairs").join("train.json");
    let test_path = out.join("pairs").join("test.json");
    r.stage("pairs", json!({"split": r.output_hash("split"), "domain": r.output_hash("domain")}), |log| {
        let train = split::enumerate_pairs(&item_split.train_items, &domain, PairOrigin::Train, seed)?;
        let test = split::enumerate_pairs(&item_split.test_items, &domain, PairOrigin::Test, seed)?;
        log.info(format!("{} train pairs, {} test pairs", train.len(), test.len()));
        io::write_json(&train_path, &train)?;
        io::write_json(&test_path, &test)?;
        Ok(vec![rel(&train_path, out), rel(&test_path, out)])
    })?;
    let train_pairs: PairSet = io::read_json(&train_path)?;
    item_split.check_pairs(&train_pairs.pairs, PairOrigin::Train)?;

    stop_after!(Stage::Pairs, Vec::new());

    // generate
    let vocab_hash = match &cfg.tokenizer.vocab_source {
        Some(p) if cfg.resolve(p).is_file() => file_hash(&cfg.resolve(p))?,
        Some(p) => {
            let dir = cfg.resolve(p);
            format!("{}{}", file_hash(&dir.join("vocab.json"))?, file_hash(&dir.join("merges.txt"))?)
        }
        None => String::new(),
    };
    let mut tokenizer = cfg.tokenizer.clone();
    tokenizer.vocab_source = tokenizer.vocab_source.map(|p| cfg.resolve(&p));
    r.stage(
        "generate",
        json!({
            "pairs": r.output_hash("pairs"),
            "domain": r.output_hash("domain"),
            "registry": io::fingerprint(&registry)?,
            "tokenizer": cfg.tokenizer.kind,
            "vocab": vocab_hash,
            "seed": seed,
        }),
        |log| {
            let corpora = generate_corpora(&domain, &registry, &train_pairs, &tokenizer, seed)?;
            let mut outputs = Vec::new();
            for (k, p) in corpora_paths(out) {
                io::write_jsonl(&p, corpora.get(k))?;
                log.info(format!("{k}: {} examples, {} tokens", corpora.get(k).len(), corpora.tokens(k)));
                outputs.push(rel(&p, out));
            }
            Ok(outputs)
        },
    )?;
    let corpora = load_corpora(out)?;

    stop_after!(Stage::Generate, Vec::new());

    // curricula
    let rows = plan_rows(cfg, &domain, &corpora)?;
    let rows_path = out.join("curricula").join("rows.json");
    r.stage("curricula", json!({"corpora": r.output_hash("generate"), "rows": rows}), |log| {
        let mut outputs = vec![rel(&rows_path, out)];
        io::write_json(&rows_path, &rows)?;
        for row in &rows {
            let Some(config) = &row.config else { continue };
            let c = curriculum::assemble(config, &corpora)?;
            log.info(format!(
                "{}: {} examples, {} tokens",
                row.id, c.manifest.total_examples, c.manifest.total_tokens
            ));
            for p in curriculum::export_jsonl(&c, out.join("curricula").join(row_slug(&row.id)))? {
                outputs.push(rel(&p, out));
            }
        }
        Ok(outputs)
    })?;

    stop_after!(Stage::Curricula, Vec::new());

    // suites
    let suite_path = |k: TaskKind| out.join("suites").join(format!("{}.json", k.code()));
    let cot_suite_path = out.join("suites").join("dt_prompting.json");
    r.stage(
        "suites",
        json!({
            "split": r.output_hash("split"),
            "domain": r.output_hash("domain"),
            "registry": io::fingerprint(&registry)?,
            "evaluation": cfg.evaluation,
            "cot_n": cfg.cot.as_ref().map(|c| c.n_per_phrasing),
            "seed": seed,
        }),
        |log| {
            let mut outputs = Vec::new();
            for &k in &cfg.evaluation.tasks {
                let s = eval::generate_test_suite(&item_split, &domain, &registry, k, cfg.evaluation.n_per_phrasing, seed)?;
                s.check_leakage(&item_split)?;
                log.info(format!("{k} suite: {} cases", s.len()));
                s.save(suite_path(k))?;
                outputs.push(rel(&suite_path(k), out));
            }
            if let Some(c) = &cfg.cot {
                let s = eval::generate_test_suite(
                    &item_split,
                    &domain,
                    &registry,
                    TaskKind::DecisionTemplate,
                    c.n_per_phrasing,
                    seed,
                )?;
                log.info(format!("prompting suite: {} cases", s.len()));
                s.save(&cot_suite_path)?;
                outputs.push(rel(&cot_suite_path, out));
            }
            Ok(outputs)
        },
    )?;

    stop_after!(Stage::Suites, Vec::new());

    // finetune
    let models_path = out.join("models.json");
    r.stage(
        "finetune",
        json!({"curricula": r.output_hash("curricula"), "backend": cfg.backend, "finetune": cfg.finetune}),
        |log| {
            let mut models: BTreeMap<String, Option<String>> = BTreeMap::new();
            if cfg.finetune.enabled {
                let backend = build_backend(cfg, None, &domain, &registry)?;
                let clock = SystemClock::default();
                let interval = Duration::from_secs(cfg.finetune.poll_interval_secs);
                let mut tuned: BTreeMap<String, String> = BTreeMap::new();
                for row in &rows {
                    if row.config.is_none() {
                        models.insert(row.id.clone(), None);
                        continue;
                    }
                    let key = io::fingerprint(&row.config)?;
                    if let Some(model) = tuned.get(&key) {
                        log.info(format!("{}: same curriculum as an earlier row, reusing {model}", row.id));
                        models.insert(row.id.clone(), Some(model.clone()));
                        continue;
                    }
                    let dir = out.join("curricula").join(row_slug(&row.id));
                    let files: Vec<PathBuf> = if cfg.finetune.sequential_phases {
                        let mut f: Vec<PathBuf> = fs::read_dir(&dir)
                            .map_err(|e| Error::io(&dir, e))?
                            .filter_map(|e| e.ok().map(|e| e.path()))
                            .filter(|p| p.file_name().is_some_and(|n| n.to_string_lossy().starts_with("phase_")))
                            .collect();
                        f.sort();
                        f
                    } else {
                        vec![dir.join("all.jsonl")]
                    };
                    let mut params = cfg.finetune.params.clone();
                    let mut model = String::new();
                    for f in files {
                        let handle = backend.submit_finetune(&f, &params)?;
                        log.info(format!("{}: submitted {} as {}", row.id, rel(&f, out), handle.id));
                        model = wait_for_finetune(backend.as_ref(), &handle, interval, cfg.finetune.max_polls, &clock)?;
                        params.base_model = Some(model.clone());
                    }
                    log.info(format!("{}: tuned model {model}", row.id));
                    tuned.insert(key, model.clone());
                    models.insert(row.id.clone(), Some(model));
                }
            } else {
                log.info("fine-tuning disabled; every row is evaluated on the configured backend");
                for row in &rows {
                    models.insert(row.id.clone(), None);
                }
            }
            io::write_json(&models_path, &models)?;
            Ok(vec![rel(&models_path, out)])
        },
    )?;
    let models: BTreeMap<String, Option<String>> = io::read_json(&models_path)?;

    stop_after!(Stage::Finetune, Vec::new());

    // evaluate
    let report_path = |row: &AblationRow, k: TaskKind| {
        out.join("reports").join(format!("{}_{}.json", row_slug(&row.id), k.code()))
    };
    r.stage(
        "evaluate",
        json!({
            "suites": r.output_hash("suites"),
            "models": r.output_hash("finetune"),
            "backend": cfg.backend,
            "scoring": cfg.evaluation.scoring,
            "csv": cfg.evaluation.csv,
        }),
        |log| {
            let mut outputs = Vec::new();
            for row in &rows {
                let model = models.get(&row.id).cloned().flatten();
                let backend = build_backend(cfg, model.as_deref(), &domain, &registry)?;
                for &k in &cfg.evaluation.tasks {
                    let suite = TestSuite::load(suite_path(k))?;
                    let label = format!("{} {}", row.id, row.label());
                    let (report, results) = eval::run_suite(backend.as_ref(), &suite, &cfg.evaluation.scoring, &label)?;
                    log.info(format!(
                        "{label} {k}: {:.3} ± {:.3} ({} errored)",
                        report.mean, report.dispersion, report.n_errored
                    ));
                    io::write_json(report_path(row, k), &report)?;
                    outputs.push(rel(&report_path(row, k), out));
                    if cfg.evaluation.csv {
                        let p = report_path(row, k).with_extension("csv");
                        eval::write_cases_csv(&suite.cases, &results, &p)?;
                        outputs.push(rel(&p, out));
                    }
                }
            }
            Ok(outputs)
        },
    )?;
    let mut reports: Vec<EvalReport> = Vec::new();
    for row in &rows {
        for &k in &cfg.evaluation.tasks {
            reports.push(io::read_json(report_path(row, k))?);
        }
    }

    stop_after!(Stage::Evaluate, reports);

    // prompting baselines
    if let Some(cot_cfg) = &cfg.cot {
        let exemplar_hash = match &cot_cfg.exemplars {
            Some(p) => file_hash(&cfg.resolve(p))?,
            None => String::new(),
        };
        let ex_path = out.join("prompting").join("exemplars.json");
        let mode_path = |m: PromptMode| out.join("prompting").join(format!("{}.json", serde_json::to_value(m).unwrap().as_str().unwrap_or("mode")));
        r.stage(
            "prompting",
            json!({
                "suites": r.output_hash("suites"),
                "pairs": r.output_hash("pairs"),
                "config": cot_cfg,
                "exemplars": exemplar_hash,
                "backend": cfg.backend,
                "scoring": cfg.evaluation.scoring,
            }),
            |log| {
                let set = match &cot_cfg.exemplars {
                    Some(p) => ExemplarSet::load(cfg.resolve(p))?,
                    None => ExemplarSet {
                        schema_version: cot::EXEMPLAR_SCHEMA_VERSION,
                        domain: domain.name.clone(),
                        exemplars: cot::build_exemplars(&domain, &registry, &train_pairs, cot_cfg.k, seed)?,
                    },
                };
                set.save(&ex_path)?;
                let mut outputs = vec![rel(&ex_path, out)];
                let suite = TestSuite::load(&cot_suite_path)?;
                let backend = build_backend(cfg, None, &domain, &registry)?;
                for &mode in &cot_cfg.modes {
                    let prefix = cot::build_prompt_prefix(&set.exemplars, mode, cot_cfg.k, &item_split)?;
                    let label = format!("{}-shot {}", cot_cfg.k, if mode == PromptMode::Cot { "chain-of-thought" } else { "plain" });
                    let (report, _) = cot::evaluate_prompted(
                        backend.as_ref(),
                        &prefix,
                        mode,
                        &suite,
                        &cfg.evaluation.scoring,
                        &cot_cfg.chain,
                        &label,
                    )?;
                    log.info(format!("{label}: {:.3} ± {:.3}", report.mean, report.dispersion));
                    io::write_json(mode_path(mode), &report)?;
                    outputs.push(rel(&mode_path(mode), out));
                }
                Ok(outputs)
            },
        )?;
        for &mode in &cot_cfg.modes {
            reports.push(io::read_json(mode_path(mode))?);
        }
    }

    stop_after!(Stage::Prompting, reports);

    // report
    let table_path = out.join("report.md");
    r.stage("report", json!({"reports": io::fingerprint(&reports)?}), |_| {
        fs::write(&table_path, render_table(&reports)).map_err(|e| Error::io(&table_path, e))?;
        Ok(vec![rel(&table_path, out)])
    })?;

    finish(cfg, out, r, reports)
}

/// Markdown table: one row per configuration label, one column per task
/// kind, cells `mean ± dispersion`.
pub fn render_table(reports: &[EvalReport]) -> String {
    let mut labels: Vec<&str> = Vec::new();
    let mut kinds: Vec<Option<TaskKind>> = Vec::new();
    let mut cells: BTreeMap<(String, String), String> = BTreeMap::new();
    let kind_name = |k: Option<TaskKind>| match k {
        Some(TaskKind::FactualComparison) => "factual comparisons".to_string(),
        Some(TaskKind::DecisionTemplate) => "decision templates".to_string(),
        Some(k) => k.code().to_string(),
        None => "mixed".to_string(),
    };
    for r in reports {
        if !labels.contains(&r.label.as_str()) {
            labels.push(&r.label);
        }
        if !kinds.contains(&r.task_kind) {
            kinds.push(r.task_kind);
        }
        cells.insert(
            (r.label.clone(), kind_name(r.task_kind)),
            format!("{:.2} ± {:.2}", r.mean, r.dispersion),
        );
    }
    kinds.sort_by_key(|k| k.map(|k| k.phase() * 10 + TaskKind::ALL.iter().position(|&x| x == k).unwrap_or(0)));
    let mut out = String::from("| configuration |");
    for k in &kinds {
        let _ = write!(out, " {} |", kind_name(*k));
    }
    out.push_str("\n|---|");
    out.push_str(&"---|".repeat(kinds.len()));
    out.push('\n');
    for l in labels {
        let _ = write!(out, "| {l} |");
        for k in &kinds {
            let cell = cells.get(&(l.to_string(), kind_name(*k))).map_or("", String::as_str);
            let _ = write!(out, " {cell} |");
        }
        out.push('\n');
    }
    let _ = writeln!(out, "\nCells are mean ± {} (accuracy per phrasing).", eval::DISPERSION_KIND);
    out
}
