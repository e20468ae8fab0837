//! Few-shot prompting baselines: plain k-shot and chain-of-thought k-shot.
//!
//! Exemplar serialization, one block per exemplar:
//!
//! ```text
//! Q: {question}
//! A: {chain} The answer is {answer}.
//!
//! ```
//!
//! Plain mode drops `{chain} `. A test case is appended as
//! `Q: {prompt}\nA:`; in plain mode the answer marker follows at once, in
//! chain-of-thought mode the backend first generates its own chain (greedy,
//! stopping at the marker) and the marker is appended after it. Candidates
//! are scored right after the marker. With zero exemplars in plain mode the
//! case prompt is used as is.
//!
//! Exemplar files are JSON ([`ExemplarSet`]) and meant to be edited by hand;
//! `pair` must name two training items.

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::backend::{Backend, GenerationRequest};
use crate::domain::{Domain, ItemPair};
use crate::error::{Error, Result};
use crate::eval::{self, CaseResult, EvalReport, ScoringOptions, TestSuite};
use crate::phrasing::{fill, ComparisonStyle, PhrasingRegistry, Question};
use crate::split::{ItemSplit, PairOrigin, PairSet};
use crate::{io, rng};

pub const DEFAULT_K: usize = 8;
pub const ANSWER_MARKER: &str = "The answer is";
pub const EXEMPLAR_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    Plain,
    Cot,
}

impl std::str::FromStr for PromptMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(PromptMode::Plain),
            "cot" => Ok(PromptMode::Cot),
            other => Err(Error::Config(format!("unknown prompt mode `{other}` (expected plain or cot)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exemplar {
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chain: Option<String>,
    pub answer: String,
    pub pair: ItemPair,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExemplarSet {
    pub schema_version: u32,
    pub domain: String,
    pub exemplars: Vec<Exemplar>,
}

impl ExemplarSet {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let set: ExemplarSet = io::read_json(path)?;
        if set.schema_version != EXEMPLAR_SCHEMA_VERSION {
            return Err(Error::Config(format!("unsupported exemplar schema_version {}", set.schema_version)));
        }
        Ok(set)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        io::write_json(path, self)
    }
}

/// The reasoning for one decision question: both items' facts, the
/// comparison they settle, and the conclusion.
fn chain_for(domain: &Domain, registry: &PhrasingRegistry, question: &Question<'_>, pair: &ItemPair) -> Result<String> {
    let Question::Decision { preference, .. } = question else {
        return Err(Error::Invariant("chains are built for decision questions".into()));
    };
    let attr = domain.attribute(preference.attribute)?;
    let (a, b) = domain.pair_items(pair)?;
    let fact = |item: &crate::domain::Item| -> String {
        let stmt = fill(&attr.statement_template, &[("item", &item.display_name), ("noun", &domain.item_noun)]);
        format!("{stmt} {}.", attr.format_value(item.values[&attr.name]))
    };
    let order = preference.effective_order();
    let cmp = Question::Comparison { attribute: attr, order, style: ComparisonStyle::Direct };
    let answer = question.answer(domain, pair)?;
    Ok(format!(
        "{} {} {} {}.",
        fact(a),
        fact(b),
        registry.render_question(domain, &cmp, pair)?,
        answer.display_name
    ))
}

/// `k` exemplars over distinct training pairs, each with its chain, cycling
/// through the decision phrasings in a seeded order.
pub fn build_exemplars(
    domain: &Domain,
    registry: &PhrasingRegistry,
    train_pairs: &PairSet,
    k: usize,
    seed: u64,
) -> Result<Vec<Exemplar>> {
    if train_pairs.origin != PairOrigin::Train {
        return Err(Error::Leakage("exemplars must come from training pairs".into()));
    }
    if train_pairs.len() < k {
        return Err(Error::InsufficientPairs {
            phrasing: "exemplars".into(),
            requested: k,
            available: train_pairs.len(),
        });
    }
    let attrs: Vec<_> = domain.attributes.iter().collect();
    let mut questions = registry.decision_questions(&attrs);
    questions.shuffle(&mut rng::stream(seed, &["cot", "questions"]));
    let mut pairs: Vec<&ItemPair> = train_pairs.pairs.iter().collect();
    pairs.shuffle(&mut rng::stream(seed, &["cot", "pairs"]));

    let mut out = Vec::with_capacity(k);
    for pair in pairs {
        if out.len() == k {
            break;
        }
        let usable = domain.usable_attributes(pair)?;
        let Some(q) = questions
            .iter()
            .cycle()
            .skip(out.len())
            .take(questions.len())
            .find(|q| usable.iter().any(|a| a.name == q.attribute()))
        else {
            continue;
        };
        let ex = registry.render_example(domain, q, pair, seed)?;
        let shown = if crate::phrasing::example_flip(seed, &pair.key(), &q.phrasing_id()) {
            pair.canonical().swapped()
        } else {
            pair.canonical()
        };
        out.push(Exemplar {
            question: ex.prompt,
            chain: Some(chain_for(domain, registry, q, &shown)?),
            answer: ex.completion,
            pair: shown,
        });
    }
    if out.len() < k {
        return Err(Error::InsufficientPairs { phrasing: "exemplars".into(), requested: k, available: out.len() });
    }
    Ok(out)
}

/// Concatenated exemplar blocks. Fails on a wrong exemplar count, a pair
/// outside the training split, or a missing chain in CoT mode.
pub fn build_prompt_prefix(exemplars: &[Exemplar], mode: PromptMode, k: usize, split: &ItemSplit) -> Result<String> {
    if exemplars.len() != k {
        return Err(Error::Config(format!("expected {k} exemplars, got {}", exemplars.len())));
    }
    let pairs: Vec<ItemPair> = exemplars.iter().map(|e| e.pair.clone()).collect();
    split.check_pairs(&pairs, PairOrigin::Train)?;
    let mut out = String::new();
    for (i, e) in exemplars.iter().enumerate() {
        out.push_str("Q: ");
        out.push_str(&e.question);
        out.push_str("\nA: ");
        if mode == PromptMode::Cot {
            let chain = e
                .chain
                .as_deref()
                .filter(|c| !c.trim().is_empty())
                .ok_or_else(|| Error::Config(format!("exemplar {i} has no chain")))?;
            out.push_str(chain.trim());
            out.push(' ');
        }
        out.push_str(&format!("{ANSWER_MARKER} {}.\n\n", e.answer));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainOptions {
    pub max_chain_tokens: usize,
}

impl Default for ChainOptions {
    fn default() -> Self {
        ChainOptions { max_chain_tokens: 128 }
    }
}

/// The full prompt a case is scored against.
pub fn case_prompt(
    backend: &dyn Backend,
    prefix: &str,
    mode: PromptMode,
    prompt: &str,
    chain: &ChainOptions,
) -> Result<String> {
    match mode {
        PromptMode::Plain if prefix.is_empty() => Ok(prompt.to_string()),
        PromptMode::Plain => Ok(format!("{prefix}Q: {prompt}\nA: {ANSWER_MARKER}")),
        PromptMode::Cot => {
            let query = format!("{prefix}Q: {prompt}\nA:");
            let generated = backend.generate_greedy(
                &query,
                &GenerationRequest { max_tokens: chain.max_chain_tokens, top_k: 1, stop: vec![ANSWER_MARKER.into()] },
            )?;
            let text = generated.text.trim_end();
            Ok(format!("{query}{text} {ANSWER_MARKER}"))
        }
    }
}

pub fn evaluate_prompted(
    backend: &dyn Backend,
    prefix: &str,
    mode: PromptMode,
    suite: &TestSuite,
    options: &ScoringOptions,
    chain: &ChainOptions,
    label: &str,
) -> Result<(EvalReport, Vec<CaseResult>)> {
    let results = eval::evaluate_with(backend, &suite.cases, options, |case| {
        case_prompt(backend, prefix, mode, &case.prompt, chain)
    });
    let fingerprint = io::fingerprint(&(
        io::fingerprint(suite)?,
        io::sha256_hex(prefix),
        mode,
        backend.describe(),
        options.normalization,
    ))?;
    Ok((eval::aggregate(label, &results, fingerprint), results))
}
