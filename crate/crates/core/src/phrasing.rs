//! Phrasing registry and the renderers that turn a domain and its pairs into
//! component-task training examples.
//!
//! A registry is plain data (JSON). Templates use `{slot}` placeholders:
//!
//! | slot                  | filled with                                   |
//! |-----------------------|-----------------------------------------------|
//! | `{item}`              | an item's display name (statements)           |
//! | `{item1}`, `{item2}`  | the pair, in mention order                    |
//! | `{noun}`              | the domain's item noun ("city")               |
//! | `{attribute_phrase}`  | a direct or indirect comparative fragment     |
//! | `{preference_phrase}` | the preference phrase for (attribute, order, polarity) |
//!
//! Every prompt stops right before its answer; the completion is the answer
//! alone (an item name, a formatted value or a rephrased preference).

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::domain::{AttributeSpec, Domain, ItemPair, Mood, Order, Person, Polarity, Preference};
use crate::error::{Error, Result};
use crate::split::{flip_coin, PairOrigin, PairSet};

pub const REGISTRY_SCHEMA_VERSION: u32 = 1;
pub const DECISION_FRAMES: usize = 8;
pub const NEGATION_STATEMENTS: usize = 12;

const KNOWN_SLOTS: &[&str] = &[
    "item",
    "item1",
    "item2",
    "noun",
    "attribute_phrase",
    "preference_phrase",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    FactualStatement,
    FactualComparison,
    DecisionTemplate,
    NegPrefInterpretation,
}

impl TaskKind {
    pub const ALL: [TaskKind; 4] = [
        TaskKind::FactualStatement,
        TaskKind::FactualComparison,
        TaskKind::DecisionTemplate,
        TaskKind::NegPrefInterpretation,
    ];

    pub fn code(self) -> &'static str {
        match self {
            TaskKind::FactualStatement => "fs",
            TaskKind::FactualComparison => "fc",
            TaskKind::DecisionTemplate => "dt",
            TaskKind::NegPrefInterpretation => "neg",
        }
    }

    /// Curriculum phase (1-based). Statements and negation interpretations
    /// depend on nothing; comparisons and decisions build on them.
    pub fn phase(self) -> usize {
        match self {
            TaskKind::FactualStatement | TaskKind::NegPrefInterpretation => 1,
            TaskKind::FactualComparison | TaskKind::DecisionTemplate => 2,
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TaskKind::ALL
            .into_iter()
            .find(|k| k.code() == s)
            .ok_or_else(|| Error::Config(format!("unknown task kind `{s}` (expected fs, fc, dt or neg)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComparisonStyle {
    /// Names the attribute value ("higher average temperature").
    Direct,
    /// Refers to it indirectly ("warmer weather").
    Indirect,
}

impl ComparisonStyle {
    pub const ALL: [ComparisonStyle; 2] = [ComparisonStyle::Direct, ComparisonStyle::Indirect];

    fn as_str(self) -> &'static str {
        match self {
            ComparisonStyle::Direct => "direct",
            ComparisonStyle::Indirect => "indirect",
        }
    }

    fn fragment(self, attr: &AttributeSpec, order: Order) -> &str {
        match self {
            ComparisonStyle::Direct => attr.direct_comparative.get(order),
            ComparisonStyle::Indirect => attr.indirect_comparative.get(order),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolarityPhrases {
    /// Used with positive frames: "You like {warmer weather}".
    pub positive: String,
    /// Used with negative frames: "You don't like {warm weather}".
    pub negative: String,
}

impl PolarityPhrases {
    pub fn get(&self, polarity: Polarity) -> &str {
        match polarity {
            Polarity::Positive => &self.positive,
            Polarity::Negative => &self.negative,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferencePhrases {
    pub higher: PolarityPhrases,
    pub lower: PolarityPhrases,
}

impl PreferencePhrases {
    pub fn get(&self, order: Order) -> &PolarityPhrases {
        match order {
            Order::Higher => &self.higher,
            Order::Lower => &self.lower,
        }
    }
}

/// One of the eight decision-template surface forms.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionFrame {
    pub id: String,
    pub polarity: Polarity,
    pub person: Person,
    pub mood: Mood,
    /// Preference sentence, e.g. "You like {preference_phrase}."
    pub preference: String,
    /// Choice sentence ending right before the answer.
    pub choice: String,
    /// Whether the frame is quoted as-is from published examples.
    #[serde(default)]
    pub verbatim: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NegationRule {
    pub attribute: String,
    /// The order named by the negative phrase.
    pub order: Order,
    pub prompt: String,
    pub completion: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhrasingRegistry {
    pub schema_version: u32,
    pub domain: String,
    pub comparison_frames: BTreeMap<ComparisonStyle, String>,
    pub preference_phrases: BTreeMap<String, PreferencePhrases>,
    pub decision_frames: Vec<DecisionFrame>,
    pub negations: Vec<NegationRule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notes: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub prompt: String,
    pub completion: String,
    pub task_kind: TaskKind,
    pub phrasing_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair_ref: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attribute: Option<String>,
    #[serde(default)]
    pub token_count: usize,
}

/// A rendered question about one pair, before the answer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Question<'a> {
    Comparison {
        attribute: &'a AttributeSpec,
        order: Order,
        style: ComparisonStyle,
    },
    Decision {
        preference: Preference<'a>,
        frame: &'a DecisionFrame,
    },
}

impl Question<'_> {
    pub fn task_kind(&self) -> TaskKind {
        match self {
            Question::Comparison { .. } => TaskKind::FactualComparison,
            Question::Decision { .. } => TaskKind::DecisionTemplate,
        }
    }

    pub fn phrasing_id(&self) -> String {
        match self {
            Question::Comparison { attribute, order, style } => {
                format!("fc/{}/{}/{}", attribute.name, order, style.as_str())
            }
            Question::Decision { preference, frame } => {
                format!("dt/{}/{}/{}", preference.attribute, preference.order, frame.id)
            }
        }
    }

    pub fn attribute(&self) -> &str {
        match self {
            Question::Comparison { attribute, .. } => &attribute.name,
            Question::Decision { preference, .. } => preference.attribute,
        }
    }

    /// The correct item for this question on `pair`.
    pub fn answer<'d>(&self, domain: &'d Domain, pair: &ItemPair) -> Result<&'d crate::domain::Item> {
        match self {
            Question::Comparison { attribute, order, .. } => {
                domain.resolve_comparison(pair, &attribute.name, *order)
            }
            Question::Decision { preference, .. } => domain.resolve_recommendation(pair, preference),
        }
    }
}

/// Replaces `{slot}` placeholders.
pub fn fill(template: &str, slots: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (name, value) in slots {
        out = out.replace(&format!("{{{name}}}"), value);
    }
    out
}

impl PhrasingRegistry {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        crate::io::read_json(path)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::io::write_json(path, self)
    }

    /// Checks the registry's shape and that it covers every attribute of `domain`.
    pub fn validate(&self, domain: &Domain) -> Result<()> {
        let cfg = |msg: String| Err(Error::Config(format!("registry `{}`: {msg}", self.domain)));
        if self.schema_version != REGISTRY_SCHEMA_VERSION {
            return cfg(format!("unsupported schema_version {}", self.schema_version));
        }
        let slot_re = Regex::new(r"\{([^{}]*)\}").expect("static regex");
        let check_slots = |text: &str, required: &[&str]| -> Result<()> {
            for cap in slot_re.captures_iter(text) {
                if !KNOWN_SLOTS.contains(&&cap[1]) {
                    return Err(Error::Config(format!("unknown slot `{{{}}}` in `{text}`", &cap[1])));
                }
            }
            for r in required {
                if !text.contains(&format!("{{{r}}}")) {
                    return Err(Error::Config(format!("template `{text}` lacks `{{{r}}}`")));
                }
            }
            Ok(())
        };

        if self.comparison_frames.len() != ComparisonStyle::ALL.len() {
            return cfg(format!(
                "expected exactly 2 comparison styles, found {}",
                self.comparison_frames.len()
            ));
        }
        for frame in self.comparison_frames.values() {
            check_slots(frame, &["item1", "item2", "attribute_phrase"])?;
        }

        if self.decision_frames.len() != DECISION_FRAMES {
            return cfg(format!(
                "expected exactly {DECISION_FRAMES} decision frames, found {}",
                self.decision_frames.len()
            ));
        }
        let mut combos = HashSet::new();
        let mut ids = HashSet::new();
        for f in &self.decision_frames {
            if !ids.insert(f.id.as_str()) {
                return cfg(format!("duplicate decision frame id `{}`", f.id));
            }
            if !combos.insert((f.polarity, f.person, f.mood)) {
                return cfg(format!(
                    "decision frame `{}` repeats {:?}/{:?}/{:?}",
                    f.id, f.polarity, f.person, f.mood
                ));
            }
            check_slots(&f.preference, &["preference_phrase"])?;
            check_slots(&f.choice, &["item1", "item2"])?;
        }

        for attr in &domain.attributes {
            let Some(p) = self.preference_phrases.get(&attr.name) else {
                return cfg(format!("no preference phrases for attribute `{}`", attr.name));
            };
            for order in Order::ALL {
                for pol in Polarity::ALL {
                    if p.get(order).get(pol).trim().is_empty() {
                        return cfg(format!("empty {pol:?} {order} phrase for `{}`", attr.name));
                    }
                }
            }
        }

        if self.negations.len() != NEGATION_STATEMENTS {
            return cfg(format!(
                "expected exactly {NEGATION_STATEMENTS} negation statements, found {}",
                self.negations.len()
            ));
        }
        for n in &self.negations {
            domain.attribute(&n.attribute)?;
            if n.prompt.trim().is_empty() || n.completion.trim().is_empty() {
                return cfg(format!("empty negation statement for `{}`", n.attribute));
            }
        }
        Ok(())
    }

    pub fn frame(&self, id: &str) -> Option<&DecisionFrame> {
        self.decision_frames.iter().find(|f| f.id == id)
    }

    fn preference_phrase(&self, p: &Preference<'_>) -> Result<&str> {
        self.preference_phrases
            .get(p.attribute)
            .map(|pp| pp.get(p.order).get(p.polarity))
            .ok_or_else(|| Error::Config(format!("no preference phrases for `{}`", p.attribute)))
    }

    /// The preference sentence alone, e.g. "You don't like cold weather."
    pub fn preference_sentence(&self, domain: &Domain, preference: &Preference<'_>, frame: &DecisionFrame) -> Result<String> {
        Ok(fill(
            &frame.preference,
            &[("noun", &domain.item_noun), ("preference_phrase", self.preference_phrase(preference)?)],
        ))
    }

    /// All comparison questions the pair can be asked, in registry order.
    pub fn comparison_questions<'a>(&'a self, attributes: &[&'a AttributeSpec]) -> Vec<Question<'a>> {
        let mut out = Vec::with_capacity(attributes.len() * 4);
        for &attribute in attributes {
            for order in Order::ALL {
                for style in ComparisonStyle::ALL {
                    if self.comparison_frames.contains_key(&style) {
                        out.push(Question::Comparison { attribute, order, style });
                    }
                }
            }
        }
        out
    }

    /// All decision questions: (attribute, order) preferences times frames.
    pub fn decision_questions<'a>(&'a self, attributes: &[&'a AttributeSpec]) -> Vec<Question<'a>> {
        let mut out = Vec::with_capacity(attributes.len() * 2 * self.decision_frames.len());
        for &attribute in attributes {
            for order in Order::ALL {
                for frame in &self.decision_frames {
                    out.push(Question::Decision {
                        preference: Preference {
                            attribute: &attribute.name,
                            order,
                            polarity: frame.polarity,
                            person: frame.person,
                            mood: frame.mood,
                        },
                        frame,
                    });
                }
            }
        }
        out
    }

    /// Renders the prompt for `question` with the pair in the given order.
    pub fn render_question(&self, domain: &Domain, question: &Question<'_>, pair: &ItemPair) -> Result<String> {
        let (a, b) = domain.pair_items(pair)?;
        match question {
            Question::Comparison { attribute, order, style } => {
                let frame = self
                    .comparison_frames
                    .get(style)
                    .ok_or_else(|| Error::Config(format!("no {} comparison frame", style.as_str())))?;
                Ok(fill(
                    frame,
                    &[
                        ("item1", &a.display_name),
                        ("item2", &b.display_name),
                        ("noun", &domain.item_noun),
                        ("attribute_phrase", style.fragment(attribute, *order)),
                    ],
                ))
            }
            Question::Decision { preference, frame } => {
                let pref = self.preference_sentence(domain, preference, frame)?;
                let choice = fill(
                    &frame.choice,
                    &[("item1", &a.display_name), ("item2", &b.display_name), ("noun", &domain.item_noun)],
                );
                Ok(format!("{pref} {choice}"))
            }
        }
    }

    /// Renders a question as a finished example; item order is decided by
    /// a coin flip keyed on (seed, pair, phrasing).
    pub fn render_example(
        &self,
        domain: &Domain,
        question: &Question<'_>,
        pair: &ItemPair,
        seed: u64,
    ) -> Result<TrainingExample> {
        let phrasing_id = question.phrasing_id();
        let key = pair.key();
        let shown = if example_flip(seed, &key, &phrasing_id) {
            pair.canonical().swapped()
        } else {
            pair.canonical()
        };
        Ok(TrainingExample {
            prompt: self.render_question(domain, question, &shown)?,
            completion: question.answer(domain, &shown)?.display_name.clone(),
            task_kind: question.task_kind(),
            phrasing_id,
            pair_ref: Some(key),
            attribute: Some(question.attribute().to_string()),
            token_count: 0,
        })
    }
}

/// The per-example order coin: true means the canonical order is swapped.
pub fn example_flip(seed: u64, pair_key: &str, phrasing_id: &str) -> bool {
    flip_coin(seed, pair_key, phrasing_id)
}

fn require_training(pairs: &PairSet, what: &str) -> Result<()> {
    if pairs.origin != PairOrigin::Train {
        return Err(Error::Leakage(format!(
            "{what} for training requires train-origin pairs, got {:?}",
            pairs.origin
        )));
    }
    Ok(())
}

/// One example per (item, attribute), over every item in the domain.
pub fn render_factual_statements(domain: &Domain) -> Result<Vec<TrainingExample>> {
    let mut out = Vec::with_capacity(domain.items.len() * domain.attributes.len());
    for item in &domain.items {
        for attr in &domain.attributes {
            let value = item
                .value(&attr.name)
                .ok_or_else(|| Error::Config(format!("item `{}` lacks `{}`", item.id, attr.name)))?;
            out.push(TrainingExample {
                prompt: fill(&attr.statement_template, &[("item", &item.display_name), ("noun", &domain.item_noun)]),
                completion: attr.format_value(value),
                task_kind: TaskKind::FactualStatement,
                phrasing_id: format!("fs/{}", attr.name),
                pair_ref: None,
                attribute: Some(attr.name.clone()),
                token_count: 0,
            });
        }
    }
    Ok(out)
}

/// |A| x 2 orders x 2 styles examples per pair.
pub fn render_factual_comparisons(
    pairs: &PairSet,
    domain: &Domain,
    registry: &PhrasingRegistry,
    seed: u64,
) -> Result<Vec<TrainingExample>> {
    require_training(pairs, "factual comparisons")?;
    let mut out = Vec::with_capacity(pairs.pairs.len() * domain.attributes.len() * 4);
    for pair in &pairs.pairs {
        let attrs = domain.usable_attributes(pair)?;
        for q in registry.comparison_questions(&attrs) {
            out.push(registry.render_example(domain, &q, pair, seed)?);
        }
    }
    Ok(out)
}

/// 2 orders x 8 frames per attribute and pair; `attribute_filter` keeps a
/// single attribute's fold.
pub fn render_decision_templates(
    pairs: &PairSet,
    domain: &Domain,
    registry: &PhrasingRegistry,
    seed: u64,
    attribute_filter: Option<&str>,
) -> Result<Vec<TrainingExample>> {
    require_training(pairs, "decision templates")?;
    if let Some(f) = attribute_filter {
        domain.attribute(f)?;
    }
    let mut out = Vec::with_capacity(pairs.pairs.len() * domain.attributes.len() * 16);
    for pair in &pairs.pairs {
        let attrs: Vec<_> = domain
            .usable_attributes(pair)?
            .into_iter()
            .filter(|a| attribute_filter.is_none_or(|f| a.name == f))
            .collect();
        for q in registry.decision_questions(&attrs) {
            out.push(registry.render_example(domain, &q, pair, seed)?);
        }
    }
    Ok(out)
}

pub fn render_negation_statements(domain: &Domain, registry: &PhrasingRegistry) -> Result<Vec<TrainingExample>> {
    if registry.negations.len() != NEGATION_STATEMENTS {
        return Err(Error::Config(format!(
            "registry `{}` defines {} negation statements, expected {NEGATION_STATEMENTS}",
            registry.domain,
            registry.negations.len()
        )));
    }
    registry
        .negations
        .iter()
        .enumerate()
        .map(|(i, n)| {
            domain.attribute(&n.attribute)?;
            Ok(TrainingExample {
                prompt: n.prompt.clone(),
                completion: n.completion.clone(),
                task_kind: TaskKind::NegPrefInterpretation,
                phrasing_id: format!("neg/{i:02}"),
                pair_ref: None,
                attribute: Some(n.attribute.clone()),
                token_count: 0,
            })
        })
        .collect()
}
