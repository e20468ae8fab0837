//! Items, attributes, preferences and the two resolution rules every
//! rendered example and every oracle answer is derived from.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Version written into every serialized domain document.
pub const DOMAIN_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Order {
    Higher,
    Lower,
}

impl Order {
    pub const ALL: [Order; 2] = [Order::Higher, Order::Lower];

    pub fn opposite(self) -> Order {
        match self {
            Order::Higher => Order::Lower,
            Order::Lower => Order::Higher,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Order::Higher => "higher",
            Order::Lower => "lower",
        }
    }
}

impl fmt::Display for Order {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Positive,
    Negative,
}

impl Polarity {
    pub const ALL: [Polarity; 2] = [Polarity::Positive, Polarity::Negative];

    pub fn flipped(self) -> Polarity {
        match self {
            Polarity::Positive => Polarity::Negative,
            Polarity::Negative => Polarity::Positive,
        }
    }
}

/// `First` addresses the user directly ("You ..."), `Third` talks about
/// somebody else ("Someone ...").
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Person {
    First,
    Third,
}

impl Person {
    pub const ALL: [Person; 2] = [Person::First, Person::Third];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mood {
    Declarative,
    Subjunctive,
}

impl Mood {
    pub const ALL: [Mood; 2] = [Mood::Declarative, Mood::Subjunctive];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueKind {
    Continuous,
    /// Small integer scale, e.g. price in dollar signs stored as 1..=4.
    Ordinal,
}

/// How attribute values are spelled out in factual statements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "style", rename_all = "snake_case")]
pub enum ValueFormat {
    /// Fixed precision with optional prefix/suffix, e.g. `17.5C`, `3.2 miles`.
    Decimal {
        precision: usize,
        #[serde(default)]
        prefix: String,
        #[serde(default)]
        suffix: String,
    },
    /// Rounded integer with thousands separators, e.g. `2,500,000`.
    Grouped {
        #[serde(default)]
        suffix: String,
    },
    /// The symbol repeated `value` times, e.g. `$$`.
    Repeat { symbol: String },
}

impl ValueFormat {
    pub fn render(&self, value: f64) -> String {
        match self {
            ValueFormat::Decimal {
                precision,
                prefix,
                suffix,
            } => format!("{prefix}{value:.precision$}{suffix}"),
            ValueFormat::Grouped { suffix } => {
                format!("{}{suffix}", group_thousands(value.round() as i64))
            }
            ValueFormat::Repeat { symbol } => {
                symbol.repeat(value.round().max(0.0) as usize)
            }
        }
    }
}

fn group_thousands(n: i64) -> String {
    let digits = n.unsigned_abs().to_string();
    let mut out = String::with_capacity(digits.len() + digits.len() / 3 + 1);
    if n < 0 {
        out.push('-');
    }
    for (i, ch) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

/// One text fragment per order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ByOrder {
    pub higher: String,
    pub lower: String,
}

impl ByOrder {
    pub fn get(&self, order: Order) -> &str {
        match order {
            Order::Higher => &self.higher,
            Order::Lower => &self.lower,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeSpec {
    pub name: String,
    pub unit: String,
    pub value_kind: ValueKind,
    pub min_pair_difference: f64,
    /// e.g. "higher average temperature"
    pub direct_comparative: ByOrder,
    /// e.g. "warmer weather"
    pub indirect_comparative: ByOrder,
    /// Statement prompt with an `{item}` slot, e.g. "The average temperature in {item} is".
    pub statement_template: String,
    pub format: ValueFormat,
}

impl AttributeSpec {
    pub fn format_value(&self, value: f64) -> String {
        self.format.render(value)
    }

    fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(Error::InvalidDomain("attribute with empty name".into()));
        }
        if !(self.min_pair_difference > 0.0) || !self.min_pair_difference.is_finite() {
            return Err(Error::InvalidDomain(format!(
                "attribute `{}`: min_pair_difference must be > 0, got {}",
                self.name, self.min_pair_difference
            )));
        }
        for (label, frag) in [
            ("direct_comparative", &self.direct_comparative),
            ("indirect_comparative", &self.indirect_comparative),
        ] {
            if frag.higher.trim().is_empty() || frag.lower.trim().is_empty() {
                return Err(Error::InvalidDomain(format!(
                    "attribute `{}`: {label} needs a fragment for both orders",
                    self.name
                )));
            }
        }
        if !self.statement_template.contains("{item}") {
            return Err(Error::InvalidDomain(format!(
                "attribute `{}`: statement_template lacks an {{item}} slot",
                self.name
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Item {
    pub id: String,
    pub display_name: String,
    pub values: BTreeMap<String, f64>,
}

impl Item {
    pub fn value(&self, attribute: &str) -> Option<f64> {
        self.values.get(attribute).copied()
    }
}

/// Which attributes a pair has to clear before it can be used.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Qualification {
    /// Every attribute difference meets its threshold. One pair then serves
    /// comparisons and decisions on any attribute.
    #[default]
    AllAttributes,
    /// A pair is usable for an attribute whenever that attribute clears its
    /// threshold.
    PerAttribute,
}

/// A pair of distinct items, referenced by id. The order is the order in
/// which they would be mentioned.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ItemPair {
    pub first: String,
    pub second: String,
}

impl ItemPair {
    pub fn new(first: impl Into<String>, second: impl Into<String>) -> Self {
        ItemPair {
            first: first.into(),
            second: second.into(),
        }
    }

    pub fn swapped(&self) -> ItemPair {
        ItemPair {
            first: self.second.clone(),
            second: self.first.clone(),
        }
    }

    /// Lexicographically ordered ids, used for deduplication.
    pub fn canonical(&self) -> ItemPair {
        if self.first <= self.second {
            self.clone()
        } else {
            self.swapped()
        }
    }

    /// Stable identifier of the unordered pair.
    pub fn key(&self) -> String {
        let c = self.canonical();
        format!("{}|{}", c.first, c.second)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.first == id || self.second == id
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Preference<'a> {
    pub attribute: &'a str,
    /// The order named by the sentence ("cold weather" names `Lower`).
    pub order: Order,
    pub polarity: Polarity,
    pub person: Person,
    pub mood: Mood,
}

impl<'a> Preference<'a> {
    /// The order the user actually wants: a negative preference rejects the
    /// order it names.
    pub fn effective_order(&self) -> Order {
        match self.polarity {
            Polarity::Positive => self.order,
            Polarity::Negative => self.order.opposite(),
        }
    }

    /// The equivalent preference of the opposite polarity.
    pub fn negated(&self) -> Preference<'a> {
        Preference {
            polarity: self.polarity.flipped(),
            order: self.order.opposite(),
            ..*self
        }
    }

    /// All 8 surface variants for one (attribute, order).
    pub fn variants(attribute: &'a str, order: Order) -> impl Iterator<Item = Preference<'a>> {
        Polarity::ALL.into_iter().flat_map(move |polarity| {
            Person::ALL.into_iter().flat_map(move |person| {
                Mood::ALL.into_iter().map(move |mood| Preference {
                    attribute,
                    order,
                    polarity,
                    person,
                    mood,
                })
            })
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "DomainDocument", into = "DomainDocument")]
pub struct Domain {
    pub name: String,
    /// Singular noun for items, e.g. "city".
    pub item_noun: String,
    pub items: Vec<Item>,
    pub attributes: Vec<AttributeSpec>,
    pub qualification: Qualification,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct DomainDocument {
    schema_version: u32,
    name: String,
    item_noun: String,
    #[serde(default)]
    qualification: Qualification,
    attributes: Vec<AttributeSpec>,
    items: Vec<Item>,
}

impl TryFrom<DomainDocument> for Domain {
    type Error = Error;

    fn try_from(doc: DomainDocument) -> Result<Self> {
        if doc.schema_version != DOMAIN_SCHEMA_VERSION {
            return Err(Error::InvalidDomain(format!(
                "unsupported schema_version {} (expected {DOMAIN_SCHEMA_VERSION})",
                doc.schema_version
            )));
        }
        let mut d = Domain::new(doc.name, doc.item_noun, doc.attributes, doc.items)?;
        d.qualification = doc.qualification;
        Ok(d)
    }
}

impl From<Domain> for DomainDocument {
    fn from(d: Domain) -> Self {
        DomainDocument {
            schema_version: DOMAIN_SCHEMA_VERSION,
            name: d.name,
            item_noun: d.item_noun,
            qualification: d.qualification,
            attributes: d.attributes,
            items: d.items,
        }
    }
}

impl Domain {
    pub fn new(
        name: impl Into<String>,
        item_noun: impl Into<String>,
        attributes: Vec<AttributeSpec>,
        items: Vec<Item>,
    ) -> Result<Self> {
        let mut d = Domain {
            name: name.into(),
            item_noun: item_noun.into(),
            items,
            attributes,
            qualification: Qualification::default(),
            index: HashMap::new(),
        };
        d.validate()?;
        Ok(d)
    }

    pub fn with_qualification(mut self, q: Qualification) -> Self {
        self.qualification = q;
        self
    }

    fn validate(&mut self) -> Result<()> {
        if self.attributes.is_empty() {
            return Err(Error::InvalidDomain("a domain needs at least one attribute".into()));
        }
        let mut names = HashSet::new();
        for a in &self.attributes {
            a.validate()?;
            if !names.insert(a.name.as_str()) {
                return Err(Error::InvalidDomain(format!("duplicate attribute `{}`", a.name)));
            }
        }
        let mut display = HashSet::new();
        self.index.clear();
        for (pos, item) in self.items.iter().enumerate() {
            if item.display_name.trim().is_empty() {
                return Err(Error::InvalidDomain(format!("item `{}` has an empty display name", item.id)));
            }
            if !display.insert(item.display_name.as_str()) {
                return Err(Error::InvalidDomain(format!(
                    "duplicate display name `{}`",
                    item.display_name
                )));
            }
            if self.index.insert(item.id.clone(), pos).is_some() {
                return Err(Error::InvalidDomain(format!("duplicate item id `{}`", item.id)));
            }
            for a in &self.attributes {
                match item.value(&a.name) {
                    Some(v) if v.is_finite() => {}
                    Some(v) => {
                        return Err(Error::InvalidDomain(format!(
                            "item `{}`: non-finite value {v} for `{}`",
                            item.id, a.name
                        )))
                    }
                    None => {
                        return Err(Error::InvalidDomain(format!(
                            "item `{}` has no value for `{}`",
                            item.id, a.name
                        )))
                    }
                }
            }
        }
        Ok(())
    }

    pub fn item(&self, id: &str) -> Option<&Item> {
        self.index.get(id).map(|&i| &self.items[i])
    }

    pub(crate) fn require_item(&self, id: &str) -> Result<&Item> {
        self.item(id)
            .ok_or_else(|| Error::Config(format!("unknown item `{id}` in domain `{}`", self.name)))
    }

    pub fn item_by_name(&self, display_name: &str) -> Option<&Item> {
        self.items.iter().find(|i| i.display_name == display_name)
    }

    pub fn attribute(&self, name: &str) -> Result<&AttributeSpec> {
        self.attributes
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| Error::Config(format!("unknown attribute `{name}` in domain `{}`", self.name)))
    }

    pub fn attribute_names(&self) -> impl Iterator<Item = &str> {
        self.attributes.iter().map(|a| a.name.as_str())
    }

    /// Whether the pair clears the threshold on one attribute.
    pub fn qualifies_on(&self, pair: &ItemPair, attribute: &str) -> Result<bool> {
        let spec = self.attribute(attribute)?;
        let (a, b) = self.pair_items(pair)?;
        Ok(attribute_gap(a, b, &spec.name) >= spec.min_pair_difference)
    }

    /// Qualification rule for whole pairs, according to `self.qualification`.
    pub fn qualifies(&self, pair: &ItemPair) -> Result<bool> {
        if pair.first == pair.second {
            return Ok(false);
        }
        let (a, b) = self.pair_items(pair)?;
        let mut clears = self
            .attributes
            .iter()
            .map(|spec| attribute_gap(a, b, &spec.name) >= spec.min_pair_difference);
        Ok(match self.qualification {
            Qualification::AllAttributes => clears.all(|c| c),
            Qualification::PerAttribute => clears.any(|c| c),
        })
    }

    /// Attributes a qualifying pair can be asked about.
    pub fn usable_attributes(&self, pair: &ItemPair) -> Result<Vec<&AttributeSpec>> {
        match self.qualification {
            Qualification::AllAttributes => Ok(self.attributes.iter().collect()),
            Qualification::PerAttribute => {
                let mut out = Vec::new();
                for a in &self.attributes {
                    if self.qualifies_on(pair, &a.name)? {
                        out.push(a);
                    }
                }
                Ok(out)
            }
        }
    }

    pub fn pair_items(&self, pair: &ItemPair) -> Result<(&Item, &Item)> {
        Ok((self.require_item(&pair.first)?, self.require_item(&pair.second)?))
    }

    /// The item of the pair that satisfies `order` on `attribute`.
    pub fn resolve_comparison(&self, pair: &ItemPair, attribute: &str, order: Order) -> Result<&Item> {
        self.attribute(attribute)?;
        let (a, b) = self.pair_items(pair)?;
        let (va, vb) = (a.values[attribute], b.values[attribute]);
        if va == vb {
            return Err(Error::Invariant(format!(
                "tie on `{attribute}` between `{}` and `{}`",
                a.id, b.id
            )));
        }
        let first_wins = match order {
            Order::Higher => va > vb,
            Order::Lower => va < vb,
        };
        Ok(if first_wins { a } else { b })
    }

    /// The item of the pair that best matches a single preference.
    pub fn resolve_recommendation(&self, pair: &ItemPair, preference: &Preference<'_>) -> Result<&Item> {
        self.resolve_comparison(pair, preference.attribute, preference.effective_order())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::io::write_json(path, self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        crate::io::read_json(path)
    }
}

fn attribute_gap(a: &Item, b: &Item, attribute: &str) -> f64 {
    (a.values[attribute] - b.values[attribute]).abs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;

    fn cities() -> Domain {
        Domain::new(
            "cities",
            "city",
            presets::city_attributes(),
            vec![
                city("lisbon", "Lisbon", 17.5, 2_900_000.0),
                city("london", "London", 11.1, 9_000_000.0),
                city("oslo", "Oslo", 6.3, 700_000.0),
            ],
        )
        .unwrap()
    }

    fn city(id: &str, name: &str, temp: f64, pop: f64) -> Item {
        Item {
            id: id.into(),
            display_name: name.into(),
            values: [("temperature".to_string(), temp), ("population".to_string(), pop)].into(),
        }
    }

    #[test]
    fn warmer_city_is_lisbon() {
        let d = cities();
        let pair = ItemPair::new("london", "lisbon");
        assert_eq!(d.resolve_comparison(&pair, "temperature", Order::Higher).unwrap().id, "lisbon");
        assert_eq!(d.resolve_comparison(&pair, "temperature", Order::Lower).unwrap().id, "london");
    }

    #[test]
    fn dont_like_cold_weather_means_warmer() {
        let d = cities();
        let pair = ItemPair::new("london", "lisbon");
        let p = Preference {
            attribute: "temperature",
            order: Order::Lower,
            polarity: Polarity::Negative,
            person: Person::First,
            mood: Mood::Declarative,
        };
        assert_eq!(d.resolve_recommendation(&pair, &p).unwrap().display_name, "Lisbon");
        assert_eq!(p.negated().polarity, Polarity::Positive);
        assert_eq!(p.negated().order, Order::Higher);
        assert_eq!(p.negated().negated(), p);
    }

    #[test]
    fn unknown_attribute_is_config_error() {
        let d = cities();
        let err = d
            .resolve_comparison(&ItemPair::new("london", "lisbon"), "humidity", Order::Higher)
            .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn tie_is_invariant_violation() {
        let mut items = cities().items;
        items[2].values.insert("temperature".into(), 17.5);
        let d = Domain::new("cities", "city", presets::city_attributes(), items).unwrap();
        let err = d
            .resolve_comparison(&ItemPair::new("oslo", "lisbon"), "temperature", Order::Higher)
            .unwrap_err();
        assert!(matches!(err, Error::Invariant(_)));
    }

    #[test]
    fn qualification_modes() {
        let d = cities();
        // London/Lisbon: 6.4C apart, fails the 10C threshold.
        let pair = ItemPair::new("london", "lisbon");
        assert!(!d.qualifies(&pair).unwrap());
        assert!(!d.qualifies(&pair.swapped()).unwrap());
        // Oslo/Lisbon: 11.2C but only 2.2M apart.
        let pair = ItemPair::new("oslo", "lisbon");
        assert!(!d.qualifies(&pair).unwrap());
        let per = d.clone().with_qualification(Qualification::PerAttribute);
        assert!(per.qualifies(&pair).unwrap());
        let usable: Vec<_> = per.usable_attributes(&pair).unwrap().iter().map(|a| a.name.clone()).collect();
        assert_eq!(usable, vec!["temperature".to_string()]);
    }

    #[test]
    fn validation_rejects_bad_domains() {
        let mut items = cities().items;
        items[1].display_name = "Lisbon".into();
        assert!(Domain::new("c", "city", presets::city_attributes(), items).is_err());

        let mut items = cities().items;
        items[0].values.remove("population");
        assert!(Domain::new("c", "city", presets::city_attributes(), items).is_err());

        assert!(Domain::new("c", "city", vec![], cities().items).is_err());

        let mut attrs = presets::city_attributes();
        attrs[0].min_pair_difference = 0.0;
        assert!(Domain::new("c", "city", attrs, vec![]).is_err());
    }

    #[test]
    fn value_formats() {
        let dec = ValueFormat::Decimal { precision: 1, prefix: String::new(), suffix: "C".into() };
        assert_eq!(dec.render(17.5), "17.5C");
        assert_eq!(dec.render(-3.04), "-3.0C");
        let grouped = ValueFormat::Grouped { suffix: String::new() };
        assert_eq!(grouped.render(2_500_000.0), "2,500,000");
        assert_eq!(grouped.render(950.0), "950");
        assert_eq!(grouped.render(-1234.0), "-1,234");
        assert_eq!(ValueFormat::Repeat { symbol: "$".into() }.render(3.0), "$$$");
    }

    #[test]
    fn json_roundtrip_keeps_schema_version() {
        let d = cities();
        let json = d.to_json().unwrap();
        assert!(json.contains("\"schema_version\": 1"));
        let back: Domain = serde_json::from_str(&json).unwrap();
        assert_eq!(back.items, d.items);
        assert_eq!(back.item("oslo").unwrap().display_name, "Oslo");
        let bad = json.replace("\"schema_version\": 1", "\"schema_version\": 9");
        assert!(serde_json::from_str::<Domain>(&bad).is_err());
    }
}
