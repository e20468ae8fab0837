//! Loading user-supplied tables into domains.
//!
//! Tables are character-separated with a header row. Keys are matched after
//! normalization (case-fold, trim, whitespace collapse, diacritics removed),
//! so "São Paulo" in one source joins "Sao Paulo" in another.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

use crate::domain::{AttributeSpec, Domain, Item};
use crate::error::{Error, Result};
use crate::presets;
use crate::rng;

pub fn normalize_key(raw: &str) -> String {
    let stripped: String = raw.nfd().filter(|c| !is_combining_mark(*c)).collect();
    stripped
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// Lowercase ASCII identifier derived from a name.
pub fn slug(raw: &str) -> String {
    let mut out = String::new();
    for c in normalize_key(raw).chars() {
        if c.is_ascii_alphanumeric() {
            out.push(c);
        } else if !out.ends_with('-') && !out.is_empty() {
            out.push('-');
        }
    }
    while out.ends_with('-') {
        out.pop();
    }
    out
}

/// What to do when two rows normalize to the same key.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum DuplicatePolicy {
    #[default]
    Error,
    KeepFirst,
    /// Keep the row with the largest numeric value in `column`.
    KeepMax { column: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawRow {
    /// Key as written in the source.
    pub key: String,
    pub columns: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawTable {
    pub rows: Vec<RawRow>,
    pub source_label: String,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

/// Where a table comes from and how to read it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableSource {
    pub path: PathBuf,
    pub key_column: String,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
    #[serde(default)]
    pub duplicates: DuplicatePolicy,
}

fn default_delimiter() -> char {
    ','
}

impl TableSource {
    pub fn load(&self, base: &Path) -> Result<RawTable> {
        let path = if self.path.is_absolute() { self.path.clone() } else { base.join(&self.path) };
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        RawTable::parse(
            &text,
            &self.key_column,
            self.delimiter,
            &self.duplicates,
            &path.display().to_string(),
        )
    }
}

impl RawTable {
    pub fn parse(
        text: &str,
        key_column: &str,
        delimiter: char,
        duplicates: &DuplicatePolicy,
        source_label: &str,
    ) -> Result<Self> {
        if !delimiter.is_ascii() {
            return Err(Error::Config(format!("delimiter {delimiter:?} must be ASCII")));
        }
        let mut reader = csv::ReaderBuilder::new()
            .delimiter(delimiter as u8)
            .flexible(true)
            .from_reader(text.as_bytes());
        let headers: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
        if !headers.iter().any(|h| h == key_column) {
            return Err(Error::Ingest(format!("{source_label}: no key column `{key_column}`")));
        }
        let mut rows = Vec::new();
        for record in reader.records() {
            let record = record?;
            let columns: BTreeMap<String, String> = headers
                .iter()
                .zip(record.iter())
                .map(|(h, v)| (h.clone(), v.trim().to_string()))
                .collect();
            let key = columns.get(key_column).cloned().unwrap_or_default();
            if key.is_empty() {
                continue;
            }
            rows.push(RawRow { key, columns });
        }
        RawTable::from_rows(rows, source_label, duplicates)
    }

    pub fn from_rows(rows: Vec<RawRow>, source_label: &str, duplicates: &DuplicatePolicy) -> Result<Self> {
        let mut kept: Vec<RawRow> = Vec::with_capacity(rows.len());
        let mut index: HashMap<String, usize> = HashMap::new();
        for row in rows {
            let norm = normalize_key(&row.key);
            match index.get(&norm) {
                None => {
                    index.insert(norm, kept.len());
                    kept.push(row);
                }
                Some(&pos) => match duplicates {
                    DuplicatePolicy::Error => {
                        return Err(Error::Ingest(format!(
                            "{source_label}: duplicate key `{}` (normalized `{norm}`)",
                            row.key
                        )))
                    }
                    DuplicatePolicy::KeepFirst => {}
                    DuplicatePolicy::KeepMax { column } => {
                        let value = |r: &RawRow| r.columns.get(column).and_then(|v| parse_number(v));
                        if value(&row).unwrap_or(f64::NEG_INFINITY) > value(&kept[pos]).unwrap_or(f64::NEG_INFINITY) {
                            kept[pos] = row;
                        }
                    }
                },
            }
        }
        Ok(RawTable {
            rows: kept,
            source_label: source_label.to_string(),
            index,
        })
    }

    pub fn get(&self, key: &str) -> Option<&RawRow> {
        self.index.get(&normalize_key(key)).map(|&i| &self.rows[i])
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// First number in a cell. Accepts thousands separators and the Unicode
/// minus sign; "17.5 (63.5)" reads as 17.5.
pub fn parse_number(cell: &str) -> Option<f64> {
    thread_local! {
        static NUMBER: Regex = Regex::new(r"[-+]?\d+(?:\.\d+)?").expect("static regex");
    }
    let cleaned: String = cell
        .replace(['\u{2212}', '\u{2013}'], "-")
        .chars()
        .filter(|&c| c != ',' && c != '\u{a0}' && c != '_')
        .collect();
    NUMBER.with(|re| re.find(&cleaned).and_then(|m| m.as_str().parse().ok()))
}

/// A price given either as dollar signs or as a number 1..=4.
pub fn parse_price(cell: &str) -> Option<f64> {
    let t = cell.trim();
    if !t.is_empty() && t.chars().all(|c| c == '$') {
        let n = t.len();
        return (1..=4).contains(&n).then_some(n as f64);
    }
    let v = parse_number(t)?;
    (v.fract() == 0.0 && (1.0..=4.0).contains(&v)).then_some(v)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedRow {
    pub key: String,
    pub reason: String,
}

/// Rows considered = items kept + rows skipped.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub considered: usize,
    pub kept: usize,
    pub skipped: Vec<SkippedRow>,
}

impl IngestReport {
    fn skip(&mut self, key: &str, reason: impl Into<String>) {
        let reason = reason.into();
        log::warn!("skipping `{key}`: {reason}");
        self.skipped.push(SkippedRow {
            key: key.to_string(),
            reason,
        });
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CityOptions {
    #[serde(default = "default_temperature_column")]
    pub temperature_column: String,
    #[serde(default = "default_population_column")]
    pub population_column: String,
    #[serde(default = "default_min_population")]
    pub min_population: f64,
}

fn default_temperature_column() -> String {
    "Year".into()
}
fn default_population_column() -> String {
    "population".into()
}
fn default_min_population() -> f64 {
    presets::CITY_MIN_POPULATION
}

impl Default for CityOptions {
    fn default() -> Self {
        CityOptions {
            temperature_column: default_temperature_column(),
            population_column: default_population_column(),
            min_population: default_min_population(),
        }
    }
}

/// Inner join of a temperature table and a population table on city name,
/// keeping cities with more than `min_population` inhabitants.
pub fn load_city_domain(
    temperature_table: &RawTable,
    population_table: &RawTable,
    options: &CityOptions,
) -> Result<(Domain, IngestReport)> {
    let mut report = IngestReport::default();
    let mut items = Vec::new();
    let mut ids: HashMap<String, usize> = HashMap::new();
    for row in &temperature_table.rows {
        let Some(pop_row) = population_table.get(&row.key) else { continue };
        report.considered += 1;
        let temp = row.columns.get(&options.temperature_column).and_then(|v| parse_number(v));
        let pop = pop_row.columns.get(&options.population_column).and_then(|v| parse_number(v));
        let (temp, pop) = match (temp, pop) {
            (Some(t), Some(p)) => (t, p),
            (None, _) => {
                report.skip(&row.key, format!("unparseable `{}`", options.temperature_column));
                continue;
            }
            (_, None) => {
                report.skip(&row.key, format!("unparseable `{}`", options.population_column));
                continue;
            }
        };
        if pop <= options.min_population {
            report.skip(&row.key, format!("population {pop} not above {}", options.min_population));
            continue;
        }
        let mut id = slug(&row.key);
        let n = ids.entry(id.clone()).or_insert(0);
        *n += 1;
        if *n > 1 {
            id = format!("{id}-{n}");
        }
        items.push(Item {
            id,
            display_name: row.key.trim().to_string(),
            values: [("temperature".to_string(), temp), ("population".to_string(), pop.round())].into(),
        });
    }
    if items.is_empty() {
        return Err(Error::Ingest(format!(
            "joining `{}` with `{}` produced no cities",
            temperature_table.source_label, population_table.source_label
        )));
    }
    report.kept = items.len();
    Ok((Domain::new("cities", "city", presets::city_attributes(), items)?, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestaurantOptions {
    #[serde(default = "default_name_column")]
    pub name_column: String,
    #[serde(default = "default_city_column")]
    pub city_column: String,
    #[serde(default = "default_price_column")]
    pub price_column: String,
    #[serde(default = "default_city_filter")]
    pub city_filter: String,
    #[serde(default = "default_sample_size")]
    pub sample_size: usize,
    #[serde(default = "default_distance_range")]
    pub distance_range: (f64, f64),
    #[serde(default)]
    pub seed: u64,
}

fn default_name_column() -> String {
    "name".into()
}
fn default_city_column() -> String {
    "city".into()
}
fn default_price_column() -> String {
    "price".into()
}
fn default_city_filter() -> String {
    presets::RESTAURANT_CITY.into()
}
fn default_sample_size() -> usize {
    presets::RESTAURANT_SAMPLE_SIZE
}
fn default_distance_range() -> (f64, f64) {
    presets::DISTANCE_RANGE_MILES
}

impl Default for RestaurantOptions {
    fn default() -> Self {
        RestaurantOptions {
            name_column: default_name_column(),
            city_column: default_city_column(),
            price_column: default_price_column(),
            city_filter: default_city_filter(),
            sample_size: default_sample_size(),
            distance_range: default_distance_range(),
            seed: 0,
        }
    }
}

/// Uniform sample of one city's restaurants with random distances to a
/// hypothetical location. Rows are keyed by a unique business id; rows
/// without a valid price, and later rows repeating an earlier restaurant
/// name, are skipped before sampling.
pub fn load_restaurant_domain(yelp_table: &RawTable, options: &RestaurantOptions) -> Result<(Domain, IngestReport)> {
    let (lo, hi) = options.distance_range;
    if !(lo.is_finite() && hi.is_finite() && lo >= 0.0 && lo < hi) {
        return Err(Error::Config(format!("invalid distance range ({lo}, {hi})")));
    }
    let city = normalize_key(&options.city_filter);
    let mut report = IngestReport::default();
    let mut rows: Vec<&RawRow> = yelp_table
        .rows
        .iter()
        .filter(|r| r.columns.get(&options.city_column).map(|c| normalize_key(c)) == Some(city.clone()))
        .collect();
    rows.sort_by(|a, b| a.key.cmp(&b.key));

    let mut candidates: Vec<(String, String, f64)> = Vec::new();
    let mut seen_names = HashMap::new();
    for row in rows {
        report.considered += 1;
        let name = row.columns.get(&options.name_column).map(|s| s.trim()).unwrap_or("");
        if name.is_empty() {
            report.skip(&row.key, "missing name");
            continue;
        }
        let Some(price) = row.columns.get(&options.price_column).and_then(|p| parse_price(p)) else {
            report.skip(&row.key, "missing or invalid price");
            continue;
        };
        if seen_names.insert(normalize_key(name), ()).is_some() {
            report.skip(&row.key, format!("duplicate restaurant name `{name}`"));
            continue;
        }
        candidates.push((row.key.clone(), name.to_string(), price));
    }
    if options.sample_size > candidates.len() {
        return Err(Error::Ingest(format!(
            "sample size {} exceeds the {} usable restaurants in `{}`",
            options.sample_size,
            candidates.len(),
            options.city_filter
        )));
    }
    if options.sample_size == 0 {
        return Err(Error::Ingest("sample size must be positive".into()));
    }
    let mut sampler = rng::stream(options.seed, &["restaurants", &city]);
    candidates.shuffle(&mut sampler);
    for (key, _, _) in &candidates[options.sample_size..] {
        report.skip(key, "not sampled");
    }
    candidates.truncate(options.sample_size);
    candidates.sort_by(|a, b| a.0.cmp(&b.0));

    let items: Vec<Item> = candidates
        .into_iter()
        .map(|(key, name, price)| {
            let d: f64 = rng::stream(options.seed, &["distance", &key]).gen_range(lo..=hi);
            Item {
                id: slug(&key),
                display_name: name,
                values: [("price".to_string(), price), ("distance".to_string(), (d * 10.0).round() / 10.0)].into(),
            }
        })
        .collect();
    report.kept = items.len();
    Ok((
        Domain::new("restaurants", "restaurant", presets::restaurant_attributes(), items)?,
        report,
    ))
}

/// One attribute of a user-defined domain and the column it is read from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenericAttribute {
    pub column: String,
    pub spec: AttributeSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenericDomainConfig {
    pub name: String,
    pub item_noun: String,
    pub attributes: Vec<GenericAttribute>,
}

/// Every row becomes an item; missing columns, non-numeric cells and
/// duplicate names are errors.
pub fn load_generic_domain(config: &GenericDomainConfig, table: &RawTable) -> Result<(Domain, IngestReport)> {
    let mut items = Vec::with_capacity(table.rows.len());
    for row in &table.rows {
        let mut values = BTreeMap::new();
        for attr in &config.attributes {
            let cell = row.columns.get(&attr.column).ok_or_else(|| {
                Error::Ingest(format!("{}: row `{}` has no column `{}`", table.source_label, row.key, attr.column))
            })?;
            let v = match attr.spec.value_kind {
                crate::domain::ValueKind::Ordinal => parse_price(cell).or_else(|| parse_number(cell)),
                crate::domain::ValueKind::Continuous => parse_number(cell),
            }
            .ok_or_else(|| {
                Error::Ingest(format!(
                    "{}: row `{}` has non-numeric `{}` = `{cell}`",
                    table.source_label, row.key, attr.column
                ))
            })?;
            values.insert(attr.spec.name.clone(), v);
        }
        items.push(Item {
            id: slug(&row.key),
            display_name: row.key.trim().to_string(),
            values,
        });
    }
    let report = IngestReport {
        considered: table.rows.len(),
        kept: items.len(),
        skipped: vec![],
    };
    let attrs = config.attributes.iter().map(|a| a.spec.clone()).collect();
    Ok((Domain::new(&config.name, &config.item_noun, attrs, items)?, report))
}

/// Ingest settings as read from a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum IngestConfig {
    City {
        temperature_table: TableSource,
        population_table: TableSource,
        #[serde(default, flatten)]
        options: CityOptions,
    },
    Restaurant {
        table: TableSource,
        #[serde(default, flatten)]
        options: RestaurantOptions,
    },
    Generic {
        table: TableSource,
        domain: GenericDomainConfig,
    },
}

impl IngestConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            IngestConfig::City { .. } => "city",
            IngestConfig::Restaurant { .. } => "restaurant",
            IngestConfig::Generic { .. } => "generic",
        }
    }

    /// Relative table paths resolve against `base` (the config file's directory).
    pub fn run(&self, base: &Path, seed: Option<u64>) -> Result<(Domain, IngestReport)> {
        match self {
            IngestConfig::City {
                temperature_table,
                population_table,
                options,
            } => load_city_domain(&temperature_table.load(base)?, &population_table.load(base)?, options),
            IngestConfig::Restaurant { table, options } => {
                let mut options = options.clone();
                if let Some(s) = seed {
                    options.seed = s;
                }
                load_restaurant_domain(&table.load(base)?, &options)
            }
            IngestConfig::Generic { table, domain } => load_generic_domain(domain, &table.load(base)?),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(csv: &str, key: &str) -> RawTable {
        RawTable::parse(csv, key, ',', &DuplicatePolicy::Error, "test").unwrap()
    }

    #[test]
    fn key_normalization() {
        assert_eq!(normalize_key("  São   Paulo "), "sao paulo");
        assert_eq!(normalize_key("ZÜRICH"), "zurich");
        assert_eq!(slug("St. John's"), "st-john-s");
        assert_eq!(slug("Kraków"), "krakow");
    }

    #[test]
    fn number_parsing() {
        assert_eq!(parse_number("17.5"), Some(17.5));
        assert_eq!(parse_number("\u{2212}2.4"), Some(-2.4));
        assert_eq!(parse_number("17.5\n(63.5)"), Some(17.5));
        assert_eq!(parse_number("1,234,567"), Some(1_234_567.0));
        assert_eq!(parse_number("n/a"), None);
        assert_eq!(parse_price("$$"), Some(2.0));
        assert_eq!(parse_price("3"), Some(3.0));
        assert_eq!(parse_price("$$$$$"), None);
        assert_eq!(parse_price("0"), None);
        assert_eq!(parse_price(""), None);
    }

    #[test]
    fn duplicate_policies() {
        let csv = "city,population\nLondon,9000000\nlondon ,400000\nParis,2100000\n";
        assert!(RawTable::parse(csv, "city", ',', &DuplicatePolicy::Error, "t").is_err());
        let first = RawTable::parse(csv, "city", ',', &DuplicatePolicy::KeepFirst, "t").unwrap();
        assert_eq!(first.get("LONDON").unwrap().columns["population"], "9000000");
        let csv2 = "city,population\nLondon,400000\nLondon,9000000\n";
        let max = RawTable::parse(
            csv2,
            "city",
            ',',
            &DuplicatePolicy::KeepMax { column: "population".into() },
            "t",
        )
        .unwrap();
        assert_eq!(max.len(), 1);
        assert_eq!(max.get("london").unwrap().columns["population"], "9000000");
    }

    #[test]
    fn five_row_city_fixture_yields_one_city() {
        // Overlap: Lisbon, Oslo, Zurich. Oslo's temperature is unparseable,
        // Zurich has 40k inhabitants, so only Lisbon survives.
        let temps = table(
            "City,Year\nLisbon,17.5\nOslo,n/a\nZürich,9.3\nCairo,22.1\nLima,19.2\n",
            "City",
        );
        let pops = table(
            "city,population\nlisbon,2900000\noslo,700000\nZurich,40000\nDelhi,29000000\nToronto,6000000\n",
            "city",
        );
        let (d, report) = load_city_domain(&temps, &pops, &CityOptions::default()).unwrap();
        assert_eq!(d.items.len(), 1);
        assert_eq!(d.items[0].display_name, "Lisbon");
        assert_eq!(d.items[0].values["temperature"], 17.5);
        assert_eq!(report.considered, 3);
        assert_eq!(report.kept + report.skipped.len(), report.considered);
    }

    #[test]
    fn disjoint_tables_are_fatal() {
        let temps = table("City,Year\nLisbon,17.5\n", "City");
        let pops = table("city,population\nDelhi,29000000\n", "city");
        assert!(matches!(
            load_city_domain(&temps, &pops, &CityOptions::default()),
            Err(Error::Ingest(_))
        ));
    }

    fn yelp(n: usize) -> RawTable {
        let mut csv = String::from("business_id,name,city,price\n");
        for i in 0..n {
            csv.push_str(&format!("b{i:04},Place {i},Toronto,{}\n", "$".repeat(1 + i % 4)));
        }
        csv.push_str("x0001,Elsewhere,Montreal,$$\nx0002,No Price,Toronto,\n");
        table(&csv, "business_id")
    }

    #[test]
    fn restaurant_sampling() {
        let t = yelp(30);
        let opts = RestaurantOptions { sample_size: 12, seed: 4, ..Default::default() };
        let (d1, r1) = load_restaurant_domain(&t, &opts).unwrap();
        let (d2, _) = load_restaurant_domain(&t, &opts).unwrap();
        assert_eq!(d1.items, d2.items);
        assert_eq!(d1.items.len(), 12);
        assert_eq!(r1.considered, 31);
        assert_eq!(r1.kept + r1.skipped.len(), r1.considered);
        for item in &d1.items {
            let dist = item.values["distance"];
            assert!((0.5..=15.0).contains(&dist));
            assert_eq!((dist * 10.0).round() / 10.0, dist);
        }
        let other = load_restaurant_domain(&t, &RestaurantOptions { seed: 5, ..opts.clone() }).unwrap().0;
        assert_ne!(other.items, d1.items);
    }

    #[test]
    fn full_restaurant_sample_takes_all_rows() {
        let t = yelp(20);
        let (d, _) = load_restaurant_domain(&t, &RestaurantOptions { sample_size: 20, ..Default::default() }).unwrap();
        let mut names: Vec<_> = d.items.iter().map(|i| i.display_name.clone()).collect();
        names.sort();
        let mut want: Vec<_> = (0..20).map(|i| format!("Place {i}")).collect();
        want.sort();
        assert_eq!(names, want);
        assert!(load_restaurant_domain(&t, &RestaurantOptions { sample_size: 21, ..Default::default() }).is_err());
    }

    #[test]
    fn generic_domain_errors() {
        let cfg = GenericDomainConfig {
            name: "phones".into(),
            item_noun: "phone".into(),
            attributes: vec![GenericAttribute {
                column: "battery".into(),
                spec: AttributeSpec {
                    name: "battery".into(),
                    unit: "h".into(),
                    value_kind: crate::domain::ValueKind::Continuous,
                    min_pair_difference: 5.0,
                    direct_comparative: crate::domain::ByOrder { higher: "longer battery life".into(), lower: "shorter battery life".into() },
                    indirect_comparative: crate::domain::ByOrder { higher: "fewer recharges".into(), lower: "more recharges".into() },
                    statement_template: "The battery life of {item} is".into(),
                    format: crate::domain::ValueFormat::Decimal { precision: 0, prefix: String::new(), suffix: " hours".into() },
                },
            }],
        };
        let ok = table("model,battery\nA1,20\nB2,31\n", "model");
        let (d, _) = load_generic_domain(&cfg, &ok).unwrap();
        assert_eq!(d.items.len(), 2);
        let bad = table("model,battery\nA1,lots\n", "model");
        assert!(load_generic_domain(&cfg, &bad).is_err());
        let missing = table("model,weight\nA1,3\n", "model");
        assert!(load_generic_domain(&cfg, &missing).is_err());
    }

    #[test]
    fn ingest_config_parses() {
        let cfg: IngestConfig = serde_json::from_str(
            r#"{"kind": "restaurant", "table": {"path": "yelp.csv", "key_column": "business_id"}, "sample_size": 240}"#,
        )
        .unwrap();
        assert_eq!(cfg.kind(), "restaurant");
        let IngestConfig::Restaurant { options, .. } = cfg else { panic!() };
        assert_eq!(options.city_filter, "Toronto");
        assert_eq!(options.distance_range, (0.5, 15.0));
    }
}
