//! Synthetic domains for tests, benchmarks and dry runs. Values are random
//! and carry no meaning; names are "City 007", "Restaurant 012", "Item 3".

use rand::Rng;

use crate::domain::{AttributeSpec, ByOrder, Domain, Item, Order, ValueFormat, ValueKind};
use crate::phrasing::{NegationRule, PhrasingRegistry, PolarityPhrases, PreferencePhrases, NEGATION_STATEMENTS};
use crate::{presets, rng};

fn round_to(v: f64, digits: i32) -> f64 {
    let f = 10f64.powi(digits);
    (v * f).round() / f
}

/// Cities with temperatures in [-5, 30) C and log-uniform populations
/// between 50k and 20M.
pub fn cities(n: usize, seed: u64) -> Domain {
    let mut r = rng::stream(seed, &["synthetic", "cities"]);
    let items = (0..n)
        .map(|i| {
            let temp = round_to(r.gen_range(-5.0..30.0), 1);
            let pop = (r.gen_range((50_000f64).ln()..(20_000_000f64).ln())).exp().round();
            Item {
                id: format!("city-{i:03}"),
                display_name: format!("City {i:03}"),
                values: [("temperature".to_string(), temp), ("population".to_string(), pop)].into(),
            }
        })
        .collect();
    Domain::new("cities", "city", presets::city_attributes(), items).expect("synthetic cities are valid")
}

/// Restaurants with 1-4 price signs and distances in [0.5, 15] miles.
pub fn restaurants(n: usize, seed: u64) -> Domain {
    let mut r = rng::stream(seed, &["synthetic", "restaurants"]);
    let (lo, hi) = presets::DISTANCE_RANGE_MILES;
    let items = (0..n)
        .map(|i| Item {
            id: format!("restaurant-{i:03}"),
            display_name: format!("Restaurant {i:03}"),
            values: [
                ("price".to_string(), r.gen_range(1..=4) as f64),
                ("distance".to_string(), round_to(r.gen_range(lo..=hi), 1)),
            ]
            .into(),
        })
        .collect();
    Domain::new("restaurants", "restaurant", presets::restaurant_attributes(), items)
        .expect("synthetic restaurants are valid")
}

fn generic_attribute(name: &str, threshold: f64) -> AttributeSpec {
    AttributeSpec {
        name: name.into(),
        unit: "units".into(),
        value_kind: ValueKind::Continuous,
        min_pair_difference: threshold,
        direct_comparative: ByOrder { higher: format!("a higher {name}"), lower: format!("a lower {name}") },
        indirect_comparative: ByOrder { higher: format!("more {name}"), lower: format!("less {name}") },
        statement_template: format!("The {name} of {{item}} is"),
        format: ValueFormat::Decimal { precision: 2, prefix: String::new(), suffix: String::new() },
    }
}

/// A random domain with `n_attributes` attributes named `attr0..`, values
/// in [0, 100) with two decimals, and thresholds in [0.5, 40).
pub fn random_domain(n_items: usize, n_attributes: usize, seed: u64) -> Domain {
    let mut r = rng::stream(seed, &["synthetic", "random"]);
    let attributes: Vec<AttributeSpec> = (0..n_attributes)
        .map(|k| generic_attribute(&format!("attr{k}"), round_to(r.gen_range(0.5..40.0), 2)))
        .collect();
    let items = (0..n_items)
        .map(|i| Item {
            id: format!("item-{i}"),
            display_name: format!("Item {i}"),
            values: attributes
                .iter()
                .map(|a| (a.name.clone(), round_to(r.gen_range(0.0..100.0), 2)))
                .collect(),
        })
        .collect();
    Domain::new("synthetic", "item", attributes, items).expect("random domain is valid")
}

/// A registry for any domain: the city frames with generic preference
/// phrases, and twelve negation statements cycling over the
/// (attribute, order) combinations.
pub fn generic_registry(domain: &Domain) -> PhrasingRegistry {
    let mut reg = presets::cities_registry();
    reg.domain = domain.name.clone();
    reg.notes = Some("generated for a synthetic domain".into());
    reg.preference_phrases = domain
        .attributes
        .iter()
        .map(|a| {
            let n = &a.name;
            (
                n.clone(),
                PreferencePhrases {
                    higher: PolarityPhrases { positive: format!("a higher {n}"), negative: format!("a high {n}") },
                    lower: PolarityPhrases { positive: format!("a lower {n}"), negative: format!("a low {n}") },
                },
            )
        })
        .collect();
    let noun = &domain.item_noun;
    let combos: Vec<(&str, Order)> = domain
        .attributes
        .iter()
        .flat_map(|a| Order::ALL.map(|o| (a.name.as_str(), o)))
        .collect();
    reg.negations = (0..NEGATION_STATEMENTS)
        .map(|i| {
            let (attr, order) = combos[i % combos.len()];
            let (neg, pos) = match order {
                Order::Higher => (format!("a high {attr}"), format!("a lower {attr}")),
                Order::Lower => (format!("a low {attr}"), format!("a higher {attr}")),
            };
            let (prompt, completion) = match (i / combos.len()) % 3 {
                0 => (format!("You don't like {neg}"), format!("You like {pos}")),
                1 => (format!("Someone doesn't like {neg}"), format!("Someone likes {pos}")),
                _ => (
                    format!("You are not looking for a {noun} with {neg}"),
                    format!("You are looking for a {noun} with {pos}"),
                ),
            };
            NegationRule { attribute: attr.to_string(), order, prompt, completion }
        })
        .collect();
    reg
}
