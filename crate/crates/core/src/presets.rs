//! Built-in attribute specs and phrasing registries for the world-cities
//! and local-restaurants domains.

use crate::domain::{AttributeSpec, ByOrder, ValueFormat, ValueKind};
use crate::phrasing::PhrasingRegistry;

pub const CITY_MIN_POPULATION: f64 = 50_000.0;
pub const CITY_TEMPERATURE_GAP: f64 = 10.0;
pub const CITY_POPULATION_GAP: f64 = 2_500_000.0;
pub const RESTAURANT_PRICE_GAP: f64 = 1.0;
pub const RESTAURANT_DISTANCE_GAP: f64 = 3.0;
pub const RESTAURANT_SAMPLE_SIZE: usize = 240;
pub const RESTAURANT_CITY: &str = "Toronto";
pub const DISTANCE_RANGE_MILES: (f64, f64) = (0.5, 15.0);

const CITIES_REGISTRY: &str = include_str!("../assets/registry_cities.json");
const RESTAURANTS_REGISTRY: &str = include_str!("../assets/registry_restaurants.json");

fn by_order(higher: &str, lower: &str) -> ByOrder {
    ByOrder {
        higher: higher.into(),
        lower: lower.into(),
    }
}

pub fn city_attributes() -> Vec<AttributeSpec> {
    vec![
        AttributeSpec {
            name: "temperature".into(),
            unit: "C".into(),
            value_kind: ValueKind::Continuous,
            min_pair_difference: CITY_TEMPERATURE_GAP,
            direct_comparative: by_order("higher average temperature", "lower average temperature"),
            indirect_comparative: by_order("warmer weather", "colder weather"),
            statement_template: "The average temperature in {item} is".into(),
            format: ValueFormat::Decimal {
                precision: 1,
                prefix: String::new(),
                suffix: "C".into(),
            },
        },
        AttributeSpec {
            name: "population".into(),
            unit: "inhabitants".into(),
            value_kind: ValueKind::Continuous,
            min_pair_difference: CITY_POPULATION_GAP,
            direct_comparative: by_order("a larger population", "a smaller population"),
            indirect_comparative: by_order("more inhabitants", "fewer inhabitants"),
            statement_template: "The population of {item} is".into(),
            format: ValueFormat::Grouped { suffix: String::new() },
        },
    ]
}

pub fn restaurant_attributes() -> Vec<AttributeSpec> {
    vec![
        AttributeSpec {
            name: "price".into(),
            unit: "$".into(),
            value_kind: ValueKind::Ordinal,
            min_pair_difference: RESTAURANT_PRICE_GAP,
            direct_comparative: by_order("a higher price range", "a lower price range"),
            indirect_comparative: by_order("more expensive food", "cheaper food"),
            statement_template: "The price range of {item} is".into(),
            format: ValueFormat::Repeat { symbol: "$".into() },
        },
        AttributeSpec {
            name: "distance".into(),
            unit: "miles".into(),
            value_kind: ValueKind::Continuous,
            min_pair_difference: RESTAURANT_DISTANCE_GAP,
            direct_comparative: by_order("a greater distance", "a shorter distance"),
            indirect_comparative: by_order("a farther location", "a closer location"),
            statement_template: "The distance to {item} is".into(),
            format: ValueFormat::Decimal {
                precision: 1,
                prefix: String::new(),
                suffix: " miles".into(),
            },
        },
    ]
}

pub fn cities_registry() -> PhrasingRegistry {
    serde_json::from_str(CITIES_REGISTRY).expect("bundled cities registry parses")
}

pub fn restaurants_registry() -> PhrasingRegistry {
    serde_json::from_str(RESTAURANTS_REGISTRY).expect("bundled restaurants registry parses")
}

/// The bundled registry for a domain name, if there is one.
pub fn registry_for(domain_name: &str) -> Option<PhrasingRegistry> {
    match domain_name {
        "cities" => Some(cities_registry()),
        "restaurants" => Some(restaurants_registry()),
        _ => None,
    }
}
