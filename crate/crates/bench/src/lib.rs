//! Shared fixtures for the benchmarks.

use cft_core::phrasing::PhrasingRegistry;
use cft_core::split::{self, PairOrigin, PairSet};
use cft_core::{presets, synthetic, Domain, ItemSplit};

pub struct Fixture {
    pub domain: Domain,
    pub registry: PhrasingRegistry,
    pub split: ItemSplit,
    pub train_pairs: PairSet,
}

/// A synthetic cities domain with `items` items, split 30/70.
pub fn cities(items: usize, seed: u64) -> Fixture {
    let domain = synthetic::cities(items, seed);
    let registry = presets::cities_registry();
    let split = split::split_items(&domain, 0.3, seed).expect("split");
    let train_pairs = split::enumerate_pairs(&split.train_items, &domain, PairOrigin::Train, seed).expect("pairs");
    Fixture { domain, registry, split, train_pairs }
}
