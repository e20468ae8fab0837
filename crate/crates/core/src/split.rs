//! Item-level train/test split and enumeration of qualifying pairs.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{Domain, ItemPair};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairOrigin {
    Train,
    Test,
}

impl std::str::FromStr for PairOrigin {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(PairOrigin::Train),
            "test" => Ok(PairOrigin::Test),
            other => Err(Error::Config(format!("unknown origin `{other}` (expected train or test)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemSplit {
    pub train_items: BTreeSet<String>,
    pub test_items: BTreeSet<String>,
    pub seed: u64,
    pub train_fraction: f64,
}

impl ItemSplit {
    pub fn items(&self, origin: PairOrigin) -> &BTreeSet<String> {
        match origin {
            PairOrigin::Train => &self.train_items,
            PairOrigin::Test => &self.test_items,
        }
    }

    pub fn origin_of(&self, id: &str) -> Option<PairOrigin> {
        if self.train_items.contains(id) {
            Some(PairOrigin::Train)
        } else if self.test_items.contains(id) {
            Some(PairOrigin::Test)
        } else {
            None
        }
    }

    /// Fails if any pair mentions an item outside `origin`'s side of the split.
    pub fn check_pairs(&self, pairs: &[ItemPair], origin: PairOrigin) -> Result<()> {
        let side = self.items(origin);
        for p in pairs {
            for id in [&p.first, &p.second] {
                if !side.contains(id) {
                    return Err(Error::Leakage(format!(
                        "item `{id}` of pair {} is not a {origin:?} item",
                        p.key()
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSet {
    pub pairs: Vec<ItemPair>,
    pub origin: PairOrigin,
    pub seed: u64,
}

impl PairSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Uniform random partition with `floor(fraction * n)` training items.
pub fn split_items(domain: &Domain, train_fraction: f64, seed: u64) -> Result<ItemSplit> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::DegenerateSplit(format!(
            "train fraction must be in (0, 1), got {train_fraction}"
        )));
    }
    let n = domain.items.len();
    let n_train = (train_fraction * n as f64).floor() as usize;
    if n_train == 0 || n_train >= n {
        return Err(Error::DegenerateSplit(format!(
            "{n} items at fraction {train_fraction} leave {n_train} train / {} test items",
            n.saturating_sub(n_train)
        )));
    }
    let mut ids: Vec<&str> = domain.items.iter().map(|i| i.id.as_str()).collect();
    ids.sort_unstable();
    ids.shuffle(&mut rng::stream(seed, &["split"]));
    let (train, test) = ids.split_at(n_train);
    Ok(ItemSplit {
        train_items: train.iter().map(|s| s.to_string()).collect(),
        test_items: test.iter().map(|s| s.to_string()).collect(),
        seed,
        train_fraction,
    })
}

/// All unordered qualifying pairs among `items`, each in canonical order,
/// sorted by (first, second).
pub fn enumerate_pairs<'a, I>(items: I, domain: &Domain, origin: PairOrigin, seed: u64) -> Result<PairSet>
where
    I: IntoIterator<Item = &'a String>,
{
    let ids: BTreeSet<&String> = items.into_iter().collect();
    let ids: Vec<&String> = ids.into_iter().collect();
    for id in &ids {
        domain.require_item(id)?;
    }
    let mut pairs = Vec::new();
    for (i, a) in ids.iter().enumerate() {
        for b in &ids[i + 1..] {
            let pair = ItemPair::new(a.as_str(), b.as_str());
            if domain.qualifies(&pair)? {
                pairs.push(pair);
            }
        }
    }
    Ok(PairSet { pairs, origin, seed })
}

/// The order coin for one pair under a label; `true` means swap the
/// canonical order.
pub fn flip_coin(seed: u64, pair_key: &str, label: &str) -> bool {
    rng::stream(seed, &["flip", pair_key, label]).gen_bool(0.5)
}

/// Swaps each pair independently with probability 1/2.
pub fn flip_orders(pairs: &PairSet, seed: u64) -> PairSet {
    PairSet {
        pairs: pairs
            .pairs
            .iter()
            .map(|p| {
                let c = p.canonical();
                if flip_coin(seed, &c.key(), "") {
                    c.swapped()
                } else {
                    c
                }
            })
            .collect(),
        origin: pairs.origin,
        seed,
    }
}
