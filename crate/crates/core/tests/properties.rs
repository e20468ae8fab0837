//! Property tests over random synthetic domains, checked against
//! brute-force oracles written here rather than the library's own lookups.

use std::collections::{BTreeMap, BTreeSet};

use cft_core::backend::{Backend, OracleBackend};
use cft_core::domain::{Order, Polarity, Preference};
use cft_core::phrasing::{self, TaskKind, TrainingExample};
use cft_core::split::{self, PairOrigin};
use cft_core::{presets, synthetic, Domain, PhrasingRegistry};
use proptest::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn value(d: &Domain, id: &str, attr: &str) -> f64 {
    d.items.iter().find(|i| i.id == id).unwrap().values[attr]
}

fn name(d: &Domain, id: &str) -> String {
    d.items.iter().find(|i| i.id == id).unwrap().display_name.clone()
}

/// Every unordered pair whose gaps meet every threshold.
fn brute_force_pairs(d: &Domain) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for (i, a) in d.items.iter().enumerate() {
        for b in &d.items[i + 1..] {
            let ok = d
                .attributes
                .iter()
                .all(|s| (a.values[&s.name] - b.values[&s.name]).abs() >= s.min_pair_difference);
            if ok {
                let (x, y) = if a.id <= b.id { (&a.id, &b.id) } else { (&b.id, &a.id) };
                out.insert(format!("{x}|{y}"));
            }
        }
    }
    out
}

fn ids(pair_ref: &str) -> (&str, &str) {
    pair_ref.split_once('|').unwrap()
}

/// The expected answer, from raw values and the phrasing id alone.
fn expected_answer(d: &Domain, reg: &PhrasingRegistry, ex: &TrainingExample) -> String {
    let parts: Vec<&str> = ex.phrasing_id.split('/').collect();
    let attr = parts[1];
    let named = match parts[2] {
        "higher" => Order::Higher,
        _ => Order::Lower,
    };
    let wanted = match ex.task_kind {
        TaskKind::FactualComparison => named,
        TaskKind::DecisionTemplate => {
            let frame = reg.decision_frames.iter().find(|f| f.id == parts[3]).unwrap();
            match (frame.polarity, named) {
                (Polarity::Positive, o) => o,
                (Polarity::Negative, Order::Higher) => Order::Lower,
                (Polarity::Negative, Order::Lower) => Order::Higher,
            }
        }
        k => panic!("no answer for {k}"),
    };
    let (a, b) = ids(ex.pair_ref.as_deref().unwrap());
    let (va, vb) = (value(d, a, attr), value(d, b, attr));
    let a_wins = match wanted {
        Order::Higher => va > vb,
        Order::Lower => va < vb,
    };
    name(d, if a_wins { a } else { b })
}

fn render_all(d: &Domain, reg: &PhrasingRegistry, seed: u64) -> (Vec<TrainingExample>, Vec<TrainingExample>) {
    let all: Vec<String> = d.items.iter().map(|i| i.id.clone()).collect();
    let pairs = split::enumerate_pairs(&all, d, PairOrigin::Train, seed).unwrap();
    (
        phrasing::render_factual_comparisons(&pairs, d, reg, seed).unwrap(),
        phrasing::render_decision_templates(&pairs, d, reg, seed, None).unwrap(),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn per_pair_multiplicities(n_items in 4usize..16, n_attrs in 1usize..4, seed in any::<u64>()) {
        let d = synthetic::random_domain(n_items, n_attrs, seed);
        let reg = synthetic::generic_registry(&d);
        let (fc, dt) = render_all(&d, &reg, seed);
        let expected_pairs = brute_force_pairs(&d);

        let mut fc_per: BTreeMap<String, usize> = BTreeMap::new();
        for ex in &fc {
            *fc_per.entry(ex.pair_ref.clone().unwrap()).or_default() += 1;
        }
        let mut dt_per: BTreeMap<String, usize> = BTreeMap::new();
        for ex in &dt {
            *dt_per.entry(ex.pair_ref.clone().unwrap()).or_default() += 1;
        }
        prop_assert_eq!(fc_per.keys().cloned().collect::<BTreeSet<_>>(), expected_pairs.clone());
        prop_assert_eq!(dt_per.keys().cloned().collect::<BTreeSet<_>>(), expected_pairs);
        prop_assert!(fc_per.values().all(|&n| n == 4 * n_attrs));
        prop_assert!(dt_per.values().all(|&n| n == 16 * n_attrs));

        let fs = phrasing::render_factual_statements(&d).unwrap();
        prop_assert_eq!(fs.len(), n_items * n_attrs);
        for item in &d.items {
            let n = fs.iter().filter(|e| e.prompt.contains(&item.display_name) && {
                // "Item 1" is a prefix of "Item 12"
                let rest = &e.prompt[e.prompt.find(&item.display_name).unwrap() + item.display_name.len()..];
                !rest.starts_with(|c: char| c.is_ascii_digit())
            }).count();
            prop_assert_eq!(n, n_attrs);
        }
    }

    #[test]
    fn two_attribute_domains_give_eight_and_thirty_two(n_items in 4usize..14, seed in any::<u64>()) {
        let d = synthetic::random_domain(n_items, 2, seed);
        let reg = synthetic::generic_registry(&d);
        let (fc, dt) = render_all(&d, &reg, seed);
        let pairs = brute_force_pairs(&d).len();
        prop_assert_eq!(fc.len(), 8 * pairs);
        prop_assert_eq!(dt.len(), 32 * pairs);
    }

    #[test]
    fn completions_match_brute_force_and_oracle(n_items in 4usize..10, n_attrs in 1usize..4, seed in any::<u64>()) {
        let d = synthetic::random_domain(n_items, n_attrs, seed);
        let reg = synthetic::generic_registry(&d);
        let (fc, dt) = render_all(&d, &reg, seed);
        let oracle = OracleBackend::new(d.clone(), reg.clone()).unwrap();
        for ex in fc.iter().chain(&dt) {
            let expected = expected_answer(&d, &reg, ex);
            prop_assert_eq!(&ex.completion, &expected, "{}", ex.prompt);
            let (a, b) = ids(ex.pair_ref.as_deref().unwrap());
            let cands = vec![format!(" {}", name(&d, a)), format!(" {}", name(&d, b))];
            let scored = oracle.score_candidates(&ex.prompt, &cands).unwrap();
            let best = scored.candidates.iter().max_by(|x, y| x.logprob.total_cmp(&y.logprob)).unwrap();
            prop_assert_eq!(best.text.trim(), expected.as_str());
        }
    }

    #[test]
    fn negation_is_an_order_flip(n_items in 3usize..10, n_attrs in 1usize..4, seed in any::<u64>()) {
        let d = synthetic::random_domain(n_items, n_attrs, seed);
        let all: Vec<String> = d.items.iter().map(|i| i.id.clone()).collect();
        let pairs = split::enumerate_pairs(&all, &d, PairOrigin::Train, seed).unwrap();
        for pair in &pairs.pairs {
            for attr in d.attribute_names() {
                for order in Order::ALL {
                    for p in Preference::variants(attr, order) {
                        let direct = d.resolve_recommendation(pair, &p).unwrap();
                        let flipped = d.resolve_recommendation(pair, &p.negated()).unwrap();
                        prop_assert_eq!(&direct.id, &flipped.id);
                        let as_comparison = d.resolve_comparison(pair, attr, p.effective_order()).unwrap();
                        prop_assert_eq!(&direct.id, &as_comparison.id);
                    }
                }
            }
        }
    }

    #[test]
    fn split_is_a_partition_and_pairs_stay_inside(n_items in 4usize..40, frac in 0.1f64..0.9, seed in any::<u64>()) {
        let d = synthetic::random_domain(n_items, 2, seed);
        let Ok(s) = split::split_items(&d, frac, seed) else { return Ok(()) };
        prop_assert!(s.train_items.is_disjoint(&s.test_items));
        prop_assert_eq!(s.train_items.len() + s.test_items.len(), n_items);
        for (items, origin) in [(&s.train_items, PairOrigin::Train), (&s.test_items, PairOrigin::Test)] {
            let pairs = split::enumerate_pairs(items.iter(), &d, origin, seed).unwrap();
            for p in &pairs.pairs {
                prop_assert!(items.contains(&p.first) && items.contains(&p.second));
            }
        }
    }
}

#[test]
fn negation_assets_map_negative_to_opposite_positive() {
    for (reg, domain) in [
        (presets::cities_registry(), synthetic::cities(10, 1)),
        (presets::restaurants_registry(), synthetic::restaurants(10, 1)),
    ] {
        let rendered = phrasing::render_negation_statements(&domain, &reg).unwrap();
        assert_eq!(rendered.len(), 12, "{}", reg.domain);
        for rule in &reg.negations {
            let phrases = &reg.preference_phrases[&rule.attribute];
            let negative = &phrases.get(rule.order).negative;
            let positive = &phrases.get(rule.order.opposite()).positive;
            assert!(rule.prompt.contains(negative.as_str()), "{} / {negative}", rule.prompt);
            assert!(rule.completion.contains(positive.as_str()), "{} / {positive}", rule.completion);
        }
    }
}

#[test]
fn order_flip_frequency_is_fair() {
    let d = synthetic::cities(80, 11);
    let reg = presets::cities_registry();
    let (fc, dt) = render_all(&d, &reg, 11);
    let examples: Vec<&TrainingExample> = fc.iter().chain(&dt).collect();
    assert!(examples.len() >= 10_000, "{}", examples.len());
    let mut swapped = 0usize;
    for ex in &examples {
        let (a, b) = ids(ex.pair_ref.as_deref().unwrap());
        let (na, nb) = (name(&d, a), name(&d, b));
        // canonical first item mentioned second means the order was flipped
        if ex.prompt.rfind(&nb).unwrap() < ex.prompt.rfind(&na).unwrap() {
            swapped += 1;
        }
    }
    let n = examples.len() as f64;
    let freq = swapped as f64 / n;
    let expected = n / 2.0;
    let chi2 = ((swapped as f64 - expected).powi(2) + ((n - swapped as f64) - expected).powi(2)) / expected;
    let p = 1.0 - ChiSquared::new(1.0).unwrap().cdf(chi2);
    assert!((0.48..=0.52).contains(&freq), "flip frequency {freq}");
    assert!(p > 0.001, "chi-square {chi2}, p {p}");
}
