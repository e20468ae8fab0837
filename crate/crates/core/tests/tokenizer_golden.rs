use std::path::Path;

use cft_core::tokenizer::{TokenizerKind, TokenizerSpec};
use serde::Deserialize;

#[derive(Deserialize)]
struct Golden {
    text: String,
    tokens: usize,
}

#[test]
fn external_vocab_matches_reference_counts() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/tokenizer");
    let golden: Vec<Golden> = cft_core::io::read_json(dir.join("golden.json")).unwrap();
    assert!(golden.len() >= 10);
    for source in [dir.clone(), dir.join("vocab.json")] {
        let tok = TokenizerSpec { kind: TokenizerKind::ExternalVocab, vocab_source: Some(source) }.load().unwrap();
        for g in &golden {
            assert_eq!(tok.try_count(&g.text).unwrap(), g.tokens, "{:?}", g.text);
        }
    }
}

#[test]
fn bundled_bpe_counts_are_in_a_sane_range() {
    let tok = TokenizerSpec::default().load().unwrap();
    let text = "You don't like cold weather. Between London and Lisbon, you should visit";
    let words = text.split_whitespace().count();
    let n = tok.count(text);
    assert!(n >= words && n <= text.len(), "{n}");
}
