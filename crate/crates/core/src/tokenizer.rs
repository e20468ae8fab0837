//! Token counting for budget matching.
//!
//! Three counters share one interface:
//! - `whitespace`: number of whitespace-separated words;
//! - `approximate_bpe`: byte-level BPE driven by a merges list (the bundled
//!   one unless `vocab_source` points at another `merges.txt`);
//! - `external_vocab`: byte-level BPE from a GPT-2 style `vocab.json` plus
//!   `merges.txt` pair; every produced token must exist in the vocabulary.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phrasing::TrainingExample;

const BUNDLED_MERGES: &str = include_str!("../assets/bpe_merges.txt");

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenizerKind {
    #[default]
    ApproximateBpe,
    Whitespace,
    ExternalVocab,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizerSpec {
    #[serde(default)]
    pub kind: TokenizerKind,
    /// `merges.txt` for approximate-bpe; a directory holding `vocab.json`
    /// and `merges.txt` (or the `vocab.json` path itself) for external-vocab.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab_source: Option<PathBuf>,
}

impl TokenizerSpec {
    pub fn whitespace() -> Self {
        TokenizerSpec {
            kind: TokenizerKind::Whitespace,
            vocab_source: None,
        }
    }

    pub fn load(&self) -> Result<Tokenizer> {
        match self.kind {
            TokenizerKind::Whitespace => Ok(Tokenizer::Whitespace),
            TokenizerKind::ApproximateBpe => {
                let merges = match &self.vocab_source {
                    Some(p) => read_text(p)?,
                    None => BUNDLED_MERGES.to_string(),
                };
                Ok(Tokenizer::Bpe(Bpe::from_merges(&merges, None)?))
            }
            TokenizerKind::ExternalVocab => {
                let src = self.vocab_source.as_ref().ok_or_else(|| {
                    Error::Tokenizer("external_vocab tokenizer needs a vocab_source".into())
                })?;
                let (vocab_path, merges_path) = if src.is_dir() {
                    (src.join("vocab.json"), src.join("merges.txt"))
                } else {
                    let dir = src.parent().unwrap_or_else(|| Path::new("."));
                    (src.clone(), dir.join("merges.txt"))
                };
                let vocab: HashMap<String, u32> = serde_json::from_str(&read_text(&vocab_path)?)
                    .map_err(|e| Error::Tokenizer(format!("{}: {e}", vocab_path.display())))?;
                Ok(Tokenizer::Bpe(Bpe::from_merges(&read_text(&merges_path)?, Some(vocab))?))
            }
        }
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Tokenizer(format!("cannot read {}: {e}", path.display())))
}

#[derive(Debug, Clone)]
pub enum Tokenizer {
    Whitespace,
    Bpe(Bpe),
}

impl Tokenizer {
    pub fn count(&self, text: &str) -> usize {
        match self {
            Tokenizer::Whitespace => text.split_whitespace().count(),
            Tokenizer::Bpe(bpe) => bpe.count(text),
        }
    }

    /// Like `count`, but fails when a token is missing from an external
    /// vocabulary.
    pub fn try_count(&self, text: &str) -> Result<usize> {
        match self {
            Tokenizer::Whitespace => Ok(self.count(text)),
            Tokenizer::Bpe(bpe) => bpe.encode(text).map(|t| t.len()),
        }
    }

    /// Tokens of a full example as it is exported: prompt, then the
    /// completion with its leading separator.
    pub fn example_tokens(&self, ex: &TrainingExample) -> usize {
        self.count(&ex.prompt) + self.count(&crate::curriculum::export_completion(&ex.completion))
    }

    pub fn annotate(&self, examples: &mut [TrainingExample]) {
        for ex in examples {
            ex.token_count = self.example_tokens(ex);
        }
    }
}

/// Byte-level BPE in the GPT-2 style.
#[derive(Debug, Clone)]
pub struct Bpe {
    ranks: HashMap<(String, String), usize>,
    vocab: Option<HashMap<String, u32>>,
    byte_map: [char; 256],
}

impl Bpe {
    pub fn from_merges(merges: &str, vocab: Option<HashMap<String, u32>>) -> Result<Self> {
        let mut ranks = HashMap::new();
        for (n, line) in merges.lines().enumerate() {
            if line.starts_with("#version") || line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split(' ');
            match (parts.next(), parts.next(), parts.next()) {
                (Some(a), Some(b), None) => {
                    let rank = ranks.len();
                    ranks.entry((a.to_string(), b.to_string())).or_insert(rank);
                }
                _ => return Err(Error::Tokenizer(format!("malformed merges line {}: `{line}`", n + 1))),
            }
        }
        Ok(Bpe {
            ranks,
            vocab,
            byte_map: bytes_to_unicode(),
        })
    }

    pub fn count(&self, text: &str) -> usize {
        pretokenize(text).iter().map(|w| self.merge_word(w).len()).sum()
    }

    pub fn encode(&self, text: &str) -> Result<Vec<String>> {
        let mut out = Vec::new();
        for w in pretokenize(text) {
            for tok in self.merge_word(w) {
                if let Some(v) = &self.vocab {
                    if !v.contains_key(&tok) {
                        return Err(Error::Tokenizer(format!("token `{tok}` not in vocabulary")));
                    }
                }
                out.push(tok);
            }
        }
        Ok(out)
    }

    fn merge_word(&self, word: &str) -> Vec<String> {
        let mut symbols: Vec<String> = word.bytes().map(|b| self.byte_map[b as usize].to_string()).collect();
        while symbols.len() > 1 {
            let best = symbols
                .windows(2)
                .enumerate()
                .filter_map(|(i, w)| self.ranks.get(&(w[0].clone(), w[1].clone())).map(|&r| (r, i)))
                .min();
            let Some((rank, _)) = best else { break };
            let mut merged = Vec::with_capacity(symbols.len());
            let mut i = 0;
            while i < symbols.len() {
                if i + 1 < symbols.len()
                    && self.ranks.get(&(symbols[i].clone(), symbols[i + 1].clone())) == Some(&rank)
                {
                    merged.push(format!("{}{}", symbols[i], symbols[i + 1]));
                    i += 2;
                } else {
                    merged.push(std::mem::take(&mut symbols[i]));
                    i += 1;
                }
            }
            symbols = merged;
        }
        symbols
    }
}

/// GPT-2's reversible byte to printable-char table.
fn bytes_to_unicode() -> [char; 256] {
    let mut table = ['\0'; 256];
    let printable = |b: u32| (33..=126).contains(&b) || (161..=172).contains(&b) || (174..=255).contains(&b);
    let mut extra = 0;
    for b in 0..256u32 {
        table[b as usize] = if printable(b) {
            char::from_u32(b).unwrap()
        } else {
            extra += 1;
            char::from_u32(255 + extra).unwrap()
        };
    }
    table
}

#[derive(PartialEq, Clone, Copy)]
enum Class {
    Letter,
    Number,
    Space,
    Other,
}

fn class(c: char) -> Class {
    if c.is_whitespace() {
        Class::Space
    } else if c.is_alphabetic() {
        Class::Letter
    } else if c.is_numeric() {
        Class::Number
    } else {
        Class::Other
    }
}

const CONTRACTIONS: [&str; 7] = ["'s", "'t", "'re", "'ve", "'m", "'ll", "'d"];

/// Splits text the way GPT-2's pattern does:
/// `'s|'t|'re|'ve|'m|'ll|'d| ?\p{L}+| ?\p{N}+| ?[^\s\p{L}\p{N}]+|\s+(?!\S)|\s+`
fn pretokenize(text: &str) -> Vec<&str> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let end_of = |i: usize| chars.get(i).map_or(text.len(), |&(b, _)| b);
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let start = chars[i].0;
        if let Some(c) = CONTRACTIONS.iter().find(|c| text[start..].starts_with(*c)) {
            out.push(&text[start..start + c.len()]);
            i += c.chars().count();
            continue;
        }
        // optional single leading space before a letter/number/other run
        let body = if chars[i].1 == ' ' && i + 1 < chars.len() && class(chars[i + 1].1) != Class::Space {
            i + 1
        } else {
            i
        };
        let cls = class(chars[body].1);
        if cls == Class::Space {
            let mut j = i;
            while j < chars.len() && class(chars[j].1) == Class::Space {
                j += 1;
            }
            // leave the last space for the following word
            if j < chars.len() && j - i > 1 {
                j -= 1;
            }
            out.push(&text[start..end_of(j)]);
            i = j;
            continue;
        }
        let mut j = body + 1;
        while j < chars.len() && class(chars[j].1) == cls {
            j += 1;
        }
        out.push(&text[start..end_of(j)]);
        i = j;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn whitespace_counts_words() {
        let t = TokenizerSpec::whitespace().load().unwrap();
        assert_eq!(t.count(""), 0);
        assert_eq!(t.count("Between London and Lisbon"), 4);
        assert_eq!(t.count("  a \n b  "), 2);
    }

    #[test]
    fn pretokenizer_matches_gpt2_pattern() {
        assert_eq!(pretokenize("Hello world"), vec!["Hello", " world"]);
        assert_eq!(pretokenize("don't stop"), vec!["don", "'t", " stop"]);
        assert_eq!(pretokenize("17.5C"), vec!["17", ".", "5", "C"]);
        assert_eq!(pretokenize("a  b"), vec!["a", " ", " b"]);
        assert_eq!(pretokenize("end  "), vec!["end", "  "]);
        assert_eq!(pretokenize("$$$ cost"), vec!["$$$", " cost"]);
        assert_eq!(pretokenize("2,500,000"), vec!["2", ",", "500", ",", "000"]);
        assert!(pretokenize("").is_empty());
    }

    #[test]
    fn bpe_merges_in_rank_order() {
        let bpe = Bpe::from_merges("#version: 0.2\nl o\nlo w\ne r\n", None).unwrap();
        assert_eq!(bpe.merge_word("lower"), vec!["low", "er"]);
        assert_eq!(bpe.count("lower"), 2);
        assert_eq!(bpe.count(""), 0);
    }

    #[test]
    fn bundled_bpe_is_subadditive() {
        let t = TokenizerSpec::default().load().unwrap();
        let a = "Between London and Lisbon,";
        let b = " the city with warmer weather is";
        assert!(t.count(a) >= 1);
        assert!(t.count(&format!("{a}{b}")) <= t.count(a) + t.count(b));
        assert!(t.count("The average temperature in Lisbon is") < "The average temperature in Lisbon is".len());
    }

    #[test]
    fn missing_vocab_file_is_an_error() {
        let spec = TokenizerSpec {
            kind: TokenizerKind::ExternalVocab,
            vocab_source: Some("/nonexistent/vocab.json".into()),
        };
        assert!(matches!(spec.load(), Err(Error::Tokenizer(_))));
        let spec = TokenizerSpec { kind: TokenizerKind::ExternalVocab, vocab_source: None };
        assert!(spec.load().is_err());
    }
}
