//! Tokenization, vocabularies and the noun filter used to prune queries.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const UNK: &str = "<unk>";
pub const BOS_ID: usize = 0;
pub const EOS_ID: usize = 1;
pub const UNK_ID: usize = 2;
pub const SPECIALS: [&str; 3] = [BOS, EOS, UNK];

const DEFAULT_NOUNS: &str = include_str!("../data/nouns.txt");

/// Lowercases, treats ASCII punctuation as a separator and splits on
/// whitespace. A literal `<unk>` word is kept as is. Input without any letter yields `["<unk>"]`.
pub fn tokenize(text: &str) -> Vec<String> {
    if !text.chars().any(char::is_alphabetic) {
        return vec![UNK.to_string()];
    }
    let mut tokens = Vec::new();
    for word in text.split_whitespace() {
        if word == UNK {
            tokens.push(word.to_string());
            continue;
        }
        let cleaned: String = word
            .chars()
            .map(|c| if c.is_ascii_punctuation() { ' ' } else { c })
            .collect();
        tokens.extend(cleaned.split_whitespace().map(str::to_lowercase));
    }
    if tokens.is_empty() {
        vec![UNK.to_string()]
    } else {
        tokens
    }
}

/// A referring expression and its cached tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Expression {
    pub raw: String,
    pub tokens: Vec<String>,
}

impl Expression {
    pub fn new(raw: impl Into<String>) -> Self {
        let raw = raw.into();
        let tokens = tokenize(&raw);
        Expression { raw, tokens }
    }

    pub fn from_tokens(tokens: Vec<String>) -> Self {
        Expression {
            raw: tokens.join(" "),
            tokens,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// True when the raw text had no word content at all.
    pub fn is_blank(&self) -> bool {
        !self.raw.chars().any(char::is_alphabetic)
    }
}

/// Token <-> id map. Ids 0, 1, 2 are `<bos>`, `<eos>`, `<unk>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    id_to_token: Vec<String>,
    token_to_id: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds from an explicit token list (specials are prepended).
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut id_to_token: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        let mut token_to_id: HashMap<String, usize> = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        for t in tokens {
            let t = t.into();
            if token_to_id.contains_key(&t) {
                if SPECIALS.contains(&t.as_str()) {
                    continue;
                }
                return Err(Error::InvalidArgument(format!("duplicate vocabulary token {t:?}")));
            }
            token_to_id.insert(t.clone(), id_to_token.len());
            id_to_token.push(t);
        }
        Ok(Vocabulary {
            id_to_token,
            token_to_id,
        })
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }

    pub fn id(&self, token: &str) -> usize {
        self.token_to_id.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.id_to_token.get(id).map(String::as_str)
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .map(|&i| self.token(i).unwrap_or(UNK).to_string())
            .collect()
    }
}

/// Frequency-thresholded vocabulary. Ids are assigned by descending count,
/// then ascending token.
pub fn build_vocab(corpus: &[Expression], min_count: usize) -> Result<Vocabulary> {
    if min_count < 1 {
        return Err(Error::InvalidArgument("min_count must be at least 1".into()));
    }
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for e in corpus {
        for t in &e.tokens {
            if !SPECIALS.contains(&t.as_str()) {
                *counts.entry(t.as_str()).or_default() += 1;
            }
        }
    }
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().filter(|(_, c)| *c >= min_count).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    Vocabulary::from_tokens(ranked.into_iter().map(|(t, _)| t))
}

/// Closed set of nouns standing in for a part-of-speech tagger.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NounLexicon(BTreeSet<String>);

impl NounLexicon {
    pub fn parse(text: &str) -> Result<Self> {
        let set: BTreeSet<String> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::to_lowercase)
            .collect();
        if set.is_empty() {
            return Err(Error::InvalidArgument("noun lexicon is empty".into()));
        }
        Ok(NounLexicon(set))
    }

    pub fn contains(&self, token: &str) -> bool {
        self.0.contains(token)
    }
}

impl Default for NounLexicon {
    fn default() -> Self {
        NounLexicon::parse(DEFAULT_NOUNS).expect("bundled noun list is non-empty")
    }
}

pub fn contains_noun(tokens: &[String], lexicon: &NounLexicon) -> bool {
    tokens.iter().any(|t| lexicon.contains(t))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("The Red Cup."), toks(&["the", "red", "cup"]));
        assert_eq!(tokenize(""), toks(&["<unk>"]));
        assert_eq!(tokenize("?!  "), toks(&["<unk>"]));
        assert_eq!(
            tokenize("pick-up the  LEFT  bottle!"),
            toks(&["pick", "up", "the", "left", "bottle"])
        );
    }

    #[test]
    fn vocab_frequency_order() {
        let corpus = [Expression::new("a b"), Expression::new("a")];
        let v = build_vocab(&corpus, 1).unwrap();
        assert_eq!(v.tokens(), &toks(&["<bos>", "<eos>", "<unk>", "a", "b"])[..]);
        let v = build_vocab(&corpus, 2).unwrap();
        assert_eq!(v.len(), 4);
        assert_eq!(v.id("b"), UNK_ID);
        assert!(build_vocab(&[], 1).is_err());
        assert!(build_vocab(&corpus, 0).is_err());
    }

    #[test]
    fn ties_broken_lexicographically() {
        let corpus = [Expression::new("zeta alpha mid")];
        let v = build_vocab(&corpus, 1).unwrap();
        assert_eq!(&v.tokens()[3..], &toks(&["alpha", "mid", "zeta"])[..]);
    }

    #[test]
    fn noun_filter() {
        let lex = NounLexicon::default();
        assert!(contains_noun(&toks(&["the", "left", "cup"]), &lex));
        assert!(!contains_noun(&toks(&["top", "left"]), &lex));
        assert!(contains_noun(&toks(&["leftmost", "bottle", "behind"]), &lex));
        assert!(NounLexicon::parse("\n\n").is_err());
    }

    proptest::proptest! {
        #[test]
        fn tokenize_idempotent(s in "\\PC{0,40}") {
            let once = tokenize(&s);
            proptest::prop_assert_eq!(tokenize(&once.join(" ")), once);
        }

        #[test]
        fn encode_decode_ids(words in proptest::collection::vec("[a-z]{1,6}", 1..30)) {
            let corpus = [Expression::from_tokens(words)];
            let v = build_vocab(&corpus, 1).unwrap();
            for id in 0..v.len() {
                let t = v.decode(&[id]);
                proptest::prop_assert_eq!(v.encode(&t), vec![id]);
            }
        }
    }
}
