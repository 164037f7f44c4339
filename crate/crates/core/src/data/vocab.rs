use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub const START: &str = "<START>";
pub const END: &str = "<END>";
pub const UNK: &str = "<UNK>";

pub const START_ID: usize = 0;
pub const END_ID: usize = 1;
pub const UNK_ID: usize = 2;

/// Default minimum corpus frequency for a word to keep its own index.
pub const DEFAULT_MIN_COUNT: usize = 5;
/// Default cap on interior caption words.
pub const DEFAULT_MAX_WORDS: usize = 16;

/// Lowercases, drops every character that is neither alphabetic nor
/// whitespace, and splits on whitespace. Digits and punctuation vanish.
pub fn normalize(raw: &str) -> Vec<String> {
    let mut cleaned = String::with_capacity(raw.len());
    for ch in raw.chars() {
        if ch.is_alphabetic() {
            cleaned.extend(ch.to_lowercase());
        } else if ch.is_whitespace() {
            cleaned.push(' ');
        }
    }
    cleaned.split_whitespace().map(str::to_owned).collect()
}

/// Token/index map with `<START>`, `<END>` and `<UNK>` at indices 0, 1, 2.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    counts: Vec<usize>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds a vocabulary from raw captions. Words seen fewer than
    /// `min_count` times are folded into `<UNK>`. Indices after the specials
    /// run by descending count, ties broken lexicographically, so the
    /// result does not depend on caption order.
    pub fn build<S: AsRef<str>>(captions: &[S], min_count: usize) -> Result<Self> {
        if min_count == 0 {
            return Err(Error::Contract("min_count must be at least 1".into()));
        }
        let mut freq: HashMap<String, usize> = HashMap::new();
        for c in captions {
            for tok in normalize(c.as_ref()) {
                *freq.entry(tok).or_default() += 1;
            }
        }
        if freq.is_empty() {
            return Err(Error::EmptyVocabulary);
        }
        let mut kept: Vec<(String, usize)> = Vec::new();
        let mut unk = 0;
        for (tok, n) in freq {
            if n >= min_count {
                kept.push((tok, n));
            } else {
                unk += n;
            }
        }
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

        let n_caps = captions.len();
        let mut tokens = vec![START.to_owned(), END.to_owned(), UNK.to_owned()];
        let mut counts = vec![n_caps, n_caps, unk];
        for (tok, n) in kept {
            tokens.push(tok);
            counts.push(n);
        }
        Ok(Self::from_parts(tokens, counts))
    }

    fn from_parts(tokens: Vec<String>, counts: Vec<usize>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, counts, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn id_or_unk(&self, token: &str) -> usize {
        self.id(token).unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn count(&self, id: usize) -> Option<usize> {
        self.counts.get(id).copied()
    }

    pub fn is_special(id: usize) -> bool {
        id <= UNK_ID
    }

    /// `<START> w1 .. wn <END>` with at most `max_words` interior words.
    pub fn encode(&self, raw: &str, max_words: usize) -> Vec<usize> {
        let mut out = vec![START_ID];
        out.extend(normalize(raw).iter().take(max_words).map(|t| self.id_or_unk(t)));
        out.push(END_ID);
        out
    }

    /// Joins the interior words of an index sequence, skipping `<START>`
    /// and stopping at the first `<END>`.
    pub fn decode(&self, ids: &[usize]) -> String {
        let mut words = Vec::new();
        for &id in ids {
            match id {
                START_ID => continue,
                END_ID => break,
                _ => words.push(self.token(id).unwrap_or(UNK)),
            }
        }
        words.join(" ")
    }

    /// `index<TAB>token<TAB>count` per line.
    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        for (i, (t, c)) in self.tokens.iter().zip(&self.counts).enumerate() {
            let _ = writeln!(s, "{i}\t{t}\t{c}");
        }
        s
    }

    pub fn from_tsv(text: &str, path: &Path) -> Result<Self> {
        let mut tokens = Vec::new();
        let mut counts = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let bad = |msg: &str| Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                msg: msg.to_owned(),
            };
            let mut cols = line.split('\t');
            let (Some(i), Some(t), Some(c), None) = (cols.next(), cols.next(), cols.next(), cols.next()) else {
                return Err(bad("expected `index<TAB>token<TAB>count`"));
            };
            let i: usize = i.parse().map_err(|_| bad("bad index"))?;
            if i != tokens.len() {
                return Err(bad("indices must be consecutive from 0"));
            }
            let c: usize = c.parse().map_err(|_| bad("bad count"))?;
            tokens.push(t.to_owned());
            counts.push(c);
        }
        let specials = [START, END, UNK];
        if tokens.len() < 3 || tokens[..3].iter().zip(specials).any(|(a, b)| a != b) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                msg: "first three entries must be <START>, <END>, <UNK>".into(),
            });
        }
        Ok(Self::from_parts(tokens, counts))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_corpus_counts() {
        let v = Vocabulary::build(&["a cat", "a dog"], 1).unwrap();
        assert_eq!(v.len(), 6);
        assert_eq!(v.token(3), Some("a"));
        assert_eq!(v.token(4), Some("cat"));
        assert_eq!(v.token(5), Some("dog"));
    }

    #[test]
    fn threshold_prunes_to_unk() {
        let v = Vocabulary::build(&["a cat", "a dog"], 2).unwrap();
        assert_eq!(v.len(), 4);
        assert_eq!(v.id("a"), Some(3));
        assert_eq!(v.id_or_unk("cat"), UNK_ID);
        assert_eq!(v.count(UNK_ID), Some(2));
        assert_eq!(v.encode("a dog", 16), vec![START_ID, 3, UNK_ID, END_ID]);
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize("A cat!!"), vec!["a", "cat"]);
        assert_eq!(normalize("  two 2 dogs, running\t"), vec!["two", "dogs", "running"]);
        assert!(normalize("123 !!").is_empty());
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert!(matches!(Vocabulary::build(&["", "42"], 1), Err(Error::EmptyVocabulary)));
        assert!(Vocabulary::build(&["a"], 0).is_err());
    }

    #[test]
    fn encode_truncates_and_wraps() {
        let v = Vocabulary::build(&["a cat"], 1).unwrap();
        assert_eq!(v.encode("a cat", 16), vec![START_ID, 3, 4, END_ID]);
        assert_eq!(v.encode("", 16), vec![START_ID, END_ID]);
        let long = vec!["a"; 20].join(" ");
        assert_eq!(v.encode(&long, 16).len(), 18);
        assert_eq!(v.encode("zebra", 16), vec![START_ID, UNK_ID, END_ID]);
    }

    #[test]
    fn tsv_round_trip() {
        let v = Vocabulary::build(&["a cat", "a dog", "the cat"], 1).unwrap();
        let back = Vocabulary::from_tsv(&v.to_tsv(), Path::new("vocab.tsv")).unwrap();
        assert_eq!(v, back);
        assert!(Vocabulary::from_tsv("0\ta\t1\n", Path::new("v")).is_err());
    }
}
