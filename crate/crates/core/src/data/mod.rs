//! Vocabulary, caption and feature files, and the synthetic corpus.

mod features;
mod synth;
mod vocab;

pub use features::FeatureStore;
pub use synth::{synth_corpus, SynthCorpus, MAX_GRAMMAR_SIZE};
pub use vocab::{
    normalize, Vocabulary, DEFAULT_MAX_WORDS, DEFAULT_MIN_COUNT, END, END_ID, START, START_ID, UNK, UNK_ID,
};

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// One training or evaluation example.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CaptionRecord {
    pub image_id: String,
    /// Starts with `<START>`, ends with `<END>`.
    pub tokens: Vec<usize>,
}

impl CaptionRecord {
    pub fn encode(vocab: &Vocabulary, image_id: &str, raw: &str, max_words: usize) -> Self {
        Self {
            image_id: image_id.to_owned(),
            tokens: vocab.encode(raw, max_words),
        }
    }
}

/// A raw `(image_id, caption)` pair as stored in a caption file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawCaption {
    pub image_id: String,
    pub text: String,
}

pub fn parse_captions(text: &str, path: &Path) -> Result<Vec<RawCaption>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (id, caption) = line.split_once('\t').ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            msg: "expected `image_id<TAB>caption`".into(),
        })?;
        out.push(RawCaption {
            image_id: id.to_owned(),
            text: caption.to_owned(),
        });
    }
    Ok(out)
}

pub fn load_captions(path: &Path) -> Result<Vec<RawCaption>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    parse_captions(&text, path)
}

pub fn captions_to_tsv(captions: &[RawCaption]) -> String {
    let mut s = String::new();
    for c in captions {
        let _ = writeln!(s, "{}\t{}", c.image_id, c.text);
    }
    s
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

/// `image_id<TAB>split` lines.
pub fn parse_splits(text: &str, path: &Path) -> Result<BTreeMap<String, Split>> {
    let mut out = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            msg,
        };
        let (id, split) = line
            .split_once('\t')
            .ok_or_else(|| bad("expected `image_id<TAB>split`".into()))?;
        let split = split.trim().parse().map_err(bad)?;
        out.insert(id.to_owned(), split);
    }
    Ok(out)
}

pub fn splits_to_tsv(splits: &BTreeMap<String, Split>) -> String {
    let mut s = String::new();
    for (id, split) in splits {
        let _ = writeln!(s, "{id}\t{}", split.as_str());
    }
    s
}

/// Groups captions by image, keeping file order within each image.
pub fn references_by_image(captions: &[RawCaption]) -> BTreeMap<String, Vec<String>> {
    let mut out: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for c in captions {
        out.entry(c.image_id.clone()).or_default().push(c.text.clone());
    }
    out
}
