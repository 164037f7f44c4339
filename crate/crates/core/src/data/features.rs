use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Precomputed image feature vectors keyed by image id, all of width `dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStore {
    dim: usize,
    vectors: BTreeMap<String, Vec<f64>>,
}

impl FeatureStore {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            vectors: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn insert(&mut self, id: impl Into<String>, v: Vec<f64>) -> Result<()> {
        let id = id.into();
        if v.len() != self.dim {
            return Err(Error::dim("feature vector", &[self.dim], &[v.len()]));
        }
        if self.vectors.contains_key(&id) {
            return Err(Error::Contract(format!("duplicate image id `{id}`")));
        }
        self.vectors.insert(id, v);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Result<&[f64]> {
        self.vectors
            .get(id)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::MissingFeature(id.to_owned()))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.vectors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.vectors.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    /// Parses `image_id<TAB>f1,f2,...,fD` lines.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut store: Option<FeatureStore> = None;
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |msg: String| Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                msg,
            };
            let (id, values) = line
                .split_once('\t')
                .ok_or_else(|| bad("expected `image_id<TAB>f1,...,fD`".into()))?;
            let v = values
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| bad(format!("bad feature value: {e}")))?;
            let s = store.get_or_insert_with(|| FeatureStore::new(v.len()));
            s.insert(id, v).map_err(|e| bad(e.to_string()))?;
        }
        store.ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: "feature file is empty".into(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::parse(&text, path)
    }

    /// Writes values with Rust's shortest round-trip float formatting, so
    /// `parse(to_tsv())` restores every bit.
    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        for (id, v) in &self.vectors {
            s.push_str(id);
            s.push('\t');
            for (i, x) in v.iter().enumerate() {
                if i > 0 {
                    s.push(',');
                }
                let _ = write!(s, "{x:?}");
            }
            s.push('\n');
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_round_trip() {
        let text = "img1\t0.5,1,-2.25\nimg2\t0.1,0.2,0.3\n";
        let store = FeatureStore::parse(text, Path::new("f.tsv")).unwrap();
        assert_eq!(store.dim(), 3);
        assert_eq!(store.get("img1").unwrap(), &[0.5, 1.0, -2.25]);
        let again = FeatureStore::parse(&store.to_tsv(), Path::new("f.tsv")).unwrap();
        assert_eq!(store, again);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = "img1\t0.5,1\nimg2\t0.5,abc\n";
        match FeatureStore::parse(text, Path::new("f.tsv")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        let ragged = "a\t1,2\nb\t1\n";
        assert!(matches!(
            FeatureStore::parse(ragged, Path::new("f")),
            Err(Error::Parse { line: 2, .. })
        ));
        let dup = "a\t1\na\t2\n";
        assert!(FeatureStore::parse(dup, Path::new("f")).is_err());
    }

    #[test]
    fn missing_id() {
        let store = FeatureStore::new(2);
        assert!(matches!(store.get("nope"), Err(Error::MissingFeature(_))));
    }
}
