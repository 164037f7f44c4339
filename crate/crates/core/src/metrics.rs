//! Corpus-level BLEU-n and CIDEr.
//!
//! Sentences are token lists; [`evaluate`] normalizes raw text with the
//! same rules as the vocabulary before scoring.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::data::normalize;
use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 4;

pub type Sentence = Vec<String>;
type Counts<'a> = HashMap<&'a [String], usize>;

fn ngrams(tokens: &[String], n: usize) -> Counts<'_> {
    let mut out = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *out.entry(w).or_insert(0) += 1;
        }
    }
    out
}

fn check_pairs(candidates: &[Sentence], references: &[Vec<Sentence>]) -> Result<()> {
    if candidates.is_empty() {
        return Err(Error::Contract("no candidates to score".into()));
    }
    if candidates.len() != references.len() {
        return Err(Error::Contract(format!(
            "{} candidates but {} reference sets",
            candidates.len(),
            references.len()
        )));
    }
    if references.iter().any(Vec::is_empty) {
        return Err(Error::Contract("every candidate needs at least one reference".into()));
    }
    Ok(())
}

/// Corpus totals of clipped n-gram matches and candidate n-grams.
pub fn modified_precision(candidates: &[Sentence], references: &[Vec<Sentence>], n: usize) -> Result<(usize, usize)> {
    check_pairs(candidates, references)?;
    let mut clipped = 0;
    let mut total = 0;
    for (cand, refs) in candidates.iter().zip(references) {
        let mut max_ref: Counts<'_> = HashMap::new();
        for r in refs {
            for (g, c) in ngrams(r, n) {
                let e = max_ref.entry(g).or_insert(0);
                *e = (*e).max(c);
            }
        }
        for (g, c) in ngrams(cand, n) {
            clipped += c.min(max_ref.get(g).copied().unwrap_or(0));
            total += c;
        }
    }
    Ok((clipped, total))
}

/// Corpus BLEU with uniform weights over orders `1..=n` and the brevity
/// penalty against the closest reference length (shorter wins ties).
pub fn bleu(candidates: &[Sentence], references: &[Vec<Sentence>], n: usize) -> Result<f64> {
    if !(1..=MAX_ORDER).contains(&n) {
        return Err(Error::Contract(format!(
            "BLEU order must be in 1..={MAX_ORDER}, got {n}"
        )));
    }
    check_pairs(candidates, references)?;
    let mut log_sum = 0.0;
    for k in 1..=n {
        let (m, t) = modified_precision(candidates, references, k)?;
        if m == 0 || t == 0 {
            return Ok(0.0);
        }
        log_sum += (m as f64 / t as f64).ln();
    }
    let c: usize = candidates.iter().map(Vec::len).sum();
    let r: usize = candidates
        .iter()
        .zip(references)
        .map(|(cand, refs)| {
            refs.iter()
                .map(Vec::len)
                .min_by_key(|&len| (len.abs_diff(cand.len()), len))
                .expect("non-empty reference set")
        })
        .sum();
    let bp = (1.0 - r as f64 / c as f64).min(0.0).exp();
    Ok(bp * (log_sum / n as f64).exp())
}

struct TfIdf {
    /// Per order: weighted n-gram vector and its norm.
    orders: Vec<(HashMap<Vec<String>, f64>, f64)>,
}

fn tfidf(tokens: &[String], df: &[HashMap<Vec<String>, usize>], corpus: f64) -> TfIdf {
    let orders = (1..=MAX_ORDER)
        .map(|n| {
            let counts = ngrams(tokens, n);
            let total: usize = counts.values().sum();
            let mut vec = HashMap::with_capacity(counts.len());
            for (g, c) in counts {
                let d = df[n - 1].get(g).copied().unwrap_or(0).max(1) as f64;
                let w = c as f64 / total as f64 * (corpus / d).ln();
                vec.insert(g.to_vec(), w);
            }
            let mut keys: Vec<_> = vec.keys().collect();
            keys.sort();
            let norm = keys.iter().map(|k| vec[*k] * vec[*k]).sum::<f64>().sqrt();
            (vec, norm)
        })
        .collect();
    TfIdf { orders }
}

fn cosine(a: &(HashMap<Vec<String>, f64>, f64), b: &(HashMap<Vec<String>, f64>, f64)) -> f64 {
    if a.1 == 0.0 || b.1 == 0.0 {
        return 0.0;
    }
    let mut keys: Vec<&Vec<String>> = a.0.keys().filter(|k| b.0.contains_key(*k)).collect();
    keys.sort();
    let dot: f64 = keys.iter().map(|k| a.0[*k] * b.0[*k]).sum();
    (dot / (a.1 * b.1)).clamp(0.0, 1.0)
}

/// Document frequencies per order: the number of reference sets in which
/// each n-gram occurs.
fn document_frequencies(references: &[Vec<Sentence>]) -> Vec<HashMap<Vec<String>, usize>> {
    (1..=MAX_ORDER)
        .map(|n| {
            let mut df = HashMap::new();
            for refs in references {
                let seen: HashSet<&[String]> = refs.iter().flat_map(|r| ngrams(r, n).into_keys()).collect();
                for g in seen {
                    *df.entry(g.to_vec()).or_insert(0) += 1;
                }
            }
            df
        })
        .collect()
}

/// CIDEr of each `(candidate, references)` pair, on the 0–10 scale.
pub fn cider_per_pair(candidates: &[Sentence], references: &[Vec<Sentence>]) -> Result<Vec<f64>> {
    check_pairs(candidates, references)?;
    let df = document_frequencies(references);
    let corpus = references.len() as f64;
    Ok(candidates
        .par_iter()
        .zip(references)
        .map(|(cand, refs)| {
            let c = tfidf(cand, &df, corpus);
            let rs: Vec<TfIdf> = refs.iter().map(|r| tfidf(r, &df, corpus)).collect();
            let per_order: f64 = (0..MAX_ORDER)
                .map(|n| rs.iter().map(|r| cosine(&c.orders[n], &r.orders[n])).sum::<f64>() / rs.len() as f64)
                .sum();
            10.0 * per_order / MAX_ORDER as f64
        })
        .collect())
}

/// Corpus CIDEr: mean of the per-pair scores. Pair scores are summed in
/// sorted order so the result does not depend on corpus order.
pub fn cider(candidates: &[Sentence], references: &[Vec<Sentence>]) -> Result<f64> {
    let mut scores = cider_per_pair(candidates, references)?;
    scores.sort_by(f64::total_cmp);
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Scores for one evaluation run.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    /// BLEU-1 to BLEU-4.
    pub bleu: [f64; MAX_ORDER],
    /// On the 0–10 scale.
    pub cider: f64,
}

impl EvalReport {
    /// `metric<TAB>value` lines. `CIDEr_x10` is the raw score times ten,
    /// the scale commonly used in result tables.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (i, b) in self.bleu.iter().enumerate() {
            let _ = writeln!(out, "BLEU-{}\t{b:.6}", i + 1);
        }
        let _ = writeln!(out, "CIDEr\t{:.6}", self.cider);
        let _ = writeln!(out, "CIDEr_x10\t{:.6}", self.cider * 10.0);
        out
    }
}

pub fn score(candidates: &[Sentence], references: &[Vec<Sentence>]) -> Result<EvalReport> {
    let mut b = [0.0; MAX_ORDER];
    for (n, slot) in b.iter_mut().enumerate() {
        *slot = bleu(candidates, references, n + 1)?;
    }
    Ok(EvalReport {
        bleu: b,
        cider: cider(candidates, references)?,
    })
}

/// Scores raw hypothesis text against raw references keyed by image id.
/// Every hypothesis needs references; images without a hypothesis are
/// ignored.
pub fn evaluate(
    hypotheses: &BTreeMap<String, String>,
    references: &BTreeMap<String, Vec<String>>,
) -> Result<EvalReport> {
    let mut cands = Vec::with_capacity(hypotheses.len());
    let mut refs = Vec::with_capacity(hypotheses.len());
    for (id, text) in hypotheses {
        let r = references.get(id).ok_or_else(|| Error::MissingFeature(id.clone()))?;
        cands.push(normalize(text));
        refs.push(r.iter().map(|s| normalize(s)).collect());
    }
    score(&cands, &refs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(text: &str) -> Sentence {
        text.split_whitespace().map(str::to_owned).collect()
    }

    #[test]
    fn clipped_unigram_fixture() {
        let cand = vec![s("the the the the the the the")];
        let refs = vec![vec![s("the cat is on the mat")]];
        assert_eq!(modified_precision(&cand, &refs, 1).unwrap(), (2, 7));
    }

    #[test]
    fn self_match_is_one() {
        let cand = vec![s("a red ball on the green grass"), s("two dogs run in a park")];
        let refs: Vec<_> = cand.iter().map(|c| vec![c.clone()]).collect();
        for n in 1..=4 {
            assert_eq!(bleu(&cand, &refs, n).unwrap(), 1.0);
        }
    }

    #[test]
    fn disjoint_scores_zero() {
        let cand = vec![s("x y z w")];
        let refs = vec![vec![s("a b c d")]];
        assert_eq!(bleu(&cand, &refs, 1).unwrap(), 0.0);
        assert_eq!(cider(&cand, &refs).unwrap(), 0.0);
    }

    #[test]
    fn brevity_penalty_uses_closest_reference() {
        let cand = vec![s("a b c")];
        let refs = vec![vec![s("a b c d e f"), s("a b c d")]];
        let expected = (1.0f64 - 4.0 / 3.0).exp();
        assert!((bleu(&cand, &refs, 1).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn cider_identical_distinct_corpus_is_ten() {
        let cand = vec![s("a red ball on grass"), s("two dogs run in parks")];
        let refs: Vec<_> = cand.iter().map(|c| vec![c.clone()]).collect();
        let per = cider_per_pair(&cand, &refs).unwrap();
        for p in per {
            assert!((p - 10.0).abs() < 1e-12);
        }
    }

    // Holds when every candidate n-gram occurs in some reference; unseen
    // n-grams get weight ln(|corpus|), which does move with corpus size.
    #[test]
    fn duplicated_corpus_keeps_pair_scores() {
        let cand = vec![s("a red ball"), s("blue ball on the grass"), s("dogs run")];
        let refs = vec![
            vec![s("a red ball on grass"), s("red ball")],
            vec![s("blue ball on the grass")],
            vec![s("two dogs run fast"), s("dogs running")],
        ];
        let once = cider_per_pair(&cand, &refs).unwrap();
        let cand2: Vec<_> = cand.iter().chain(&cand).cloned().collect();
        let refs2: Vec<_> = refs.iter().chain(&refs).cloned().collect();
        let twice = cider_per_pair(&cand2, &refs2).unwrap();
        for (i, p) in once.iter().enumerate() {
            assert!((p - twice[i]).abs() < 1e-12);
            assert!((p - twice[i + 3]).abs() < 1e-12);
        }
    }

    #[test]
    fn contract_errors() {
        assert!(bleu(&[], &[], 1).is_err());
        assert!(bleu(&[s("a")], &[vec![s("a")]], 5).is_err());
        assert!(cider(&[s("a")], &[vec![]]).is_err());
        assert!(cider(&[s("a"), s("b")], &[vec![s("a")]]).is_err());
    }

    #[test]
    fn report_lines() {
        let r = EvalReport {
            bleu: [1.0, 0.5, 0.25, 0.125],
            cider: 0.952,
        };
        let text = r.to_tsv();
        assert!(text.starts_with("BLEU-1\t1.000000\n"));
        assert!(text.contains("CIDEr\t0.952000\n"));
        assert!(text.contains("CIDEr_x10\t9.520000\n"));
    }
}
