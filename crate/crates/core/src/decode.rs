//! Greedy, beam and exhaustive decoding.
//!
//! Every decoder starts from the state after the `t = 0` step with history
//! `[<START>]`. `max_len` bounds the number of interior words; once it is
//! reached the only continuation is `<END>`. Scores are summed natural-log
//! probabilities with no length normalization.

use std::cmp::Ordering;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::data::{FeatureStore, Vocabulary, END_ID, START_ID};
use crate::error::{Error, Result};
use crate::model::Decodable;

pub const DEFAULT_MAX_LEN: usize = 16;
pub const DEFAULT_BEAM: usize = 2;
/// Largest candidate count [`exhaustive_decode`] will enumerate.
pub const EXHAUSTIVE_LIMIT: u128 = 1_000_000;

/// A decoded sequence. `tokens` starts with `<START>` and, when
/// `finished`, ends with `<END>`.
#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    pub finished: bool,
}

impl Hypothesis {
    /// Interior words: everything between `<START>` and `<END>`.
    pub fn words(&self) -> &[usize] {
        let end = if self.finished {
            self.tokens.len() - 1
        } else {
            self.tokens.len()
        };
        &self.tokens[1..end]
    }
}

struct Live<S> {
    tokens: Vec<usize>,
    log_prob: f64,
    state: S,
}

fn interior_len(tokens: &[usize]) -> usize {
    tokens.len() - 1
}

/// Highest score first, then lexicographically smallest tokens.
fn rank(a: (f64, &[usize]), b: (f64, &[usize])) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1))
}

pub fn greedy_decode<M: Decodable>(model: &M, image: &[f64], max_len: usize) -> Result<Hypothesis> {
    let mut state = model.start_state(image)?;
    let mut tokens = vec![START_ID];
    let mut log_prob = 0.0;
    loop {
        let (lp, next) = model.next_log_probs(image, &tokens, &state)?;
        let tok = if interior_len(&tokens) >= max_len {
            END_ID
        } else {
            // First maximum wins, so ties go to the lowest index.
            let mut best = 0;
            for (i, &x) in lp.iter().enumerate() {
                if x > lp[best] {
                    best = i;
                }
            }
            best
        };
        log_prob += lp[tok];
        tokens.push(tok);
        if tok == END_ID {
            return Ok(Hypothesis {
                tokens,
                log_prob,
                finished: true,
            });
        }
        state = next;
    }
}

/// Beam search returning completed hypotheses best first.
///
/// Each round expands every live hypothesis over the vocabulary and keeps
/// the best `k − completed` candidates; those ending in `<END>` retire.
pub fn beam_search<M: Decodable>(model: &M, image: &[f64], k: usize, max_len: usize) -> Result<Vec<Hypothesis>> {
    if k == 0 {
        return Err(Error::Contract("beam width must be at least 1".into()));
    }
    let mut live = vec![Live {
        tokens: vec![START_ID],
        log_prob: 0.0,
        state: model.start_state(image)?,
    }];
    let mut done: Vec<Hypothesis> = Vec::new();
    while !live.is_empty() && done.len() < k {
        // (parent, token, score)
        let mut cands: Vec<(usize, usize, f64)> = Vec::new();
        let mut next_states = Vec::with_capacity(live.len());
        for (pi, h) in live.iter().enumerate() {
            let (lp, next) = model.next_log_probs(image, &h.tokens, &h.state)?;
            if interior_len(&h.tokens) >= max_len {
                cands.push((pi, END_ID, h.log_prob + lp[END_ID]));
            } else {
                cands.extend(lp.iter().enumerate().map(|(tok, &x)| (pi, tok, h.log_prob + x)));
            }
            next_states.push(next);
        }
        let seq = |&(pi, tok, _): &(usize, usize, f64)| {
            let mut t = live[pi].tokens.clone();
            t.push(tok);
            t
        };
        cands.sort_by(|a, b| {
            b.2.total_cmp(&a.2).then_with(|| {
                let (ta, tb) = (&live[a.0].tokens, &live[b.0].tokens);
                ta.iter().chain([&a.1]).cmp(tb.iter().chain([&b.1]))
            })
        });
        let width = k - done.len();
        let mut new_live = Vec::with_capacity(width);
        for c in cands.iter().take(width) {
            let tokens = seq(c);
            if c.1 == END_ID {
                done.push(Hypothesis {
                    tokens,
                    log_prob: c.2,
                    finished: true,
                });
            } else {
                new_live.push(Live {
                    tokens,
                    log_prob: c.2,
                    state: next_states[c.0].clone(),
                });
            }
        }
        live = new_live;
    }
    done.sort_by(|a, b| rank((a.log_prob, &a.tokens), (b.log_prob, &b.tokens)));
    Ok(done)
}

/// Number of finished sequences with at most `max_len` interior words
/// drawn from the `vocab_size − 1` non-`<END>` tokens.
pub fn exhaustive_count(vocab_size: usize, max_len: usize) -> u128 {
    let branch = vocab_size.saturating_sub(1) as u128;
    let mut total: u128 = 0;
    let mut layer: u128 = 1;
    for _ in 0..=max_len {
        total = total.saturating_add(layer);
        layer = layer.saturating_mul(branch);
    }
    total
}

/// Scores every finished sequence within `max_len` and returns the best
/// (ties to the lexicographically smallest).
pub fn exhaustive_decode<M: Decodable>(model: &M, image: &[f64], max_len: usize) -> Result<Hypothesis> {
    let count = exhaustive_count(model.vocab_size(), max_len);
    if count > EXHAUSTIVE_LIMIT {
        return Err(Error::SearchTooLarge {
            count,
            limit: EXHAUSTIVE_LIMIT,
        });
    }
    let mut best: Option<Hypothesis> = None;
    let start = model.start_state(image)?;
    let mut prefix = vec![START_ID];
    enumerate(model, image, max_len, &mut prefix, 0.0, &start, &mut best)?;
    Ok(best.expect("at least the empty caption is enumerated"))
}

fn enumerate<M: Decodable>(
    model: &M,
    image: &[f64],
    max_len: usize,
    prefix: &mut Vec<usize>,
    score: f64,
    state: &M::State,
    best: &mut Option<Hypothesis>,
) -> Result<()> {
    let (lp, next) = model.next_log_probs(image, prefix, state)?;
    let end_score = score + lp[END_ID];
    prefix.push(END_ID);
    let better = match best {
        None => true,
        Some(b) => rank((end_score, prefix), (b.log_prob, &b.tokens)) == Ordering::Less,
    };
    if better {
        *best = Some(Hypothesis {
            tokens: prefix.clone(),
            log_prob: end_score,
            finished: true,
        });
    }
    prefix.pop();
    if interior_len(prefix) >= max_len {
        return Ok(());
    }
    for (tok, &x) in lp.iter().enumerate() {
        if tok == END_ID {
            continue;
        }
        prefix.push(tok);
        enumerate(model, image, max_len, prefix, score + x, &next, best)?;
        prefix.pop();
    }
    Ok(())
}

/// Score of a given finished sequence (starting with `<START>`, ending
/// with `<END>`), accumulated in decoding order.
pub fn sequence_log_prob<M: Decodable>(model: &M, image: &[f64], tokens: &[usize]) -> Result<f64> {
    if tokens.len() < 2 || tokens[0] != START_ID {
        return Err(Error::Contract(
            "sequence must start with <START> and hold a next token".into(),
        ));
    }
    let mut state = model.start_state(image)?;
    let mut score = 0.0;
    for t in 1..tokens.len() {
        let (lp, next) = model.next_log_probs(image, &tokens[..t], &state)?;
        let tok = tokens[t];
        score += *lp.get(tok).ok_or(Error::Index {
            what: "vocabulary",
            index: tok,
            len: lp.len(),
        })?;
        state = next;
    }
    Ok(score)
}

/// Decodes every listed image, in parallel, with beam width `beam`
/// (`1` is greedy).
pub fn decode_images<M>(
    model: &M,
    features: &FeatureStore,
    ids: &[String],
    beam: usize,
    max_len: usize,
) -> Result<Vec<(String, Hypothesis)>>
where
    M: Decodable + Sync,
{
    ids.par_iter()
        .map(|id| {
            let image = features.get(id)?;
            let best = if beam == 1 {
                greedy_decode(model, image, max_len)?
            } else {
                beam_search(model, image, beam, max_len)?
                    .into_iter()
                    .next()
                    .expect("beam search returns at least one hypothesis")
            };
            Ok((id.clone(), best))
        })
        .collect()
}

/// `image_id<TAB>caption<TAB>logprob` per line.
pub fn format_captions(decoded: &[(String, Hypothesis)], vocab: &Vocabulary) -> String {
    let mut out = String::new();
    for (id, h) in decoded {
        let _ = writeln!(out, "{id}\t{}\t{:.6}", vocab.decode(&h.tokens), h.log_prob);
    }
    out
}
