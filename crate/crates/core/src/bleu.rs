//! BLEU-4 with modified n-gram precision, multiple references and brevity penalty.
//!
//! Precision is clipped by default: each candidate n-gram counts at most as often as
//! it occurs in the single reference where it is most frequent. The unclipped mode
//! counts every candidate n-gram present in any reference and exists to compare
//! against the simplified textbook formula. No smoothing is applied unless asked for.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const MAX_ORDER: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BleuOptions {
    pub clipped: bool,
    /// When set, an order with zero matches (but at least one candidate n-gram) uses
    /// `epsilon / total` instead of 0.
    pub smoothing: Option<f64>,
}

impl Default for BleuOptions {
    fn default() -> Self {
        BleuOptions { clipped: true, smoothing: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BleuReport {
    #[serde(rename = "bleu4")]
    pub score: f64,
    pub p: [f64; MAX_ORDER],
    pub bp: f64,
    pub c: usize,
    pub r: usize,
}

impl BleuReport {
    pub fn weights(&self) -> [f64; MAX_ORDER] {
        [1.0 / MAX_ORDER as f64; MAX_ORDER]
    }
}

/// All contiguous n-grams with multiplicity.
pub fn ngram_counts<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    assert!(n >= 1, "n-gram order must be at least 1");
    let mut out = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *out.entry(w.iter().map(AsRef::as_ref).collect()).or_insert(0) += 1;
        }
    }
    out
}

/// Sufficient statistics for one or more sentence pairs; additive over a corpus.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BleuStats {
    pub matches: [usize; MAX_ORDER],
    pub totals: [usize; MAX_ORDER],
    pub c: usize,
    pub r: usize,
}

impl std::ops::AddAssign for BleuStats {
    fn add_assign(&mut self, o: Self) {
        for n in 0..MAX_ORDER {
            self.matches[n] += o.matches[n];
            self.totals[n] += o.totals[n];
        }
        self.c += o.c;
        self.r += o.r;
    }
}

fn matched_count<S: AsRef<str>, R: AsRef<str>>(candidate: &[S], references: &[Vec<R>], n: usize, clipped: bool) -> (usize, usize) {
    let cand = ngram_counts(candidate, n);
    let total: usize = cand.values().sum();
    let refs: Vec<_> = references.iter().map(|r| ngram_counts(r, n)).collect();
    let matched = cand
        .iter()
        .map(|(gram, &count)| {
            let max_ref = refs.iter().map(|r| r.get(gram).copied().unwrap_or(0)).max().unwrap_or(0);
            if clipped {
                count.min(max_ref)
            } else if max_ref > 0 {
                count
            } else {
                0
            }
        })
        .sum();
    (matched, total)
}

/// `matched / total` for order `n`; 0 when the candidate has no n-grams of that order.
pub fn modified_precision<S: AsRef<str>, R: AsRef<str>>(
    candidate: &[S],
    references: &[Vec<R>],
    n: usize,
    clipped: bool,
) -> Result<f64> {
    if candidate.is_empty() {
        return Err(Error::Input("empty candidate".into()));
    }
    let (m, t) = matched_count(candidate, references, n, clipped);
    Ok(if t == 0 { 0.0 } else { m as f64 / t as f64 })
}

/// Reference length closest to `c`; ties go to the shorter reference.
pub fn effective_reference_length(c: usize, reference_lengths: &[usize]) -> usize {
    reference_lengths
        .iter()
        .copied()
        .min_by_key(|&r| (r.abs_diff(c), r))
        .unwrap_or(0)
}

/// 1 if `c > r`, else `exp(1 - r/c)`.
pub fn brevity_penalty(c: usize, r: usize) -> f64 {
    if c > r {
        1.0
    } else if c == 0 {
        0.0
    } else {
        (1.0 - r as f64 / c as f64).exp()
    }
}

pub fn sentence_stats<S: AsRef<str>, R: AsRef<str>>(
    candidate: &[S],
    references: &[Vec<R>],
    opts: &BleuOptions,
) -> Result<BleuStats> {
    if candidate.is_empty() {
        return Err(Error::Input("empty candidate".into()));
    }
    if references.is_empty() {
        return Err(Error::Input("at least one reference is required".into()));
    }
    let mut s = BleuStats { c: candidate.len(), ..Default::default() };
    let lens: Vec<usize> = references.iter().map(Vec::len).collect();
    s.r = effective_reference_length(s.c, &lens);
    for n in 1..=MAX_ORDER {
        let (m, t) = matched_count(candidate, references, n, opts.clipped);
        s.matches[n - 1] = m;
        s.totals[n - 1] = t;
    }
    Ok(s)
}

pub fn report_from_stats(s: &BleuStats, opts: &BleuOptions) -> BleuReport {
    let mut p = [0.0; MAX_ORDER];
    for n in 0..MAX_ORDER {
        let (m, t) = (s.matches[n], s.totals[n]);
        p[n] = match (m, t, opts.smoothing) {
            (_, 0, _) => 0.0,
            (0, t, Some(eps)) => eps / t as f64,
            (m, t, _) => m as f64 / t as f64,
        };
    }
    let bp = brevity_penalty(s.c, s.r);
    let score = if p.iter().all(|&x| x > 0.0) {
        let w = 1.0 / MAX_ORDER as f64;
        bp * p.iter().map(|x| w * x.ln()).sum::<f64>().exp()
    } else {
        0.0
    };
    BleuReport { score, p, bp, c: s.c, r: s.r }
}

pub fn bleu4<S: AsRef<str>, R: AsRef<str>>(candidate: &[S], references: &[Vec<R>]) -> Result<BleuReport> {
    bleu4_with(candidate, references, &BleuOptions::default())
}

pub fn bleu4_with<S: AsRef<str>, R: AsRef<str>>(
    candidate: &[S],
    references: &[Vec<R>],
    opts: &BleuOptions,
) -> Result<BleuReport> {
    Ok(report_from_stats(&sentence_stats(candidate, references, opts)?, opts))
}

/// Corpus BLEU: matched/total counts and lengths are summed over all pairs before any
/// ratio is taken.
pub fn corpus_bleu<S: AsRef<str>, R: AsRef<str>>(
    candidates: &[Vec<S>],
    reference_sets: &[Vec<Vec<R>>],
    opts: &BleuOptions,
) -> Result<BleuReport> {
    if candidates.len() != reference_sets.len() {
        return Err(Error::Input(format!(
            "{} candidates but {} reference sets",
            candidates.len(),
            reference_sets.len()
        )));
    }
    if candidates.is_empty() {
        return Err(Error::Input("empty corpus".into()));
    }
    let mut total = BleuStats::default();
    for (c, refs) in candidates.iter().zip(reference_sets) {
        total += sentence_stats(c, refs, opts)?;
    }
    Ok(report_from_stats(&total, opts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn ngram_examples() {
        let t = toks("a b a");
        let u = ngram_counts(&t, 1);
        assert_eq!(u[&vec!["a"]], 2);
        assert_eq!(u[&vec!["b"]], 1);
        let b = ngram_counts(&t, 2);
        assert_eq!(b.len(), 2);
        assert_eq!(b[&vec!["a", "b"]], 1);
        assert_eq!(b[&vec!["b", "a"]], 1);
        assert!(ngram_counts(&toks("a"), 2).is_empty());
    }

    #[test]
    fn clipping_example() {
        let c = toks("the the the the");
        let r = vec![toks("the cat")];
        assert_eq!(modified_precision(&c, &r, 1, true).unwrap(), 0.25);
        assert_eq!(modified_precision(&c, &r, 1, false).unwrap(), 1.0);
        assert!(modified_precision::<String, String>(&[], &r, 1, true).is_err());
    }

    #[test]
    fn brevity_examples() {
        assert_eq!(brevity_penalty(10, 5), 1.0);
        assert_eq!(brevity_penalty(7, 7), 1.0);
        assert!((brevity_penalty(4, 8) - (-1f64).exp()).abs() < 1e-15);
        assert_eq!(effective_reference_length(5, &[3, 7]), 3);
        assert_eq!(effective_reference_length(5, &[9, 6, 4]), 4);
    }

    #[test]
    fn identity_and_short_candidates() {
        let r = toks("two b-52 are parked on the apron");
        assert_eq!(bleu4(&r, &[r.clone()]).unwrap().score, 1.0);
        assert_eq!(bleu4(&toks("two b-52 are"), &[r.clone()]).unwrap().score, 0.0);
        let short = bleu4_with(&toks("two b-52 are"), &[r], &BleuOptions { clipped: true, smoothing: Some(0.1) }).unwrap();
        assert_eq!(short.score, 0.0, "no 4-grams at all stays zero even with smoothing");
    }

    #[test]
    fn corpus_examples() {
        let c = toks("two b-52 parked on the apron");
        let r = vec![toks("two b-52 are parked on the apron")];
        let single = bleu4(&c, &r).unwrap();
        let o = BleuOptions::default();
        assert_eq!(corpus_bleu(&[c.clone()], &[r.clone()], &o).unwrap(), single);
        let dup = corpus_bleu(&[c.clone(), c.clone()], &[r.clone(), r.clone()], &o).unwrap();
        assert!((dup.score - single.score).abs() < 1e-15);
        assert!(corpus_bleu::<String, String>(&[c], &[], &o).is_err());
    }

    proptest! {
        #[test]
        fn score_bounded_and_reference_removal_antitone(
            cand in prop::collection::vec(0u8..4, 1..10),
            refs in prop::collection::vec(prop::collection::vec(0u8..4, 1..10), 2..4),
        ) {
            let cand: Vec<String> = cand.iter().map(|t| t.to_string()).collect();
            let refs: Vec<Vec<String>> = refs.iter().map(|r| r.iter().map(|t| t.to_string()).collect()).collect();
            let rep = bleu4(&cand, &refs).unwrap();
            prop_assert!((0.0..=1.0).contains(&rep.score));
            prop_assert!(rep.bp > 0.0 && rep.bp <= 1.0);
            for n in 1..=4 {
                let all = modified_precision(&cand, &refs, n, true).unwrap();
                let fewer = modified_precision(&cand, &refs[1..], n, true).unwrap();
                prop_assert!(fewer <= all);
            }
        }

        #[test]
        fn brevity_penalty_nondecreasing(r in 1usize..40, c in 1usize..40) {
            prop_assert!(brevity_penalty(c, r) <= brevity_penalty(c + 1, r));
        }
    }
}
