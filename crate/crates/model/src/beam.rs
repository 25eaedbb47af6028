//! Caption decoding: greedy and length-normalized beam search.

use std::cmp::Ordering;

use crate::Result;

/// Supplies next-token log-probabilities for a prefix of generated tokens.
pub trait StepScorer {
    fn log_probs(&mut self, prefix: &[usize]) -> Result<Vec<f64>>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecodeOptions {
    pub end: usize,
    /// Tokens never generated (e.g. START and PAD).
    pub banned: Vec<usize>,
    /// Maximum generated tokens, including END.
    pub max_len: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    /// Generated tokens, ending with END unless the length limit was hit.
    pub tokens: Vec<usize>,
    pub log_prob: f64,
}

impl Hypothesis {
    /// Mean log-probability per generated token.
    pub fn score(&self) -> f64 {
        if self.tokens.is_empty() {
            f64::NEG_INFINITY
        } else {
            self.log_prob / self.tokens.len() as f64
        }
    }

    /// Tokens without the trailing END.
    pub fn words(&self, end: usize) -> &[usize] {
        match self.tokens.last() {
            Some(&t) if t == end => &self.tokens[..self.tokens.len() - 1],
            _ => &self.tokens,
        }
    }
}

fn best_token(lp: &[f64], banned: &[usize]) -> Option<(usize, f64)> {
    lp.iter()
        .copied()
        .enumerate()
        .filter(|(t, _)| !banned.contains(t))
        .fold(None, |best, (t, v)| match best {
            Some((_, b)) if b >= v => best,
            _ => Some((t, v)),
        })
}

pub fn greedy_decode(scorer: &mut impl StepScorer, opts: &DecodeOptions) -> Result<Hypothesis> {
    let mut h = Hypothesis { tokens: Vec::new(), log_prob: 0.0 };
    while h.tokens.len() < opts.max_len {
        let lp = scorer.log_probs(&h.tokens)?;
        let Some((t, v)) = best_token(&lp, &opts.banned) else { break };
        h.tokens.push(t);
        h.log_prob += v;
        if t == opts.end {
            break;
        }
    }
    Ok(h)
}

/// Beam search over raw log-probability; each step keeps the `beam_size` best
/// expansions, moving those that end in END to the finished pool. Hypotheses still
/// alive at `max_len` are finished as they are. The greedy hypothesis joins the
/// pool, and the best pool entry by [`Hypothesis::score`] is returned (earliest
/// found on ties). With `beam_size == 1` the result is the greedy decode.
pub fn beam_search(scorer: &mut impl StepScorer, beam_size: usize, opts: &DecodeOptions) -> Result<Hypothesis> {
    let greedy = greedy_decode(scorer, opts)?;
    if beam_size <= 1 {
        return Ok(greedy);
    }
    let mut alive = vec![Hypothesis { tokens: Vec::new(), log_prob: 0.0 }];
    let mut finished: Vec<Hypothesis> = Vec::new();
    for _ in 0..opts.max_len {
        let mut cand: Vec<Hypothesis> = Vec::new();
        for h in &alive {
            let lp = scorer.log_probs(&h.tokens)?;
            for (t, &v) in lp.iter().enumerate() {
                if opts.banned.contains(&t) || v == f64::NEG_INFINITY {
                    continue;
                }
                let mut tokens = h.tokens.clone();
                tokens.push(t);
                cand.push(Hypothesis { tokens, log_prob: h.log_prob + v });
            }
        }
        // stable sort keeps expansion order on ties
        cand.sort_by(|a, b| b.log_prob.partial_cmp(&a.log_prob).unwrap_or(Ordering::Equal));
        cand.truncate(beam_size);
        alive.clear();
        for h in cand {
            if h.tokens.last() == Some(&opts.end) {
                finished.push(h);
            } else {
                alive.push(h);
            }
        }
        if alive.is_empty() {
            break;
        }
    }
    finished.extend(alive);
    finished.push(greedy);
    let mut best = finished.swap_remove(0);
    for h in finished {
        if h.score() > best.score() {
            best = h;
        }
    }
    Ok(best)
}

/// Every sequence of at most `max_len` tokens that ends in END (or reaches
/// `max_len`), scored by [`Hypothesis::score`]; for tests on tiny vocabularies.
pub fn exhaustive_search(scorer: &mut impl StepScorer, opts: &DecodeOptions) -> Result<Hypothesis> {
    fn rec(
        scorer: &mut impl StepScorer,
        opts: &DecodeOptions,
        h: Hypothesis,
        best: &mut Option<Hypothesis>,
    ) -> Result<()> {
        let done = h.tokens.last() == Some(&opts.end) || h.tokens.len() == opts.max_len;
        if done {
            if best.as_ref().is_none_or(|b| h.score() > b.score()) {
                *best = Some(h);
            }
            return Ok(());
        }
        let lp = scorer.log_probs(&h.tokens)?;
        for (t, &v) in lp.iter().enumerate() {
            if opts.banned.contains(&t) || v == f64::NEG_INFINITY {
                continue;
            }
            let mut tokens = h.tokens.clone();
            tokens.push(t);
            rec(scorer, opts, Hypothesis { tokens, log_prob: h.log_prob + v }, best)?;
        }
        Ok(())
    }
    let mut best = None;
    rec(scorer, opts, Hypothesis { tokens: Vec::new(), log_prob: 0.0 }, &mut best)?;
    Ok(best.unwrap_or(Hypothesis { tokens: Vec::new(), log_prob: 0.0 }))
}
