//! Corpus-level BLEU with clipped n-gram precision and brevity penalty.

use std::collections::HashMap;
use std::hash::Hash;

use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 4;

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Per-order clipped match and candidate n-gram totals plus the length
/// statistics that feed the brevity penalty.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BleuStats {
    pub matches: [usize; MAX_ORDER],
    pub totals: [usize; MAX_ORDER],
    pub candidate_len: usize,
    pub reference_len: usize,
}

impl BleuStats {
    pub fn add<T: Eq + Hash>(&mut self, candidate: &[T], references: &[Vec<T>]) -> Result<()> {
        if references.is_empty() {
            return Err(Error::Empty("references"));
        }
        for n in 1..=MAX_ORDER {
            let cand = ngram_counts(candidate, n);
            let mut max_ref: HashMap<&[T], usize> = HashMap::new();
            for r in references {
                for (g, c) in ngram_counts(r, n) {
                    let e = max_ref.entry(g).or_insert(0);
                    *e = (*e).max(c);
                }
            }
            for (g, c) in &cand {
                self.matches[n - 1] += (*c).min(max_ref.get(g).copied().unwrap_or(0));
                self.totals[n - 1] += c;
            }
        }
        let c = candidate.len();
        // closest reference length, shorter one on ties
        let r = references
            .iter()
            .map(Vec::len)
            .min_by_key(|&len| (len.abs_diff(c), len))
            .expect("non-empty references");
        self.candidate_len += c;
        self.reference_len += r;
        Ok(())
    }

    pub fn brevity_penalty(&self) -> f64 {
        let (c, r) = (self.candidate_len as f64, self.reference_len as f64);
        if c == 0.0 {
            0.0
        } else if c < r {
            (1.0 - r / c).exp()
        } else {
            1.0
        }
    }

    pub fn precision(&self, n: usize) -> f64 {
        match self.totals[n - 1] {
            0 => 0.0,
            t => self.matches[n - 1] as f64 / t as f64,
        }
    }

    /// Cumulative BLEU-`n`: uniform geometric mean of `p_1..p_n` times BP.
    pub fn score(&self, n: usize) -> f64 {
        let mut log_sum = 0.0;
        for k in 1..=n {
            let p = self.precision(k);
            if p == 0.0 {
                return 0.0;
            }
            log_sum += p.ln();
        }
        self.brevity_penalty() * (log_sum / n as f64).exp()
    }
}

/// BLEU-1 through BLEU-`max_n` over a corpus.
pub fn bleu<T: Eq + Hash>(
    candidates: &[Vec<T>],
    references: &[Vec<Vec<T>>],
    max_n: usize,
) -> Result<Vec<f64>> {
    if candidates.is_empty() {
        return Err(Error::Empty("candidate set"));
    }
    if candidates.len() != references.len() {
        return Err(Error::dim("bleu", &[candidates.len()], &[references.len()]));
    }
    if !(1..=MAX_ORDER).contains(&max_n) {
        return Err(Error::Config(format!("BLEU order {max_n} outside 1..=4")));
    }
    let mut stats = BleuStats::default();
    for (c, refs) in candidates.iter().zip(references) {
        stats.add(c, refs)?;
    }
    Ok((1..=max_n).map(|n| stats.score(n)).collect())
}

/// Lowercased whitespace tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        tokenize(s)
    }

    #[test]
    fn identity_scores_one() {
        let c = vec![toks("a dog runs on the grass")];
        let r = vec![vec![toks("a dog runs on the grass")]];
        assert_eq!(bleu(&c, &r, 4).unwrap(), vec![1.0; 4]);
    }

    #[test]
    fn disjoint_scores_zero() {
        let c = vec![toks("cat sat")];
        let r = vec![vec![toks("dog ran")]];
        assert_eq!(bleu(&c, &r, 1).unwrap(), vec![0.0]);
    }

    #[test]
    fn clipped_unigram_precision() {
        let c = vec![toks("the the")];
        let r = vec![vec![toks("the cat")]];
        let mut stats = BleuStats::default();
        stats.add(&c[0], &r[0]).unwrap();
        assert_eq!(stats.precision(1), 0.5);
        assert_eq!(stats.brevity_penalty(), 1.0);
        assert_eq!(bleu(&c, &r, 1).unwrap(), vec![0.5]);
    }

    #[test]
    fn short_candidate_penalized() {
        let c = vec![toks("a dog")];
        let r = vec![vec![toks("a dog runs fast")]];
        let got = bleu(&c, &r, 1).unwrap()[0];
        assert!((got - (1.0f64 - 2.0).exp()).abs() < 1e-15);
    }

    #[test]
    fn closest_reference_length_used() {
        let c = [toks("a b c")];
        let r = [vec![toks("a b c d e f g"), toks("a b c x")]];
        let mut stats = BleuStats::default();
        stats.add(&c[0], &r[0]).unwrap();
        assert_eq!(stats.reference_len, 4);
    }

    #[test]
    fn empty_and_mismatched_inputs() {
        let empty: Vec<Vec<String>> = vec![];
        assert!(bleu(&empty, &[], 4).is_err());
        assert!(bleu(&[toks("a")], &[], 4).is_err());
        assert!(bleu(&[toks("a")], &[vec![toks("a")]], 5).is_err());
    }

    #[test]
    fn tokenize_lowercases() {
        assert_eq!(tokenize("A  Dog\tRuns"), vec!["a", "dog", "runs"]);
    }
}
