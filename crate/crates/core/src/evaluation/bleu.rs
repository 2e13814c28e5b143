use std::collections::HashMap;
use std::hash::Hash;

use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 4;

fn ngram_counts<T: Hash + Eq>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus-level BLEU-4 on a 0..100 scale.
///
/// Clipped n-gram matches and totals are pooled over the corpus. An order
/// `n >= 2` with no match at all scores `1 / (total + 1)`; unigrams are
/// never smoothed. The brevity penalty is `exp(min(0, 1 - r / c))`.
pub fn corpus_bleu<T: Hash + Eq>(hypotheses: &[Vec<T>], references: &[Vec<T>]) -> Result<f64> {
    if hypotheses.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if hypotheses.len() != references.len() {
        return Err(Error::InvalidArgument(format!(
            "{} hypotheses but {} references",
            hypotheses.len(),
            references.len()
        )));
    }
    if let Some(i) = references.iter().position(Vec::is_empty) {
        return Err(Error::EmptyReference(i));
    }
    let mut matches = [0usize; MAX_ORDER];
    let mut totals = [0usize; MAX_ORDER];
    let (mut hyp_len, mut ref_len) = (0usize, 0usize);
    for (h, r) in hypotheses.iter().zip(references) {
        hyp_len += h.len();
        ref_len += r.len();
        for n in 1..=MAX_ORDER {
            let rc = ngram_counts(r, n);
            for (gram, c) in ngram_counts(h, n) {
                matches[n - 1] += c.min(rc.get(gram).copied().unwrap_or(0));
            }
            totals[n - 1] += h.len().saturating_sub(n - 1);
        }
    }
    if hyp_len == 0 || matches[0] == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for n in 0..MAX_ORDER {
        let p = if matches[n] == 0 {
            1.0 / (totals[n] as f64 + 1.0)
        } else {
            matches[n] as f64 / totals[n] as f64
        };
        log_sum += p.ln();
    }
    let bp = (1.0 - ref_len as f64 / hyp_len as f64).min(0.0).exp();
    Ok((100.0 * bp * (log_sum / MAX_ORDER as f64).exp()).clamp(0.0, 100.0))
}

/// Character tokens of a sentence, whitespace dropped.
pub fn char_tokens(s: &str) -> Vec<char> {
    s.chars().filter(|c| !c.is_whitespace()).collect()
}

/// [`corpus_bleu`] over character tokens.
pub fn corpus_bleu_text<S: AsRef<str>>(hypotheses: &[S], references: &[S]) -> Result<f64> {
    let h: Vec<Vec<char>> = hypotheses.iter().map(|s| char_tokens(s.as_ref())).collect();
    let r: Vec<Vec<char>> = references.iter().map(|s| char_tokens(s.as_ref())).collect();
    corpus_bleu(&h, &r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn short_hypothesis_only_pays_brevity() {
        let b = corpus_bleu_text(&["a b c d"], &["a b c d e"]).unwrap();
        assert!((b - 100.0 * (-0.25f64).exp()).abs() < 1e-9, "{b}");
    }

    #[test]
    fn identity_is_perfect() {
        let s = ["abcab", "ponm", "xyz"];
        assert!((corpus_bleu_text(&s, &s).unwrap() - 100.0).abs() < 1e-9);
    }

    #[test]
    fn no_overlap_is_zero_and_below_partial() {
        let none = corpus_bleu_text(&["xyz"], &["abc"]).unwrap();
        let some = corpus_bleu_text(&["abz"], &["abc"]).unwrap();
        assert_eq!(none, 0.0);
        assert!(some > none);
    }

    #[test]
    fn longer_hypothesis_has_no_penalty() {
        // 5 of 6 unigrams match; all higher orders also partial, no BP.
        let b = corpus_bleu_text(&["abcdex"], &["abcde"]).unwrap();
        let expect = 100.0 * ((5.0f64 / 6.0) * (4.0 / 5.0) * (3.0 / 4.0) * (2.0 / 3.0)).powf(0.25);
        assert!((b - expect).abs() < 1e-9);
    }

    #[test]
    fn clipping_limits_repeats() {
        // Hypothesis "aaaa" against "abcd": one clipped unigram match.
        let b = corpus_bleu_text(&["aaaa"], &["abcd"]).unwrap();
        let expect = 100.0 * ((1.0f64 / 4.0) * (1.0 / 4.0) * (1.0 / 3.0) * (1.0 / 2.0)).powf(0.25);
        assert!((b - expect).abs() < 1e-9, "{b} vs {expect}");
    }

    #[test]
    fn errors() {
        assert!(matches!(corpus_bleu_text::<&str>(&[], &[]), Err(Error::EmptyCorpus)));
        assert!(matches!(corpus_bleu_text(&["a", "b"], &["a", ""]), Err(Error::EmptyReference(1))));
        assert!(corpus_bleu_text(&["a"], &["a", "b"]).is_err());
    }

    #[test]
    fn empty_hypotheses_score_zero() {
        assert_eq!(corpus_bleu_text(&[""], &["abc"]).unwrap(), 0.0);
    }
}
