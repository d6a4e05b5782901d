//! Multi-reference BLEU, chrF++ and length ratio.

use std::collections::HashMap;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use super::MetricError;
use crate::normalize::{normalize, similarity_profile};

/// Recorded next to every BLEU score.
pub const BLEU_TOKENIZER: &str = "multiref-bleu-tok/1 (nfc,quotes,dashes,whitespace,list-numbers,casefold,punct-split)";
pub const BLEU_MAX_ORDER: usize = 4;
pub const CHRF_CHAR_ORDER: usize = 6;
pub const CHRF_WORD_ORDER: usize = 2;
pub const CHRF_BETA: f64 = 2.0;

/// Case-folded, normalized text split on whitespace, with every character
/// that is neither alphanumeric nor whitespace as its own token.
pub fn bleu_tokenize(text: &str) -> Vec<String> {
    let norm = normalize(text, &similarity_profile());
    let mut tokens = Vec::new();
    let mut cur = String::new();
    for c in norm.chars() {
        if c.is_alphanumeric() {
            cur.push(c);
            continue;
        }
        if !cur.is_empty() {
            tokens.push(std::mem::take(&mut cur));
        }
        if !c.is_whitespace() {
            tokens.push(c.to_string());
        }
    }
    if !cur.is_empty() {
        tokens.push(cur);
    }
    tokens
}

fn count_ngrams<T: Hash + Eq>(items: &[T], n: usize) -> HashMap<&[T], u64> {
    let mut m = HashMap::new();
    if n > 0 && items.len() >= n {
        for w in items.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Sufficient statistics for corpus BLEU.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BleuStats {
    pub matches: [u64; BLEU_MAX_ORDER],
    pub totals: [u64; BLEU_MAX_ORDER],
    pub hyp_len: u64,
    pub ref_len: u64,
}

impl BleuStats {
    pub fn add(&mut self, o: &BleuStats) {
        for n in 0..BLEU_MAX_ORDER {
            self.matches[n] += o.matches[n];
            self.totals[n] += o.totals[n];
        }
        self.hyp_len += o.hyp_len;
        self.ref_len += o.ref_len;
    }

    /// BLEU in [0, 100] without smoothing. Orders with no hypothesis n-grams
    /// at all are left out of the geometric mean (effective order); any
    /// included order with zero matches gives 0.
    pub fn score(&self) -> f64 {
        let orders: Vec<usize> = (0..BLEU_MAX_ORDER).filter(|&n| self.totals[n] > 0).collect();
        if orders.is_empty() || orders.iter().any(|&n| self.matches[n] == 0) {
            return 0.0;
        }
        let log_mean = orders
            .iter()
            .map(|&n| (self.matches[n] as f64 / self.totals[n] as f64).ln())
            .sum::<f64>()
            / orders.len() as f64;
        let bp = if self.hyp_len < self.ref_len {
            (1.0 - self.ref_len as f64 / self.hyp_len as f64).exp()
        } else {
            1.0
        };
        100.0 * bp * log_mean.exp()
    }
}

/// Statistics for one hypothesis against its references, on token lists.
pub fn bleu_stats_tokens(hyp: &[String], refs: &[Vec<String>]) -> Result<BleuStats, MetricError> {
    if refs.is_empty() {
        return Err(MetricError::EmptyReference);
    }
    let mut s = BleuStats {
        hyp_len: hyp.len() as u64,
        ..Default::default()
    };
    // closest reference length, shorter on ties
    s.ref_len = refs
        .iter()
        .map(|r| r.len() as u64)
        .min_by_key(|&l| (l.abs_diff(s.hyp_len), l))
        .unwrap();
    for n in 1..=BLEU_MAX_ORDER {
        let h = count_ngrams(hyp, n);
        let mut max_ref: HashMap<&[String], u64> = HashMap::new();
        for r in refs {
            for (g, c) in count_ngrams(r, n) {
                let e = max_ref.entry(g).or_insert(0);
                *e = (*e).max(c);
            }
        }
        s.totals[n - 1] = hyp.len().saturating_sub(n - 1) as u64;
        s.matches[n - 1] = h.iter().map(|(g, c)| (*c).min(max_ref.get(g).copied().unwrap_or(0))).sum();
    }
    Ok(s)
}

pub fn bleu_stats(hyp: &str, refs: &[&str]) -> Result<BleuStats, MetricError> {
    let refs: Vec<Vec<String>> = refs.iter().map(|r| bleu_tokenize(r)).collect();
    bleu_stats_tokens(&bleu_tokenize(hyp), &refs)
}

/// Corpus BLEU over (hypothesis, references) pairs.
pub fn bleu_corpus(pairs: &[(String, Vec<String>)]) -> Result<f64, MetricError> {
    if pairs.is_empty() {
        return Err(MetricError::EmptyHypothesisSet);
    }
    let mut total = BleuStats::default();
    for (h, refs) in pairs {
        let refs: Vec<&str> = refs.iter().map(String::as_str).collect();
        total.add(&bleu_stats(h, &refs)?);
    }
    Ok(total.score())
}

/// Per-order `[hyp, ref, match]` counts: six character orders then two word
/// orders.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChrfStats {
    pub orders: Vec<[u64; 3]>,
}

impl Default for ChrfStats {
    fn default() -> Self {
        ChrfStats {
            orders: vec![[0; 3]; CHRF_CHAR_ORDER + CHRF_WORD_ORDER],
        }
    }
}

impl ChrfStats {
    pub fn add(&mut self, o: &ChrfStats) {
        for (a, b) in self.orders.iter_mut().zip(&o.orders) {
            for k in 0..3 {
                a[k] += b[k];
            }
        }
    }

    /// F-beta over precision and recall averaged across orders where both
    /// hypothesis and reference have n-grams.
    pub fn score(&self) -> f64 {
        let (mut p, mut r, mut k) = (0.0, 0.0, 0usize);
        for &[h, rf, m] in &self.orders {
            if h > 0 && rf > 0 {
                p += m as f64 / h as f64;
                r += m as f64 / rf as f64;
                k += 1;
            }
        }
        if k == 0 {
            return 0.0;
        }
        p /= k as f64;
        r /= k as f64;
        if p + r == 0.0 {
            return 0.0;
        }
        let b2 = CHRF_BETA * CHRF_BETA;
        100.0 * (1.0 + b2) * p * r / (b2 * p + r)
    }
}

const CHRF_PUNCT: &str = "!\"#$%&'()*+,-./:;<=>?@[\\]^_`{|}~";

/// Whitespace tokens with one leading or trailing ASCII punctuation mark
/// split off.
pub fn chrf_words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for w in text.split_whitespace() {
        let chars: Vec<char> = w.chars().collect();
        if chars.len() == 1 {
            out.push(w.to_string());
        } else if CHRF_PUNCT.contains(chars[chars.len() - 1]) {
            out.push(chars[..chars.len() - 1].iter().collect());
            out.push(chars[chars.len() - 1].to_string());
        } else if CHRF_PUNCT.contains(chars[0]) {
            out.push(chars[0].to_string());
            out.push(chars[1..].iter().collect());
        } else {
            out.push(w.to_string());
        }
    }
    out
}

fn order_counts<T: Hash + Eq>(h: &[T], r: &[T], n: usize) -> [u64; 3] {
    let hc = count_ngrams(h, n);
    let rc = count_ngrams(r, n);
    let m = hc.iter().map(|(g, c)| (*c).min(rc.get(g).copied().unwrap_or(0))).sum();
    [hc.values().sum(), rc.values().sum(), m]
}

pub fn chrf_stats(hyp: &str, reference: &str) -> ChrfStats {
    let hc: Vec<char> = hyp.chars().filter(|c| !c.is_whitespace()).collect();
    let rc: Vec<char> = reference.chars().filter(|c| !c.is_whitespace()).collect();
    let hw = chrf_words(hyp);
    let rw = chrf_words(reference);
    let mut orders = Vec::with_capacity(CHRF_CHAR_ORDER + CHRF_WORD_ORDER);
    for n in 1..=CHRF_CHAR_ORDER {
        orders.push(order_counts(&hc, &rc, n));
    }
    for n in 1..=CHRF_WORD_ORDER {
        orders.push(order_counts(&hw, &rw, n));
    }
    ChrfStats { orders }
}

/// Statistics of the best-scoring reference (first one on ties).
pub fn chrfpp_best_stats(hyp: &str, refs: &[&str]) -> Result<ChrfStats, MetricError> {
    let mut best: Option<(f64, ChrfStats)> = None;
    for r in refs {
        let s = chrf_stats(hyp, r);
        let f = s.score();
        if best.as_ref().is_none_or(|(b, _)| f > *b) {
            best = Some((f, s));
        }
    }
    best.map(|(_, s)| s).ok_or(MetricError::EmptyReference)
}

/// chrF++ of one passage: the maximum over references.
pub fn chrfpp_passage(hyp: &str, refs: &[&str]) -> Result<f64, MetricError> {
    Ok(chrfpp_best_stats(hyp, refs)?.score())
}

/// Corpus chrF++ from pooled best-reference statistics.
pub fn chrfpp_corpus_pooled(pairs: &[(String, Vec<String>)]) -> Result<f64, MetricError> {
    if pairs.is_empty() {
        return Err(MetricError::EmptyHypothesisSet);
    }
    let mut total = ChrfStats::default();
    for (h, refs) in pairs {
        let refs: Vec<&str> = refs.iter().map(String::as_str).collect();
        total.add(&chrfpp_best_stats(h, &refs)?);
    }
    Ok(total.score())
}

/// Hypothesis characters over mean reference characters.
pub fn length_ratio(mt: &str, refs: &[&str]) -> Result<f64, MetricError> {
    if refs.is_empty() {
        return Err(MetricError::EmptyReference);
    }
    let mean = refs.iter().map(|r| r.chars().count() as f64).sum::<f64>() / refs.len() as f64;
    if mean == 0.0 {
        return Err(MetricError::ZeroReferenceLength);
    }
    Ok(mt.chars().count() as f64 / mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tokenizer_splits_punctuation_and_folds_case() {
        assert_eq!(bleu_tokenize("The Blessed One said: \u{201C}Bhikkhus!\u{201D}"), vec![
            "the", "blessed", "one", "said", ":", "\"", "bhikkhus", "!", "\""
        ]);
        assert_eq!(bleu_tokenize("Pāli  sutta"), vec!["pāli", "sutta"]);
    }

    #[test]
    fn bleu_examples() {
        let pairs = vec![("the cat sat".to_string(), vec!["the cat sat down".to_string(), "a cat sat".to_string()])];
        // all n-gram orders 1..3 match fully, closest reference has length 3
        assert_eq!(bleu_corpus(&pairs).unwrap(), 100.0);
        let none = vec![("dog".to_string(), vec!["the cat".to_string()])];
        assert_eq!(bleu_corpus(&none).unwrap(), 0.0);
        assert!(matches!(bleu_corpus(&[]), Err(MetricError::EmptyHypothesisSet)));
        let s = bleu_stats("the cat", &["the cat sat on the mat"]).unwrap();
        assert_eq!((s.hyp_len, s.ref_len), (2, 6));
        assert!((s.score() - 100.0 * (1.0f64 - 3.0).exp()).abs() < 1e-12);
    }

    #[test]
    fn closest_length_prefers_shorter_on_ties() {
        let s = bleu_stats("a b c d", &["a b c", "a b c d e"]).unwrap();
        assert_eq!(s.ref_len, 3);
    }

    #[test]
    fn chrf_abc_abd() {
        // char orders 1-3 give P = R = 2/3, 1/2, 0; word unigram gives 0
        let expected = 100.0 * (2.0 / 3.0 + 0.5) / 4.0;
        assert!((chrfpp_passage("abc", &["abd"]).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 29.1667).abs() < 1e-4);
    }

    #[test]
    fn chrf_identity_and_disjoint() {
        assert_eq!(chrfpp_passage("So I have heard.", &["So I have heard."]).unwrap(), 100.0);
        assert_eq!(chrfpp_passage("xyz", &["abc"]).unwrap(), 0.0);
        assert!(matches!(chrfpp_passage("x", &[]), Err(MetricError::EmptyReference)));
    }

    #[test]
    fn chrf_word_punctuation() {
        assert_eq!(chrf_words("Hello, (world) x !"), vec!["Hello", ",", "(world", ")", "x", "!"]);
    }

    #[test]
    fn length_ratio_examples() {
        assert_eq!(length_ratio("abc", &["abc"]).unwrap(), 1.0);
        let r = "r".repeat(100);
        assert_eq!(length_ratio(&"m".repeat(150), &[&r, &r, &r]).unwrap(), 1.5);
        assert!(matches!(length_ratio("a", &[""]), Err(MetricError::ZeroReferenceLength)));
    }

    proptest! {
        #[test]
        fn bounds_identity_and_duplicate_refs(h in "[a-c ]{0,20}", r in "[a-c ]{1,20}") {
            let b = bleu_stats(&h, &[&r]).unwrap().score();
            let b2 = bleu_stats(&h, &[&r, &r]).unwrap().score();
            prop_assert!((0.0..=100.0).contains(&b));
            prop_assert_eq!(b, b2);
            let c = chrfpp_passage(&h, &[&r]).unwrap();
            prop_assert!((0.0..=100.0).contains(&c));
            prop_assert_eq!(c, chrfpp_passage(&h, &[&r, &r]).unwrap());
            if !r.trim().is_empty() {
                prop_assert_eq!(chrfpp_passage(&r, &[&r]).unwrap(), 100.0);
                prop_assert_eq!(bleu_stats(&r, &[&r]).unwrap().score(), 100.0);
            }
        }

        #[test]
        fn adding_a_reference_never_lowers_chrf(h in "[a-d ]{1,20}", r1 in "[a-d ]{1,20}", r2 in "[a-d ]{1,20}") {
            prop_assert!(chrfpp_passage(&h, &[&r1, &r2]).unwrap() >= chrfpp_passage(&h, &[&r1]).unwrap());
        }
    }
}
