//! Text normalization, word n-grams and Jaccard similarity.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

/// Which folding steps `normalize` applies. Every flag defaults to on except
/// `case_fold`, which only the similarity functions switch on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct NormalizationProfile {
    /// NFC plus folding of ellipsis and space variants.
    pub unicode_form: bool,
    pub quote_folding: bool,
    pub dash_folding: bool,
    pub whitespace_collapse: bool,
    pub list_number_strip: bool,
    pub case_fold: bool,
}

impl Default for NormalizationProfile {
    fn default() -> Self {
        NormalizationProfile {
            unicode_form: true,
            quote_folding: true,
            dash_folding: true,
            whitespace_collapse: true,
            list_number_strip: true,
            case_fold: false,
        }
    }
}

impl NormalizationProfile {
    pub const fn identity() -> Self {
        NormalizationProfile {
            unicode_form: false,
            quote_folding: false,
            dash_folding: false,
            whitespace_collapse: false,
            list_number_strip: false,
            case_fold: false,
        }
    }

    pub fn with_case_fold(mut self, on: bool) -> Self {
        self.case_fold = on;
        self
    }

    /// Short stable description, recorded in report provenance.
    pub fn describe(&self) -> String {
        let flags = [
            ("nfc", self.unicode_form),
            ("quotes", self.quote_folding),
            ("dashes", self.dash_folding),
            ("whitespace", self.whitespace_collapse),
            ("list-numbers", self.list_number_strip),
            ("casefold", self.case_fold),
        ];
        flags
            .iter()
            .map(|(n, on)| format!("{n}={}", if *on { "on" } else { "off" }))
            .collect::<Vec<_>>()
            .join(",")
    }
}

fn fold_unicode_char(c: char, out: &mut String) -> bool {
    match c {
        '\u{2026}' => out.push_str("..."),
        '\u{00A0}' | '\u{2007}' | '\u{202F}' | '\u{2000}'..='\u{200A}' | '\u{3000}' => out.push(' '),
        '\u{200B}' | '\u{2060}' | '\u{FEFF}' => {}
        _ => return false,
    }
    true
}

fn fold_quote(c: char) -> Option<char> {
    match c {
        '\u{2018}' | '\u{2019}' | '\u{201A}' | '\u{201B}' | '\u{2039}' | '\u{203A}' | '\u{2032}' => Some('\''),
        '\u{201C}' | '\u{201D}' | '\u{201E}' | '\u{201F}' | '\u{00AB}' | '\u{00BB}' | '\u{2033}' => Some('"'),
        _ => None,
    }
}

fn fold_dash(c: char) -> Option<char> {
    match c {
        '\u{2010}'..='\u{2015}' | '\u{2212}' => Some('-'),
        _ => None,
    }
}

/// Applies the profile. Idempotent for every profile; identity when all flags
/// are off.
pub fn normalize(text: &str, profile: &NormalizationProfile) -> String {
    let mut s: String = if profile.unicode_form {
        text.nfc().collect()
    } else {
        text.to_string()
    };

    if profile.unicode_form || profile.quote_folding || profile.dash_folding {
        let mut out = String::with_capacity(s.len());
        for c in s.chars() {
            if profile.unicode_form && fold_unicode_char(c, &mut out) {
                continue;
            }
            if profile.quote_folding {
                if let Some(q) = fold_quote(c) {
                    out.push(q);
                    continue;
                }
            }
            if profile.dash_folding {
                if let Some(d) = fold_dash(c) {
                    out.push(d);
                    continue;
                }
            }
            out.push(c);
        }
        s = out;
    }

    if profile.list_number_strip {
        s = strip_list_numbers(&s);
    }
    if profile.whitespace_collapse {
        s = collapse_whitespace(&s);
    }
    if profile.case_fold {
        s = s.to_lowercase();
    }
    if profile.unicode_form {
        s = s.nfc().collect();
    }
    s
}

/// Collapses runs of whitespace into single ASCII spaces and trims the ends.
pub fn collapse_whitespace(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for word in text.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

/// Length in bytes of a list marker (`(12)`, `12.`, `12)`) at the start of
/// `s`, including the whitespace that must follow it.
fn list_marker_len(s: &str) -> Option<usize> {
    let bytes = s.as_bytes();
    let mut i = 0;
    let parenthesized = bytes.first() == Some(&b'(');
    if parenthesized {
        i += 1;
    }
    let digits_start = i;
    while i < bytes.len() && bytes[i].is_ascii_digit() {
        i += 1;
    }
    if i == digits_start {
        return None;
    }
    match (parenthesized, bytes.get(i)) {
        (true, Some(b')')) | (false, Some(b'.')) | (false, Some(b')')) => i += 1,
        _ => return None,
    }
    let rest = &s[i..];
    let ws: usize = rest
        .chars()
        .take_while(|c| c.is_whitespace())
        .map(char::len_utf8)
        .sum();
    if ws == 0 {
        return None;
    }
    Some(i + ws)
}

/// Removes list markers at line starts and sentence starts. Interior numerals
/// are left alone.
pub fn strip_list_numbers(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    // at a line start (possibly after indentation) or after `[.!?]` + space
    let mut at_boundary = true;
    while !rest.is_empty() {
        if at_boundary {
            while let Some(n) = list_marker_len(rest) {
                rest = &rest[n..];
            }
            if rest.is_empty() {
                break;
            }
        }
        let c = rest.chars().next().unwrap();
        rest = &rest[c.len_utf8()..];
        out.push(c);
        at_boundary = if c == '\n' {
            true
        } else if c.is_whitespace() {
            let trimmed = out.trim_end_matches(|x: char| x.is_whitespace() && x != '\n');
            trimmed.is_empty()
                || trimmed.ends_with('\n')
                || trimmed.ends_with(['.', '!', '?'])
        } else {
            false
        };
    }
    out
}

/// Set of word n-grams of a fixed order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NgramSet {
    pub n: usize,
    pub grams: BTreeSet<Vec<String>>,
}

impl NgramSet {
    pub fn from_tokens(tokens: &[&str], n: usize) -> Self {
        assert!(n >= 1, "n-gram order must be positive");
        let grams = if tokens.len() < n {
            BTreeSet::new()
        } else {
            tokens
                .windows(n)
                .map(|w| w.iter().map(|t| t.to_string()).collect())
                .collect()
        };
        NgramSet { n, grams }
    }

    pub fn len(&self) -> usize {
        self.grams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grams.is_empty()
    }

    /// Intersection over union; 1.0 when both are empty, 0.0 when only one is.
    pub fn jaccard(&self, other: &NgramSet) -> f64 {
        match (self.is_empty(), other.is_empty()) {
            (true, true) => return 1.0,
            (true, false) | (false, true) => return 0.0,
            _ => {}
        }
        let (small, large) = if self.len() <= other.len() {
            (self, other)
        } else {
            (other, self)
        };
        let inter = small.grams.iter().filter(|g| large.grams.contains(*g)).count();
        let union = self.len() + other.len() - inter;
        inter as f64 / union as f64
    }

    /// Upper bound on the Jaccard similarity from set sizes alone.
    pub fn jaccard_upper_bound(&self, other: &NgramSet) -> f64 {
        let (a, b) = (self.len(), other.len());
        match (a, b) {
            (0, 0) => 1.0,
            (0, _) | (_, 0) => 0.0,
            _ => a.min(b) as f64 / a.max(b) as f64,
        }
    }
}

/// Word n-grams of `text` after normalization under `profile`.
pub fn word_ngrams_with(text: &str, n: usize, profile: &NormalizationProfile) -> NgramSet {
    let norm = normalize(text, profile);
    let tokens: Vec<&str> = norm.split_whitespace().collect();
    NgramSet::from_tokens(&tokens, n)
}

/// Similarity profile: the default folding plus case folding.
pub fn similarity_profile() -> NormalizationProfile {
    NormalizationProfile::default().with_case_fold(true)
}

/// Word n-grams over normalized, case-folded, whitespace-tokenized text.
pub fn word_ngrams(text: &str, n: usize) -> NgramSet {
    word_ngrams_with(text, n, &similarity_profile())
}

pub fn jaccard_with(a: &str, b: &str, n: usize, profile: &NormalizationProfile) -> f64 {
    word_ngrams_with(a, n, profile).jaccard(&word_ngrams_with(b, n, profile))
}

pub fn jaccard(a: &str, b: &str, n: usize) -> f64 {
    jaccard_with(a, b, n, &similarity_profile())
}
