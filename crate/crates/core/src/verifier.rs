//! Grounds aligned extractions in the translator's own documents.
//!
//! Each non-null extraction goes through a cascade of increasingly tolerant
//! matches: verbatim, normalized, expanded (ellipsis reconstruction) and
//! cross-reference. Anything left over is suspicious.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{AlignedCorpus, DocumentStore, SegmentId, TranslatorId};
use crate::normalize::{normalize, NormalizationProfile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerificationCategory {
    Verbatim,
    Normalized,
    Expanded,
    CrossReference,
    Suspicious,
    NotApplicable,
}

impl VerificationCategory {
    /// Categories reported for non-null extractions, in cascade order.
    pub const REPORTED: [VerificationCategory; 5] = [
        VerificationCategory::Verbatim,
        VerificationCategory::Normalized,
        VerificationCategory::Expanded,
        VerificationCategory::CrossReference,
        VerificationCategory::Suspicious,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            VerificationCategory::Verbatim => "verbatim",
            VerificationCategory::Normalized => "normalized",
            VerificationCategory::Expanded => "expanded",
            VerificationCategory::CrossReference => "cross_reference",
            VerificationCategory::Suspicious => "suspicious",
            VerificationCategory::NotApplicable => "not_applicable",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            VerificationCategory::Verbatim => "Verbatim",
            VerificationCategory::Normalized => "Normalized",
            VerificationCategory::Expanded => "Expanded",
            VerificationCategory::CrossReference => "Cross-reference",
            VerificationCategory::Suspicious => "Suspicious",
            VerificationCategory::NotApplicable => "Not applicable",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            VerificationCategory::Verbatim => "Exact match in source",
            VerificationCategory::Normalized => "Match after text normalization",
            VerificationCategory::Expanded => "Ellipsis expanded from an earlier segment",
            VerificationCategory::CrossReference => "Found in a referenced document",
            VerificationCategory::Suspicious => "Not located; excluded downstream",
            VerificationCategory::NotApplicable => "Null extraction",
        }
    }

    /// Whether later segments may use this extraction as a template.
    pub fn is_grounded(self) -> bool {
        !matches!(self, VerificationCategory::Suspicious | VerificationCategory::NotApplicable)
    }
}

/// Byte offsets `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

/// Where a match was found. Spans of normalized matches index the
/// normalized text, not the raw document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Evidence {
    Span(Span),
    Template { segment: SegmentId, marker: Span },
    CrossReference { doc: String, span: Span },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationRecord {
    pub segment: SegmentId,
    pub translator: TranslatorId,
    pub category: VerificationCategory,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evidence: Option<Evidence>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Verification {
    pub category: VerificationCategory,
    pub evidence: Option<Evidence>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifierConfig {
    pub profile: NormalizationProfile,
    /// Minimum characters of the extraction that must match before the marker.
    pub head_chars: usize,
    /// Minimum characters that must match after the marker.
    pub tail_chars: usize,
    pub ellipsis_markers: Vec<String>,
    /// One capture group for letters and one for the number, e.g. `MN 10`.
    pub reference_pattern: String,
}

impl Default for VerifierConfig {
    fn default() -> Self {
        VerifierConfig {
            profile: NormalizationProfile::default(),
            head_chars: 15,
            tail_chars: 15,
            ellipsis_markers: ["...", "…", "—pe—", "[pe]", "(pe)", "…pe…", "...pe..."]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            reference_pattern: r"(?i)\b(?:as in|see|cf\.)\s+([a-z]+)\s?(\d+(?:\.\d+)*)".into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("no source document for translator {translator}, doc {doc}")]
    MissingSourceDocument { translator: TranslatorId, doc: String },
    #[error("invalid reference pattern: {0}")]
    Pattern(#[from] regex::Error),
}

/// Per-document precomputation shared by every segment of that document.
pub struct DocContext<'a> {
    raw: &'a str,
    normalized: String,
    /// Normalized marker occurrences.
    markers: Vec<Span>,
    /// Referenced document ids, in order of first appearance.
    references: Vec<String>,
}

fn find_all(hay: &str, needle: &str) -> Vec<usize> {
    if needle.is_empty() {
        return Vec::new();
    }
    hay.match_indices(needle).map(|(i, _)| i).collect()
}

impl<'a> DocContext<'a> {
    pub fn new(raw: &'a str, config: &VerifierConfig, reference: &Regex) -> Self {
        let normalized = normalize(raw, &config.profile);
        let mut markers: Vec<Span> = Vec::new();
        for m in &config.ellipsis_markers {
            let nm = normalize(m, &config.profile);
            for start in find_all(&normalized, &nm) {
                markers.push(Span { start, end: start + nm.len() });
            }
        }
        markers.sort_by_key(|s| (s.start, s.end));
        markers.dedup();
        let mut references = Vec::new();
        for cap in reference.captures_iter(raw) {
            let id = format!("{}{}", cap[1].to_lowercase(), &cap[2]);
            if !references.contains(&id) {
                references.push(id);
            }
        }
        DocContext { raw, normalized, markers, references }
    }
}

fn char_len(s: &str) -> usize {
    s.chars().count()
}

/// Prefix lengths (bytes) of `e` that are suffixes of `left`, longest first,
/// with at least `min_chars` characters.
fn head_candidates(e: &str, left: &str, min_chars: usize) -> Vec<usize> {
    let mut out: Vec<usize> = e
        .char_indices()
        .map(|(i, _)| i)
        .chain(std::iter::once(e.len()))
        .filter(|&k| left.ends_with(&e[..k]) && char_len(&e[..k]) >= min_chars)
        .collect();
    out.reverse();
    out
}

/// Suffix lengths (bytes) of `e` that are prefixes of `right`, longest first.
fn tail_candidates(e: &str, right: &str, min_chars: usize) -> Vec<usize> {
    let mut out: Vec<usize> = e
        .char_indices()
        .map(|(i, _)| e.len() - i)
        .chain(std::iter::once(0))
        .filter(|&t| right.starts_with(&e[e.len() - t..]) && char_len(&e[e.len() - t..]) >= min_chars)
        .collect();
    out.sort_unstable_by(|a, b| b.cmp(a));
    out
}

/// Stage 3. The extraction must read `H + M + T` where `H` ends the document
/// text before some ellipsis marker, `T` begins the text after it, and the
/// elided middle `M` appears in an earlier grounded extraction. `H` and `T`
/// must be at least `head_chars`/`tail_chars` long, or the whole text on
/// that side of the marker when that is shorter.
fn match_expanded(
    extracted_norm: &str,
    ctx: &DocContext,
    prior_norm: &[(SegmentId, String)],
    config: &VerifierConfig,
) -> Option<Evidence> {
    let e = extracted_norm.trim();
    if e.is_empty() {
        return None;
    }
    for marker in &ctx.markers {
        let left = ctx.normalized[..marker.start].trim_end();
        let right = ctx.normalized[marker.end..].trim_start();
        let heads = head_candidates(e, left, config.head_chars.min(char_len(left)));
        if heads.is_empty() {
            continue;
        }
        let tails = tail_candidates(e, right, config.tail_chars.min(char_len(right)));
        for &k in &heads {
            for &t in &tails {
                if k + t > e.len() {
                    continue;
                }
                let middle = e[k..e.len() - t].trim();
                if middle.is_empty() {
                    continue;
                }
                // nearest preceding template wins
                if let Some((id, _)) = prior_norm.iter().rev().find(|(_, text)| text.contains(middle)) {
                    return Some(Evidence::Template { segment: id.clone(), marker: *marker });
                }
            }
        }
    }
    None
}

fn classify(
    extracted: &str,
    ctx: &DocContext,
    prior_norm: &[(SegmentId, String)],
    xref_docs: &BTreeMap<String, String>,
    config: &VerifierConfig,
) -> Verification {
    let found = |category, evidence| Verification { category, evidence: Some(evidence) };
    if let Some(start) = ctx.raw.find(extracted) {
        return found(VerificationCategory::Verbatim, Evidence::Span(Span { start, end: start + extracted.len() }));
    }
    let norm = normalize(extracted, &config.profile);
    if let Some(start) = ctx.normalized.find(norm.as_str()) {
        return found(VerificationCategory::Normalized, Evidence::Span(Span { start, end: start + norm.len() }));
    }
    if let Some(ev) = match_expanded(&norm, ctx, prior_norm, config) {
        return found(VerificationCategory::Expanded, ev);
    }
    if !norm.trim().is_empty() {
        for doc in &ctx.references {
            if let Some(text) = xref_docs.get(doc) {
                let nt = normalize(text, &config.profile);
                if let Some(start) = nt.find(norm.as_str()) {
                    return found(
                        VerificationCategory::CrossReference,
                        Evidence::CrossReference { doc: doc.clone(), span: Span { start, end: start + norm.len() } },
                    );
                }
            }
        }
    }
    Verification { category: VerificationCategory::Suspicious, evidence: None }
}

/// Classifies one extraction. `prior_verified` holds earlier grounded
/// extractions of the same translator and document, in segment order.
pub fn verify_segment(
    extracted: &str,
    source_doc: &str,
    prior_verified: &[(SegmentId, String)],
    xref_docs: &BTreeMap<String, String>,
    config: &VerifierConfig,
) -> Result<Verification, VerifyError> {
    let re = Regex::new(&config.reference_pattern)?;
    let ctx = DocContext::new(source_doc, config, &re);
    let prior: Vec<(SegmentId, String)> = prior_verified
        .iter()
        .map(|(id, t)| (id.clone(), normalize(t, &config.profile)))
        .collect();
    Ok(classify(extracted, &ctx, &prior, xref_docs, config))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranslatorStats {
    pub translator: TranslatorId,
    pub counts: BTreeMap<VerificationCategory, usize>,
    pub non_null: usize,
    pub null: usize,
}

impl TranslatorStats {
    pub fn count(&self, c: VerificationCategory) -> usize {
        self.counts.get(&c).copied().unwrap_or(0)
    }

    /// Share of non-null segments, in percent.
    pub fn percent(&self, c: VerificationCategory) -> f64 {
        if self.non_null == 0 {
            0.0
        } else {
            100.0 * self.count(c) as f64 / self.non_null as f64
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationStats {
    pub translators: Vec<TranslatorStats>,
}

impl VerificationStats {
    pub fn from_records(records: &[VerificationRecord], translators: &[TranslatorId]) -> Self {
        let mut by: BTreeMap<&TranslatorId, TranslatorStats> = translators
            .iter()
            .map(|t| {
                let stats = TranslatorStats { translator: t.clone(), counts: BTreeMap::new(), non_null: 0, null: 0 };
                (t, stats)
            })
            .collect();
        for r in records {
            let Some(s) = by.get_mut(&r.translator) else { continue };
            *s.counts.entry(r.category).or_default() += 1;
            if r.category == VerificationCategory::NotApplicable {
                s.null += 1;
            } else {
                s.non_null += 1;
            }
        }
        VerificationStats { translators: translators.iter().map(|t| by.remove(t).unwrap()).collect() }
    }

    pub fn get(&self, t: &TranslatorId) -> Option<&TranslatorStats> {
        self.translators.iter().find(|s| &s.translator == t)
    }

    /// Machine-readable rows: category, one percentage per translator, description.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("category");
        for t in &self.translators {
            let _ = write!(out, "\t{}", t.translator);
        }
        out.push_str("\tdescription\n");
        for c in VerificationCategory::REPORTED {
            out.push_str(c.as_str());
            for t in &self.translators {
                let _ = write!(out, "\t{:.1}", t.percent(c));
            }
            let _ = writeln!(out, "\t{}", c.description());
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut rows = vec![{
            let mut h = vec!["Category".to_string()];
            h.extend(self.translators.iter().map(|t| t.translator.to_string()));
            h.push("Description".into());
            h
        }];
        for c in VerificationCategory::REPORTED {
            let mut r = vec![c.label().to_string()];
            r.extend(self.translators.iter().map(|t| format!("{:.1}%", t.percent(c))));
            r.push(c.description().into());
            rows.push(r);
        }
        render_table(&rows)
    }
}

/// Aligned plain-text table. The first column and the last column are left
/// aligned; everything in between is right aligned.
pub(crate) fn render_table(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, row) in rows.iter().enumerate() {
        let cells: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, s)| {
                let pad = widths[c] - s.chars().count();
                if c == 0 || c + 1 == cols {
                    format!("{s}{}", " ".repeat(pad))
                } else {
                    format!("{}{s}", " ".repeat(pad))
                }
            })
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
        if i == 0 {
            let total: usize = widths.iter().sum::<usize>() + 2 * cols.saturating_sub(1);
            out.push_str(&"-".repeat(total));
            out.push('\n');
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerificationOutput {
    /// Sorted by translator, then segment id.
    pub records: Vec<VerificationRecord>,
    pub stats: VerificationStats,
}

/// Verifies every aligned translator. Documents are processed in parallel;
/// within a document segments run in order so stage 3 sees earlier results.
pub fn verify_corpus(
    corpus: &AlignedCorpus,
    sources: &DocumentStore,
    xref_docs: &DocumentStore,
    config: &VerifierConfig,
) -> Result<VerificationOutput, VerifyError> {
    let re = Regex::new(&config.reference_pattern)?;
    let translators = corpus.aligned_translators();
    let mut jobs = Vec::new();
    for t in &translators {
        for doc in corpus.docs() {
            jobs.push((t.clone(), doc));
        }
    }
    let xrefs: BTreeMap<&TranslatorId, BTreeMap<String, String>> =
        translators.iter().map(|t| (t, xref_docs.translator_docs(t))).collect();

    let results: Result<Vec<Vec<VerificationRecord>>, VerifyError> = jobs
        .par_iter()
        .map(|(t, doc)| {
            let segments = corpus.doc_segments(doc);
            let needs_doc = segments.iter().any(|s| s.translation(t).is_some());
            let mut records = Vec::with_capacity(segments.len());
            if !needs_doc {
                for s in segments {
                    if s.translations.contains_key(t) {
                        records.push(not_applicable(&s.id, t));
                    }
                }
                return Ok(records);
            }
            let raw = sources.get(t, doc).ok_or_else(|| VerifyError::MissingSourceDocument {
                translator: t.clone(),
                doc: doc.clone(),
            })?;
            let ctx = DocContext::new(raw, config, &re);
            let mut prior: Vec<(SegmentId, String)> = Vec::new();
            for s in segments {
                match s.translations.get(t) {
                    None => {}
                    Some(None) => records.push(not_applicable(&s.id, t)),
                    Some(Some(text)) => {
                        let v = classify(text, &ctx, &prior, &xrefs[t], config);
                        if v.category.is_grounded() {
                            prior.push((s.id.clone(), normalize(text, &config.profile)));
                        }
                        records.push(VerificationRecord {
                            segment: s.id.clone(),
                            translator: t.clone(),
                            category: v.category,
                            evidence: v.evidence,
                        });
                    }
                }
            }
            Ok(records)
        })
        .collect();
    let records: Vec<VerificationRecord> = results?.into_iter().flatten().collect();
    let stats = VerificationStats::from_records(&records, &translators);
    Ok(VerificationOutput { records, stats })
}

fn not_applicable(id: &SegmentId, t: &TranslatorId) -> VerificationRecord {
    VerificationRecord {
        segment: id.clone(),
        translator: t.clone(),
        category: VerificationCategory::NotApplicable,
        evidence: None,
    }
}

/// One JSON object per line.
pub fn records_to_jsonl(records: &[VerificationRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn records_from_jsonl(text: &str) -> Result<Vec<VerificationRecord>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}
