//! Passage-level filtering and near-duplicate removal.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{AlignedCorpus, Passage, PassageId, SegmentId, TranslatorId};
use crate::normalize::{normalize, similarity_profile, word_ngrams_with, NgramSet, NormalizationProfile};
use crate::verifier::{render_table, VerificationCategory, VerificationRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    IncompleteData,
    VerificationFailure,
    InsufficientLength,
    ExcessiveSimilarity,
    AnomalousLengthRatio,
    InternalDuplication,
}

impl Criterion {
    pub const ALL: [Criterion; 6] = [
        Criterion::IncompleteData,
        Criterion::VerificationFailure,
        Criterion::InsufficientLength,
        Criterion::ExcessiveSimilarity,
        Criterion::AnomalousLengthRatio,
        Criterion::InternalDuplication,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Criterion::IncompleteData => "incomplete_data",
            Criterion::VerificationFailure => "verification_failure",
            Criterion::InsufficientLength => "insufficient_length",
            Criterion::ExcessiveSimilarity => "excessive_similarity",
            Criterion::AnomalousLengthRatio => "anomalous_length_ratio",
            Criterion::InternalDuplication => "internal_duplication",
        }
    }

    fn label(self, t: &FilterThresholds) -> String {
        match self {
            Criterion::IncompleteData => "Incomplete data (null segments)".into(),
            Criterion::VerificationFailure => "Verification failure".into(),
            Criterion::InsufficientLength => format!("Insufficient length (<{} chars)", t.min_chars),
            Criterion::ExcessiveSimilarity => format!("Excessive similarity (>={}%)", fmt_pct(t.max_pair_jaccard)),
            Criterion::AnomalousLengthRatio => format!("Anomalous length ratio (>{:.1})", t.max_length_ratio),
            Criterion::InternalDuplication => "Internal segment duplication".into(),
        }
    }
}

fn fmt_pct(r: f64) -> String {
    let p = r * 100.0;
    if (p - p.round()).abs() < 1e-9 {
        format!("{}", p.round() as i64)
    } else {
        format!("{p:.1}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterThresholds {
    pub min_chars: usize,
    pub max_pair_jaccard: f64,
    pub max_length_ratio: f64,
    pub dedup_jaccard: f64,
    pub ngram_order: usize,
    /// Shortest normalized segment text that counts as a duplicate.
    pub min_dup_chars: usize,
}

impl Default for FilterThresholds {
    fn default() -> Self {
        FilterThresholds {
            min_chars: 100,
            max_pair_jaccard: 0.90,
            max_length_ratio: 2.0,
            dedup_jaccard: 0.85,
            ngram_order: 3,
            min_dup_chars: 25,
        }
    }
}

impl FilterThresholds {
    pub fn validate(&self) -> Result<(), CurationError> {
        let ratio = |name: &str, v: f64| {
            if v > 0.0 && v <= 1.0 {
                Ok(())
            } else {
                Err(CurationError::Thresholds(format!("{name} must be in (0, 1], got {v}")))
            }
        };
        ratio("max_pair_jaccard", self.max_pair_jaccard)?;
        ratio("dedup_jaccard", self.dedup_jaccard)?;
        if !(self.max_length_ratio >= 1.0) {
            return Err(CurationError::Thresholds(format!(
                "max_length_ratio must be >= 1, got {}",
                self.max_length_ratio
            )));
        }
        if self.ngram_order == 0 {
            return Err(CurationError::Thresholds("ngram_order must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum CurationError {
    #[error("no verification record for {translator} at {segment}")]
    MissingVerificationRecord { segment: SegmentId, translator: TranslatorId },
    #[error("invalid thresholds: {0}")]
    Thresholds(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterVerdict {
    pub passage: PassageId,
    pub violations: BTreeSet<Criterion>,
}

impl FilterVerdict {
    pub fn retained(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Verification categories keyed by (segment, translator).
pub type RecordIndex = HashMap<(SegmentId, TranslatorId), VerificationCategory>;

pub fn index_records(records: &[VerificationRecord]) -> RecordIndex {
    records
        .iter()
        .map(|r| ((r.segment.clone(), r.translator.clone()), r.category))
        .collect()
}

/// Which translators play which part in the filter.
#[derive(Debug, Clone)]
pub struct FilterContext {
    /// Every translator, anchor included; used for length and similarity.
    pub all: Vec<TranslatorId>,
    /// Extracted translators; used for nulls, verification and duplication.
    pub aligned: Vec<TranslatorId>,
}

impl FilterContext {
    pub fn from_corpus(corpus: &AlignedCorpus) -> Self {
        FilterContext {
            all: corpus.translator_names(),
            aligned: corpus.aligned_translators(),
        }
    }
}

fn has_internal_duplication(passage: &Passage, t: &TranslatorId, min_chars: usize) -> bool {
    let profile = NormalizationProfile::default();
    let texts: Vec<String> = passage
        .segments
        .iter()
        .filter_map(|s| s.translation(t))
        .map(|s| normalize(s, &profile))
        .filter(|s| s.chars().count() >= min_chars)
        .collect();
    for (i, a) in texts.iter().enumerate() {
        for b in &texts[i + 1..] {
            if a.contains(b.as_str()) || b.contains(a.as_str()) {
                return true;
            }
        }
    }
    false
}

pub fn filter_passage(
    passage: &Passage,
    ctx: &FilterContext,
    records: &RecordIndex,
    t: &FilterThresholds,
) -> Result<FilterVerdict, CurationError> {
    let mut v = BTreeSet::new();

    for seg in &passage.segments {
        for tr in &ctx.aligned {
            match seg.translation(tr) {
                None => {
                    v.insert(Criterion::IncompleteData);
                }
                Some(_) => match records.get(&(seg.id.clone(), tr.clone())) {
                    None => {
                        return Err(CurationError::MissingVerificationRecord {
                            segment: seg.id.clone(),
                            translator: tr.clone(),
                        })
                    }
                    Some(VerificationCategory::Suspicious) => {
                        v.insert(Criterion::VerificationFailure);
                    }
                    Some(_) => {}
                },
            }
        }
    }

    // a translator with a null segment is already reported as incomplete data
    let texts: Vec<String> = ctx
        .all
        .iter()
        .filter(|tr| passage.is_complete_for(tr))
        .map(|tr| passage.text_of(tr))
        .collect();
    let lengths: Vec<usize> = texts.iter().map(|s| s.chars().count()).collect();
    if lengths.iter().any(|&n| n < t.min_chars) {
        v.insert(Criterion::InsufficientLength);
    }

    let profile = similarity_profile();
    let grams: Vec<NgramSet> = texts.iter().map(|s| word_ngrams_with(s, t.ngram_order, &profile)).collect();
    'pairs: for i in 0..grams.len() {
        for j in i + 1..grams.len() {
            if grams[i].jaccard(&grams[j]) >= t.max_pair_jaccard {
                v.insert(Criterion::ExcessiveSimilarity);
                break 'pairs;
            }
        }
    }

    if let (Some(&max), Some(&min)) = (lengths.iter().max(), lengths.iter().min()) {
        if max > 0 && (min == 0 || max as f64 / min as f64 > t.max_length_ratio) {
            v.insert(Criterion::AnomalousLengthRatio);
        }
    }

    if ctx.aligned.iter().any(|tr| has_internal_duplication(passage, tr, t.min_dup_chars)) {
        v.insert(Criterion::InternalDuplication);
    }

    Ok(FilterVerdict { passage: passage.id.clone(), violations: v })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterOutcome {
    pub verdicts: Vec<FilterVerdict>,
    pub retained: Vec<PassageId>,
}

impl FilterOutcome {
    pub fn from_verdicts(mut verdicts: Vec<FilterVerdict>) -> Self {
        verdicts.sort_by(|a, b| a.passage.cmp(&b.passage));
        let retained = verdicts.iter().filter(|v| v.retained()).map(|v| v.passage.clone()).collect();
        FilterOutcome { verdicts, retained }
    }

    /// Non-exclusive tally per criterion.
    pub fn counts(&self) -> BTreeMap<Criterion, usize> {
        let mut c: BTreeMap<Criterion, usize> = Criterion::ALL.iter().map(|k| (*k, 0)).collect();
        for v in &self.verdicts {
            for k in &v.violations {
                *c.get_mut(k).unwrap() += 1;
            }
        }
        c
    }
}

pub fn filter_corpus(
    corpus: &AlignedCorpus,
    records: &[VerificationRecord],
    t: &FilterThresholds,
) -> Result<FilterOutcome, CurationError> {
    t.validate()?;
    let ctx = FilterContext::from_corpus(corpus);
    let index = index_records(records);
    let verdicts: Result<Vec<FilterVerdict>, CurationError> = corpus
        .passages
        .par_iter()
        .map(|p| filter_passage(p, &ctx, &index, t))
        .collect();
    Ok(FilterOutcome::from_verdicts(verdicts?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DedupRemoval {
    pub removed: PassageId,
    pub kept: PassageId,
    pub similarity: f64,
}

/// Greedy keep-first deduplication over normalized source text.
///
/// Passages are scanned in id order. A passage is dropped when its n-gram
/// Jaccard similarity to an already kept passage exceeds the threshold; the
/// removal cites the most similar kept passage (earliest on ties).
pub fn deduplicate(passages: &[(PassageId, String)], t: &FilterThresholds) -> (Vec<PassageId>, Vec<DedupRemoval>) {
    let mut sorted: Vec<&(PassageId, String)> = passages.iter().collect();
    sorted.sort_by(|a, b| a.0.cmp(&b.0));
    let profile = similarity_profile();
    let grams: Vec<NgramSet> = sorted
        .par_iter()
        .map(|(_, text)| word_ngrams_with(text, t.ngram_order, &profile))
        .collect();
    // For each passage, earlier passages above the threshold.
    let neighbours: Vec<Vec<(usize, f64)>> = (0..grams.len())
        .into_par_iter()
        .map(|i| {
            (0..i)
                .filter(|&j| grams[i].jaccard_upper_bound(&grams[j]) > t.dedup_jaccard)
                .filter_map(|j| {
                    let s = grams[i].jaccard(&grams[j]);
                    (s > t.dedup_jaccard).then_some((j, s))
                })
                .collect()
        })
        .collect();

    let mut kept = vec![false; sorted.len()];
    let mut finals = Vec::new();
    let mut removals = Vec::new();
    for i in 0..sorted.len() {
        let best = neighbours[i]
            .iter()
            .filter(|(j, _)| kept[*j])
            .fold(None::<(usize, f64)>, |acc, &(j, s)| match acc {
                Some((_, bs)) if bs >= s => acc,
                _ => Some((j, s)),
            });
        match best {
            Some((j, s)) => removals.push(DedupRemoval {
                removed: sorted[i].0.clone(),
                kept: sorted[j].0.clone(),
                similarity: s,
            }),
            None => {
                kept[i] = true;
                finals.push(sorted[i].0.clone());
            }
        }
    }
    (finals, removals)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurationReport {
    pub thresholds: FilterThresholds,
    pub similarity_profile: String,
    pub verification_rule: String,
    pub starting: usize,
    pub criterion_counts: BTreeMap<Criterion, usize>,
    pub verdicts: Vec<FilterVerdict>,
    pub retained_after_filter: Vec<PassageId>,
    pub removed_by_dedup: Vec<DedupRemoval>,
    pub final_passages: Vec<PassageId>,
}

/// Stage-3 matching rule, echoed into report provenance.
pub const EXPANSION_RULE: &str = "expanded = head(>=15 chars, suffix of text before marker) + middle(found in earlier grounded segment) + tail(>=15 chars, prefix of text after marker)";

impl CurationReport {
    pub fn assemble(outcome: FilterOutcome, source_texts: &BTreeMap<PassageId, String>, t: &FilterThresholds) -> Self {
        let counts = outcome.counts();
        let retained: Vec<(PassageId, String)> = outcome
            .retained
            .iter()
            .map(|id| (id.clone(), source_texts.get(id).cloned().unwrap_or_default()))
            .collect();
        let (final_passages, removed) = deduplicate(&retained, t);
        CurationReport {
            thresholds: t.clone(),
            similarity_profile: similarity_profile().describe(),
            verification_rule: EXPANSION_RULE.into(),
            starting: outcome.verdicts.len(),
            criterion_counts: counts,
            retained_after_filter: outcome.retained,
            verdicts: outcome.verdicts,
            removed_by_dedup: removed,
            final_passages,
        }
    }

    pub fn excluded(&self) -> usize {
        self.starting - self.retained_after_filter.len()
    }

    /// Criteria ordered by affected count, largest first.
    fn ordered_criteria(&self) -> Vec<(Criterion, usize)> {
        let mut v: Vec<(Criterion, usize)> = self.criterion_counts.iter().map(|(k, n)| (*k, *n)).collect();
        v.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        v
    }

    fn rows(&self) -> Vec<[String; 3]> {
        let dash = || "---".to_string();
        let mut rows = vec![["Starting corpus".into(), dash(), group(self.starting)]];
        for (c, n) in self.ordered_criteria() {
            rows.push([c.label(&self.thresholds), group(n), dash()]);
        }
        rows.push(["After filtering".into(), dash(), group(self.retained_after_filter.len())]);
        rows.push(["Near-duplicate source passages".into(), group(self.removed_by_dedup.len()), dash()]);
        rows.push(["Final benchmark dataset".into(), dash(), group(self.final_passages.len())]);
        rows
    }

    pub fn to_table(&self) -> String {
        let mut out = self.header_lines("");
        let mut rows = vec![vec![
            "Stage".to_string(),
            "Passages affected (non-exclusive)".into(),
            "Passages remaining".into(),
        ]];
        rows.extend(self.rows().into_iter().map(|r| r.to_vec()));
        out.push_str(&render_table(&rows));
        out
    }

    pub fn to_tsv(&self) -> String {
        let mut out = self.header_lines("# ");
        out.push_str("stage\taffected\tremaining\n");
        for [a, b, c] in self.rows() {
            let num = |s: &str| if s == "---" { String::new() } else { s.replace(',', "") };
            let _ = writeln!(out, "{a}\t{}\t{}", num(&b), num(&c));
        }
        out
    }

    fn header_lines(&self, prefix: &str) -> String {
        let t = &self.thresholds;
        format!(
            "{prefix}thresholds: min_chars={} max_pair_jaccard={} max_length_ratio={} dedup_jaccard={} ngram_order={} min_dup_chars={}\n\
             {prefix}similarity profile: {}\n{prefix}verification rule: {}\n",
            t.min_chars, t.max_pair_jaccard, t.max_length_ratio, t.dedup_jaccard, t.ngram_order, t.min_dup_chars,
            self.similarity_profile, self.verification_rule
        )
    }

    /// One JSON line per verdict plus one per dedup removal.
    pub fn rows_jsonl(&self) -> String {
        let mut out = String::new();
        for v in &self.verdicts {
            let line = serde_json::json!({"passage": v.passage, "violations": v.violations, "retained": v.retained()});
            let _ = writeln!(out, "{line}");
        }
        for r in &self.removed_by_dedup {
            let line = serde_json::json!({"passage": r.removed, "dedup_kept": r.kept, "similarity": r.similarity});
            let _ = writeln!(out, "{line}");
        }
        out
    }
}

fn group(n: usize) -> String {
    let s = n.to_string();
    let mut out = String::new();
    for (i, c) in s.chars().enumerate() {
        if i > 0 && (s.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(c);
    }
    out
}

/// Full curation: filter, deduplicate, and restrict the corpus to the final set.
pub fn curate(
    corpus: &AlignedCorpus,
    records: &[VerificationRecord],
    t: &FilterThresholds,
) -> Result<(AlignedCorpus, CurationReport), CurationError> {
    let outcome = filter_corpus(corpus, records, t)?;
    let sources: BTreeMap<PassageId, String> = corpus.passages.iter().map(|p| (p.id.clone(), p.source_text())).collect();
    let report = CurationReport::assemble(outcome, &sources, t);
    let keep: BTreeSet<PassageId> = report.final_passages.iter().cloned().collect();
    let mut out = corpus.restrict_to(&keep);
    out.provenance.insert("curation.thresholds".into(), serde_json::to_string(t).unwrap());
    out.provenance.insert("curation.similarity_profile".into(), report.similarity_profile.clone());
    out.provenance.insert("curation.verification_rule".into(), EXPANSION_RULE.into());
    Ok((out, report))
}
