//! LLM-assisted extraction of per-segment text from continuous translations.
//!
//! For each document, unaligned segments are sent in batches together with
//! the full target-translator document. The model answers with one text (or
//! null) per segment id, validated strictly against the batch keys.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::client::{ChatClient, ChatMessage, ChatRequest, ClientError, RetryPolicy};
use crate::corpus::{AlignedCorpus, CorpusError, DocumentStore, SegmentId, TranslatorId, TranslatorRole};
use crate::structured::{parse_keyed_response, ResponseError};

/// Alignment system prompt, version 1.
pub const ALIGNMENT_PROMPT_V1: &str = include_str!("../assets/alignment_prompt_v1.txt");
pub const ALIGNMENT_PROMPT_VERSION: &str = "align-v1";

/// Hard upper bound on items per batch.
pub const MAX_BATCH_ITEMS: usize = 30;

#[derive(Debug, Error)]
pub enum AlignError {
    #[error("batch for {doc} has {size} items; allowed 1..={max}")]
    BatchSize { doc: String, size: usize, max: usize },
    #[error("batch item {id} does not belong to document {doc}")]
    ForeignItem { doc: String, id: SegmentId },
    #[error("request for {doc} is {chars} characters, over the {budget} budget")]
    OversizeRequest { doc: String, chars: usize, budget: usize },
    #[error("prompt template is missing the alignment system prompt")]
    BadTemplate,
    #[error("{0}")]
    Response(#[from] ResponseError),
    #[error("no target document for translator {translator}, doc {doc}")]
    MissingTargetDocument { translator: TranslatorId, doc: String },
    #[error("client error while aligning {doc} batch {batch}: {source}")]
    Client {
        doc: String,
        batch: usize,
        #[source]
        source: ClientError,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignmentItem {
    pub id: SegmentId,
    pub source: String,
    pub anchor: String,
}

/// Up to `MAX_BATCH_ITEMS` segments of one document plus the full target text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignmentBatch {
    doc: String,
    items: Vec<AlignmentItem>,
    target_document: String,
}

impl AlignmentBatch {
    pub fn new(
        doc: &str,
        items: Vec<AlignmentItem>,
        target_document: impl Into<String>,
        max_items: usize,
    ) -> Result<Self, AlignError> {
        let max = max_items.min(MAX_BATCH_ITEMS);
        if items.is_empty() || items.len() > max {
            return Err(AlignError::BatchSize {
                doc: doc.to_string(),
                size: items.len(),
                max,
            });
        }
        if let Some(item) = items.iter().find(|i| i.id.doc() != doc) {
            return Err(AlignError::ForeignItem {
                doc: doc.to_string(),
                id: item.id.clone(),
            });
        }
        Ok(AlignmentBatch {
            doc: doc.to_string(),
            items,
            target_document: target_document.into(),
        })
    }

    pub fn doc(&self) -> &str {
        &self.doc
    }

    pub fn items(&self) -> &[AlignmentItem] {
        &self.items
    }

    pub fn ids(&self) -> Vec<String> {
        self.items.iter().map(|i| i.id.raw()).collect()
    }
}

/// System prompt plus the names used to label the payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub system: String,
    pub version: String,
    pub anchor_name: String,
    pub target_name: String,
}

impl PromptTemplate {
    pub fn v1(anchor: &TranslatorId, target: &TranslatorId) -> Self {
        PromptTemplate {
            system: ALIGNMENT_PROMPT_V1.to_string(),
            version: ALIGNMENT_PROMPT_VERSION.to_string(),
            anchor_name: anchor.as_str().to_string(),
            target_name: target.as_str().to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlignerConfig {
    pub model: String,
    /// Segments per batch.
    pub batch_size: usize,
    /// Character budget for one request.
    pub max_request_chars: usize,
    pub temperature: Option<f32>,
    /// Batches in flight at once.
    pub max_in_flight: usize,
    pub retry: RetryPolicy,
}

impl Default for AlignerConfig {
    fn default() -> Self {
        AlignerConfig {
            model: "openai/gpt-5-mini".into(),
            batch_size: 20,
            max_request_chars: 1_500_000,
            temperature: Some(0.0),
            max_in_flight: 4,
            retry: RetryPolicy::default(),
        }
    }
}

/// Builds the chat request for one batch.
///
/// Layout: system prompt, then a user message holding the full target
/// document (identical for every batch of a document, so providers can cache
/// the prefix), then a user message with the keyed segment object.
pub fn build_alignment_request(
    batch: &AlignmentBatch,
    template: &PromptTemplate,
    config: &AlignerConfig,
) -> Result<ChatRequest, AlignError> {
    if !template.system.contains("You are an alignment engine") {
        return Err(AlignError::BadTemplate);
    }
    let document_message = format!(
        "FULL English translation by {} (document {}):\n\n{}\n\n\
         Segments follow as a JSON object keyed by segment ID; each value holds the \
         Pāli text under \"source\" and {}'s translation under \"{}\".",
        template.target_name, batch.doc, batch.target_document, template.anchor_name, template.anchor_name
    );
    let mut segments = Map::new();
    for item in &batch.items {
        let mut fields = Map::new();
        fields.insert("source".into(), Value::String(item.source.clone()));
        fields.insert(template.anchor_name.clone(), Value::String(item.anchor.clone()));
        segments.insert(item.id.raw(), Value::Object(fields));
    }
    let request = ChatRequest {
        model: config.model.clone(),
        messages: vec![
            ChatMessage::system(template.system.clone()),
            ChatMessage::user(document_message),
            ChatMessage::user(Value::Object(segments).to_string()),
        ],
        temperature: config.temperature,
        response_format: None,
    };
    let chars = request.payload_chars();
    if chars > config.max_request_chars {
        return Err(AlignError::OversizeRequest {
            doc: batch.doc.clone(),
            chars,
            budget: config.max_request_chars,
        });
    }
    Ok(request)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignmentResult {
    pub entries: Vec<(SegmentId, Option<String>)>,
    pub raw_response: String,
    pub attempt_count: u32,
}

/// Strictly parses a model reply: exact keys, declared order, text or null.
pub fn parse_alignment_response(raw: &str, expected_ids: &[SegmentId]) -> Result<AlignmentResult, AlignError> {
    let expected: Vec<String> = expected_ids.iter().map(SegmentId::raw).collect();
    let parsed = parse_keyed_response(raw, &expected, true)?;
    Ok(AlignmentResult {
        entries: expected_ids
            .iter()
            .cloned()
            .zip(parsed.into_iter().map(|(_, v)| v))
            .collect(),
        raw_response: raw.to_string(),
        attempt_count: 1,
    })
}

/// Empty extractions become null unless the anchor itself is empty.
fn coerce_empty(result: &mut AlignmentResult, batch: &AlignmentBatch) {
    for ((_, value), item) in result.entries.iter_mut().zip(&batch.items) {
        if matches!(value.as_deref(), Some(t) if t.trim().is_empty()) && !item.anchor.trim().is_empty() {
            *value = None;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchFailure {
    pub doc: String,
    pub batch: usize,
    pub ids: Vec<String>,
    pub attempts: u32,
    pub reason: String,
}

/// Outcome of one batch, committed in batch order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchCommit {
    pub doc: String,
    pub batch: usize,
    pub entries: Vec<(SegmentId, Option<String>)>,
    pub attempts: u32,
    pub failure: Option<BatchFailure>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AlignmentReport {
    pub calls: usize,
    pub batches: usize,
    pub failures: Vec<BatchFailure>,
    /// Attempts used per batch, in commit order.
    pub attempts: Vec<u32>,
}

#[derive(Debug, Clone)]
pub struct AlignmentRun {
    pub corpus: AlignedCorpus,
    pub report: AlignmentReport,
}

fn run_batch<C: ChatClient + ?Sized>(
    index: usize,
    batch: &AlignmentBatch,
    template: &PromptTemplate,
    config: &AlignerConfig,
    client: &C,
) -> Result<(BatchCommit, usize), AlignError> {
    let request = build_alignment_request(batch, template, config)?;
    let ids: Vec<SegmentId> = batch.items.iter().map(|i| i.id.clone()).collect();
    let max_attempts = config.retry.max_attempts.max(1);
    let mut calls = 0;
    let mut last_reason = String::new();
    for attempt in 1..=max_attempts {
        if attempt > 1 {
            std::thread::sleep(config.retry.backoff(attempt - 1));
        }
        calls += 1;
        match client.complete(&request) {
            Ok(raw) => match parse_alignment_response(&raw, &ids) {
                Ok(mut result) => {
                    result.attempt_count = attempt;
                    coerce_empty(&mut result, batch);
                    let commit = BatchCommit {
                        doc: batch.doc.clone(),
                        batch: index,
                        entries: result.entries,
                        attempts: attempt,
                        failure: None,
                    };
                    return Ok((commit, calls));
                }
                Err(e) => last_reason = e.to_string(),
            },
            Err(ClientError::Transient(msg)) => last_reason = msg,
            Err(fatal) => {
                return Err(AlignError::Client {
                    doc: batch.doc.clone(),
                    batch: index,
                    source: fatal,
                })
            }
        }
        log::warn!("alignment {} batch {index} attempt {attempt} failed: {last_reason}", batch.doc);
    }
    let failure = BatchFailure {
        doc: batch.doc.clone(),
        batch: index,
        ids: batch.ids(),
        attempts: max_attempts,
        reason: last_reason,
    };
    log::error!("alignment {} batch {index} exhausted retries; segments set to null", batch.doc);
    let commit = BatchCommit {
        doc: batch.doc.clone(),
        batch: index,
        entries: ids.into_iter().map(|id| (id, None)).collect(),
        attempts: max_attempts,
        failure: Some(failure),
    };
    Ok((commit, calls))
}

/// Plans the batches for segments of `translator` that have no entry yet.
pub fn plan_batches(
    corpus: &AlignedCorpus,
    translator: &TranslatorId,
    docs: &DocumentStore,
    config: &AlignerConfig,
) -> Result<Vec<AlignmentBatch>, AlignError> {
    let anchor = corpus.anchor();
    let size = config.batch_size.clamp(1, MAX_BATCH_ITEMS);
    let mut batches = Vec::new();
    for doc in corpus.docs() {
        let pending: Vec<AlignmentItem> = corpus
            .doc_segments(&doc)
            .into_iter()
            .filter(|s| !s.translations.contains_key(translator))
            .map(|s| AlignmentItem {
                id: s.id.clone(),
                source: s.source.clone(),
                anchor: s.translation(anchor).unwrap_or_default().to_string(),
            })
            .collect();
        if pending.is_empty() {
            continue;
        }
        let target = docs
            .get(translator, &doc)
            .ok_or_else(|| AlignError::MissingTargetDocument {
                translator: translator.clone(),
                doc: doc.clone(),
            })?;
        for chunk in pending.chunks(size) {
            batches.push(AlignmentBatch::new(&doc, chunk.to_vec(), target, size)?);
        }
    }
    Ok(batches)
}

/// Aligns one translator, skipping segments that already have an entry.
pub fn align_translator<C: ChatClient + ?Sized>(
    corpus: &AlignedCorpus,
    translator: &TranslatorId,
    docs: &DocumentStore,
    client: &C,
    config: &AlignerConfig,
) -> Result<AlignmentRun, AlignError> {
    align_translator_with(corpus, translator, docs, client, config, &mut |_| Ok(()))
}

/// Like [`align_translator`], calling `on_commit` after each batch is applied
/// (in batch order) so callers can checkpoint progress.
pub fn align_translator_with<C: ChatClient + ?Sized>(
    corpus: &AlignedCorpus,
    translator: &TranslatorId,
    docs: &DocumentStore,
    client: &C,
    config: &AlignerConfig,
    on_commit: &mut dyn FnMut(&BatchCommit) -> Result<(), AlignError>,
) -> Result<AlignmentRun, AlignError> {
    if corpus.role_of(translator) == Some(TranslatorRole::SegmentationAnchor) {
        return Err(CorpusError::Invalid(format!("{translator} is the segmentation anchor")).into());
    }
    let mut out = corpus.clone();
    out.add_aligned_translator(translator)?;
    let template = PromptTemplate::v1(out.anchor(), translator);
    let batches = plan_batches(&out, translator, docs, config)?;
    let mut report = AlignmentReport {
        batches: batches.len(),
        ..Default::default()
    };

    let window = config.max_in_flight.max(1);
    let indexed: Vec<(usize, &AlignmentBatch)> = batches.iter().enumerate().collect();
    for group in indexed.chunks(window) {
        let results: Vec<Result<(BatchCommit, usize), AlignError>> = std::thread::scope(|scope| {
            let handles: Vec<_> = group
                .iter()
                .map(|(i, b)| {
                    let template = &template;
                    scope.spawn(move || run_batch(*i, b, template, config, client))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("alignment worker panicked"))
                .collect()
        });
        for result in results {
            let (commit, calls) = result?;
            report.calls += calls;
            report.attempts.push(commit.attempts);
            for (id, text) in &commit.entries {
                out.set_translation(id, translator, text.clone())?;
            }
            if let Some(f) = &commit.failure {
                report.failures.push(f.clone());
            }
            on_commit(&commit)?;
        }
    }
    out.provenance
        .insert(format!("align.{translator}.prompt"), template.version.clone());
    out.provenance
        .insert(format!("align.{translator}.model"), config.model.clone());
    Ok(AlignmentRun { corpus: out, report })
}

/// One checkpoint line: a committed extraction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointEntry {
    pub id: SegmentId,
    pub text: Option<String>,
}

/// Re-applies checkpointed extractions so a resumed run skips them.
pub fn apply_checkpoint(
    corpus: &mut AlignedCorpus,
    translator: &TranslatorId,
    entries: &[CheckpointEntry],
) -> Result<(), AlignError> {
    corpus.add_aligned_translator(translator)?;
    for e in entries {
        corpus.set_translation(&e.id, translator, e.text.clone())?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchRateRow {
    pub collection: String,
    pub segments: usize,
    pub matched: usize,
    pub percent: f64,
}

/// Non-null extraction rate per collection (leading letters of the document
/// name, e.g. `mn` for `mn2`) plus a final `Total` row.
pub fn match_rates(corpus: &AlignedCorpus, translator: &TranslatorId) -> Vec<MatchRateRow> {
    let mut by: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for seg in corpus.segments() {
        let coll: String = seg
            .id
            .doc()
            .chars()
            .take_while(|c| c.is_alphabetic())
            .collect::<String>()
            .to_uppercase();
        let e = by.entry(coll).or_default();
        e.0 += 1;
        if seg.translation(translator).is_some() {
            e.1 += 1;
        }
    }
    let total = by.values().fold((0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    let row = |collection: String, (segments, matched): (usize, usize)| MatchRateRow {
        collection,
        segments,
        matched,
        percent: if segments == 0 { 0.0 } else { 100.0 * matched as f64 / segments as f64 },
    };
    let mut rows: Vec<MatchRateRow> = by.into_iter().map(|(c, v)| row(c, v)).collect();
    rows.push(row("Total".into(), total));
    rows
}
