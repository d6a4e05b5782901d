//! Translation of benchmark passages by a candidate system.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::client::{ChatClient, ChatMessage, ChatRequest, ClientError, RetryPolicy};
use crate::corpus::{approx_token_count, PassageId};
use crate::digest::sha256_hex;
use crate::structured::{parse_keyed_response, repair_inner_quotes, strip_code_fence, ResponseError};

/// Translation system prompt, version 1.
pub const TRANSLATION_PROMPT_V1: &str = include_str!("../../assets/translation_prompt_v1.txt");
pub const TRANSLATION_PROMPT_VERSION: &str = "translate-v1";
pub const DEFAULT_TOKEN_BUDGET: usize = 3000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranslationBatch {
    pub items: Vec<(PassageId, String)>,
    pub token_budget: usize,
    /// Set when a single passage exceeds the budget on its own.
    pub oversize: bool,
}

impl TranslationBatch {
    pub fn tokens(&self) -> usize {
        self.items.iter().map(|(_, s)| approx_token_count(s)).sum()
    }

    pub fn ids(&self) -> Vec<String> {
        self.items.iter().map(|(id, _)| id.as_str().to_string()).collect()
    }
}

/// Greedy in-order packing by approximate token count. Passages are taken
/// in id order; a passage larger than the budget gets a batch of its own.
pub fn build_translation_batches(passages: &[(PassageId, String)], token_budget: usize) -> Vec<TranslationBatch> {
    let budget = token_budget.max(1);
    let mut sorted: Vec<&(PassageId, String)> = passages.iter().collect();
    sorted.sort_by(|a, b| a.0.cmp(&b.0));
    let mut out = Vec::new();
    let mut cur: Vec<(PassageId, String)> = Vec::new();
    let mut cur_tokens = 0;
    let flush = |cur: &mut Vec<(PassageId, String)>, out: &mut Vec<TranslationBatch>| {
        if !cur.is_empty() {
            out.push(TranslationBatch { items: std::mem::take(cur), token_budget: budget, oversize: false });
        }
    };
    for (id, text) in sorted {
        let t = approx_token_count(text);
        if t > budget {
            flush(&mut cur, &mut out);
            cur_tokens = 0;
            out.push(TranslationBatch { items: vec![(id.clone(), text.clone())], token_budget: budget, oversize: true });
            continue;
        }
        if cur_tokens + t > budget {
            flush(&mut cur, &mut out);
            cur_tokens = 0;
        }
        cur.push((id.clone(), text.clone()));
        cur_tokens += t;
    }
    flush(&mut cur, &mut out);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunnerConfig {
    pub token_budget: usize,
    pub temperature: Option<f32>,
    pub max_in_flight: usize,
    pub retry: RetryPolicy,
}

impl Default for RunnerConfig {
    fn default() -> Self {
        RunnerConfig {
            token_budget: DEFAULT_TOKEN_BUDGET,
            temperature: Some(0.0),
            max_in_flight: 4,
            retry: RetryPolicy::default(),
        }
    }
}

impl RunnerConfig {
    pub fn digest(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }
}

/// System prompt plus one user message holding `{passage id: source}`.
/// Nothing else goes into the request.
pub fn build_translation_request(batch: &TranslationBatch, model: &str, config: &RunnerConfig) -> ChatRequest {
    let mut items = Map::new();
    for (id, text) in &batch.items {
        items.insert(id.as_str().to_string(), Value::String(text.clone()));
    }
    ChatRequest {
        model: model.to_string(),
        messages: vec![
            ChatMessage::system(TRANSLATION_PROMPT_V1),
            ChatMessage::user(Value::Object(items).to_string()),
        ],
        temperature: config.temperature,
        response_format: None,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedTranslation {
    pub outputs: Vec<(String, String)>,
    /// Double quotes rewritten to single quotes inside values.
    pub quote_repairs: usize,
}

/// Strict same-keys parsing; on malformed JSON, one repair pass for double
/// quotes inside values.
pub fn parse_translation_response(raw: &str, expected: &[String]) -> Result<ParsedTranslation, ResponseError> {
    let into = |v: Vec<(String, Option<String>)>| v.into_iter().map(|(k, t)| (k, t.unwrap_or_default())).collect();
    match parse_keyed_response(raw, expected, false) {
        Ok(v) => Ok(ParsedTranslation { outputs: into(v), quote_repairs: 0 }),
        Err(ResponseError::Malformed(first)) => {
            let (fixed, n) = repair_inner_quotes(strip_code_fence(raw));
            if n == 0 {
                return Err(ResponseError::Malformed(first));
            }
            let v = parse_keyed_response(&fixed, expected, false)?;
            Ok(ParsedTranslation { outputs: into(v), quote_repairs: n })
        }
        Err(e) => Err(e),
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("client error for {system} batch {batch}: {source}")]
    Client {
        system: String,
        batch: usize,
        #[source]
        source: ClientError,
    },
    #[error("run file {path}: {message}")]
    File { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MissingPassage {
    pub passage: PassageId,
    pub batch: usize,
    pub attempts: u32,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub prompt_version: String,
    pub config_digest: String,
    pub token_budget: usize,
    pub batches: usize,
    pub calls: usize,
    pub attempts: Vec<u32>,
    pub quote_repairs: usize,
    pub started_unix: u64,
    pub finished_unix: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SystemRun {
    pub system: String,
    pub outputs: BTreeMap<PassageId, String>,
    pub missing: Vec<MissingPassage>,
    pub model: String,
    pub metadata: RunMetadata,
}

impl SystemRun {
    pub fn new(system: &str) -> Self {
        SystemRun { system: system.into(), model: String::new(), outputs: BTreeMap::new(), missing: Vec::new(), metadata: RunMetadata::default() }
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), RunError> {
        let text = serde_json::to_string_pretty(self).expect("run serializes");
        std::fs::write(path, text + "\n").map_err(|e| RunError::File { path: path.display().to_string(), message: e.to_string() })
    }

    pub fn load(path: &std::path::Path) -> Result<Self, RunError> {
        let err = |message: String| RunError::File { path: path.display().to_string(), message };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| err(e.to_string()))
    }
}

fn unix_now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

struct BatchOutcome {
    outputs: Vec<(String, String)>,
    missing: Vec<MissingPassage>,
    attempts: u32,
    calls: usize,
    repairs: usize,
}

fn run_batch<C: ChatClient + ?Sized>(
    system: &str,
    model: &str,
    index: usize,
    batch: &TranslationBatch,
    client: &C,
    config: &RunnerConfig,
) -> Result<BatchOutcome, RunError> {
    let request = build_translation_request(batch, model, config);
    let ids = batch.ids();
    let max = config.retry.max_attempts.max(1);
    let mut reason = String::new();
    for attempt in 1..=max {
        if attempt > 1 {
            std::thread::sleep(config.retry.backoff(attempt - 1));
        }
        match client.complete(&request) {
            Ok(raw) => match parse_translation_response(&raw, &ids) {
                Ok(p) => {
                    if p.quote_repairs > 0 {
                        log::warn!("{system} batch {index}: repaired {} inner double quotes", p.quote_repairs);
                    }
                    return Ok(BatchOutcome {
                        outputs: p.outputs,
                        missing: Vec::new(),
                        attempts: attempt,
                        calls: attempt as usize,
                        repairs: p.quote_repairs,
                    });
                }
                Err(e) => reason = e.to_string(),
            },
            Err(ClientError::Transient(m)) => reason = m,
            Err(fatal) => return Err(RunError::Client { system: system.into(), batch: index, source: fatal }),
        }
        log::warn!("{system} batch {index} attempt {attempt} failed: {reason}");
    }
    log::error!("{system} batch {index}: retries exhausted; {} passages missing", batch.items.len());
    Ok(BatchOutcome {
        outputs: Vec::new(),
        missing: batch
            .items
            .iter()
            .map(|(id, _)| MissingPassage { passage: id.clone(), batch: index, attempts: max, reason: reason.clone() })
            .collect(),
        attempts: max,
        calls: max as usize,
        repairs: 0,
    })
}

/// Translates every passage not already present in `previous`.
pub fn run_system<C: ChatClient + ?Sized>(
    system: &str,
    model: &str,
    passages: &[(PassageId, String)],
    client: &C,
    config: &RunnerConfig,
    previous: Option<&SystemRun>,
) -> Result<SystemRun, RunError> {
    let mut run = match previous {
        Some(p) => SystemRun { missing: Vec::new(), ..p.clone() },
        None => SystemRun::new(system),
    };
    let pending: Vec<(PassageId, String)> =
        passages.iter().filter(|(id, _)| !run.outputs.contains_key(id)).cloned().collect();
    let batches = build_translation_batches(&pending, config.token_budget);
    run.model = model.to_string();
    run.metadata.prompt_version = TRANSLATION_PROMPT_VERSION.into();
    run.metadata.config_digest = config.digest();
    run.metadata.token_budget = config.token_budget;
    run.metadata.batches = batches.len();
    run.metadata.calls = 0;
    run.metadata.attempts.clear();
    run.metadata.quote_repairs = 0;
    run.metadata.started_unix = unix_now();

    let indexed: Vec<(usize, &TranslationBatch)> = batches.iter().enumerate().collect();
    for group in indexed.chunks(config.max_in_flight.max(1)) {
        let results: Vec<Result<BatchOutcome, RunError>> = std::thread::scope(|scope| {
            let handles: Vec<_> = group
                .iter()
                .map(|(i, b)| scope.spawn(move || run_batch(system, model, *i, b, client, config)))
                .collect();
            handles.into_iter().map(|h| h.join().expect("translation worker panicked")).collect()
        });
        for r in results {
            let o = r?;
            run.metadata.calls += o.calls;
            run.metadata.attempts.push(o.attempts);
            run.metadata.quote_repairs += o.repairs;
            for (id, text) in o.outputs {
                run.outputs.insert(PassageId::parse(&id).expect("ids come from the batch"), text);
            }
            run.missing.extend(o.missing);
        }
    }
    run.metadata.finished_unix = unix_now();
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::client::{EchoClient, ScriptedClient};
    use proptest::prelude::*;

    fn pid(s: &str) -> PassageId {
        PassageId::parse(s).unwrap()
    }

    fn words(n: usize) -> String {
        vec!["w"; n].join(" ")
    }

    #[test]
    fn greedy_packing_examples() {
        let three: Vec<_> = (1..=3).map(|i| (pid(&format!("mn{i}:1")), words(1000))).collect();
        assert_eq!(build_translation_batches(&three, 3000).len(), 1);
        let two: Vec<_> = (1..=2).map(|i| (pid(&format!("mn{i}:1")), words(2000))).collect();
        assert_eq!(build_translation_batches(&two, 3000).len(), 2);
        let big = vec![(pid("mn1:1"), words(10)), (pid("mn2:1"), words(5000)), (pid("mn3:1"), words(10))];
        let b = build_translation_batches(&big, 3000);
        assert_eq!(b.len(), 3);
        assert!(b[1].oversize && !b[0].oversize && !b[2].oversize);
    }

    #[test]
    fn request_is_zero_shot() {
        let batch = TranslationBatch { items: vec![(pid("mn1:5"), "Pathavī".into())], token_budget: 3000, oversize: false };
        let req = build_translation_request(&batch, "m", &RunnerConfig::default());
        assert_eq!(req.messages.len(), 2);
        assert_eq!(req.messages[0].content, TRANSLATION_PROMPT_V1);
        assert_eq!(req.messages[1].content, r#"{"mn1:5":"Pathavī"}"#);
        assert!(TRANSLATION_PROMPT_V1.starts_with("Translate the following Pali passages into English.\n"));
    }

    #[test]
    fn parsing_repairs_quotes_and_strips_fences() {
        let ids = vec!["mn1:5".to_string()];
        let fenced = "```json\n{\"mn1:5\": \"They perceive earth as earth.\"}\n```";
        assert_eq!(parse_translation_response(fenced, &ids).unwrap().quote_repairs, 0);
        let quoted = r#"{"mn1:5": "He said "go" now."}"#;
        let p = parse_translation_response(quoted, &ids).unwrap();
        assert_eq!(p.outputs[0].1, "He said 'go' now.");
        assert_eq!(p.quote_repairs, 2);
        assert!(parse_translation_response(r#"{"mn1:5": null}"#, &ids).is_err());
    }

    #[test]
    fn echo_run_covers_everything_and_resumes() {
        let passages: Vec<_> = (1..=5).map(|i| (pid(&format!("mn{i}:1")), format!("source {i}"))).collect();
        let client = EchoClient::new();
        let config = RunnerConfig { token_budget: 4, ..Default::default() };
        let run = run_system("echo", "m", &passages, &client, &config, None).unwrap();
        assert_eq!(run.outputs.len(), 5);
        assert!(run.missing.is_empty());
        assert_eq!(run.outputs[&pid("mn3:1")], "source 3");
        let before = client.calls();
        let again = run_system("echo", "m", &passages, &client, &config, Some(&run)).unwrap();
        assert_eq!(client.calls(), before);
        assert_eq!(again.outputs, run.outputs);
    }

    #[test]
    fn omitted_key_retries_then_records_missing() {
        let passages = vec![(pid("mn1:1"), "a".to_string()), (pid("mn2:1"), "b".to_string())];
        let partial = r#"{"mn1:1": "A"}"#.to_string();
        let client = ScriptedClient::new([Ok(partial.clone()), Ok(partial.clone()), Ok(partial)]);
        let config = RunnerConfig { retry: RetryPolicy::immediate(3), ..Default::default() };
        let run = run_system("s", "m", &passages, &client, &config, None).unwrap();
        assert_eq!(client.calls(), 3);
        assert!(run.outputs.is_empty());
        assert_eq!(run.missing.len(), 2);
        assert!(run.missing[0].reason.contains("missing"));
    }

    #[test]
    fn fatal_errors_surface() {
        let passages = vec![(pid("mn1:1"), "a".to_string())];
        let client = ScriptedClient::new([Err(ClientError::Fatal("401".into()))]);
        assert!(matches!(
            run_system("s", "m", &passages, &client, &RunnerConfig::default(), None),
            Err(RunError::Client { batch: 0, .. })
        ));
    }

    proptest! {
        #[test]
        fn packing_is_a_budgeted_partition(lens in proptest::collection::vec(0usize..4000, 0..30), budget in 1usize..5000) {
            let passages: Vec<_> = lens.iter().enumerate().map(|(i, n)| (pid(&format!("d{i:03}:1")), words(*n))).collect();
            let batches = build_translation_batches(&passages, budget);
            let flat: Vec<PassageId> = batches.iter().flat_map(|b| b.items.iter().map(|(id, _)| id.clone())).collect();
            let mut expected: Vec<PassageId> = passages.iter().map(|(id, _)| id.clone()).collect();
            expected.sort();
            prop_assert_eq!(flat, expected);
            for b in &batches {
                prop_assert!(!b.items.is_empty());
                if b.oversize {
                    prop_assert_eq!(b.items.len(), 1);
                    prop_assert!(b.tokens() > budget);
                } else {
                    prop_assert!(b.tokens() <= budget);
                }
            }
        }
    }
}
