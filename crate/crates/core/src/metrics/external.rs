//! Source-aware quality scores from an external model.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::client::classify_http_error;
use crate::corpus::TranslatorId;
use crate::digest::fields_digest;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreTriple {
    pub source: String,
    pub hypothesis: String,
    pub reference: String,
}

#[derive(Debug, Error)]
pub enum ScorerError {
    #[error("scorer unavailable: {0}")]
    Unavailable(String),
    #[error("scorer returned {got} scores for {expected} inputs")]
    CountMismatch { expected: usize, got: usize },
    #[error("score {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error("score cache {path}: {message}")]
    Cache { path: String, message: String },
}

pub trait ExternalScorer: Send + Sync {
    /// Stable identifier, part of every cache key.
    fn id(&self) -> &str;
    fn score(&self, batch: &[ScoreTriple]) -> Result<Vec<f64>, ScorerError>;
}

impl<S: ExternalScorer + ?Sized> ExternalScorer for &S {
    fn id(&self) -> &str {
        (**self).id()
    }
    fn score(&self, batch: &[ScoreTriple]) -> Result<Vec<f64>, ScorerError> {
        (**self).score(batch)
    }
}

impl<S: ExternalScorer + ?Sized> ExternalScorer for Box<S> {
    fn id(&self) -> &str {
        (**self).id()
    }
    fn score(&self, batch: &[ScoreTriple]) -> Result<Vec<f64>, ScorerError> {
        (**self).score(batch)
    }
}

fn check_scores(expected: usize, scores: Vec<f64>) -> Result<Vec<f64>, ScorerError> {
    if scores.len() != expected {
        return Err(ScorerError::CountMismatch { expected, got: scores.len() });
    }
    if let Some(bad) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(ScorerError::OutOfRange(*bad));
    }
    Ok(scores)
}

/// Same score for every input.
pub struct ConstantScorer {
    pub value: f64,
    id: String,
}

impl ConstantScorer {
    pub fn new(value: f64) -> Self {
        ConstantScorer { value, id: format!("constant:{value}") }
    }
}

impl ExternalScorer for ConstantScorer {
    fn id(&self) -> &str {
        &self.id
    }
    fn score(&self, batch: &[ScoreTriple]) -> Result<Vec<f64>, ScorerError> {
        check_scores(batch.len(), vec![self.value; batch.len()])
    }
}

/// Scores computed by a closure; counts calls.
pub struct FnScorer<F> {
    id: String,
    f: F,
    calls: AtomicUsize,
}

impl<F: Fn(&ScoreTriple) -> f64 + Send + Sync> FnScorer<F> {
    pub fn new(id: &str, f: F) -> Self {
        FnScorer { id: id.to_string(), f, calls: AtomicUsize::new(0) }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<F: Fn(&ScoreTriple) -> f64 + Send + Sync> ExternalScorer for FnScorer<F> {
    fn id(&self) -> &str {
        &self.id
    }
    fn score(&self, batch: &[ScoreTriple]) -> Result<Vec<f64>, ScorerError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        check_scores(batch.len(), batch.iter().map(&self.f).collect())
    }
}

/// Always fails, as an unreachable endpoint would.
pub struct UnavailableScorer;

impl ExternalScorer for UnavailableScorer {
    fn id(&self) -> &str {
        "unavailable"
    }
    fn score(&self, _: &[ScoreTriple]) -> Result<Vec<f64>, ScorerError> {
        Err(ScorerError::Unavailable("no scorer configured".into()))
    }
}

/// HTTP scorer: POST `{"model", "data": [{"src", "mt", "ref"}]}`, answer
/// `{"scores": [...]}`.
pub struct HttpScorer {
    id: String,
    endpoint: String,
    model: String,
    api_key: Option<String>,
    batch_size: usize,
    agent: ureq::Agent,
}

impl HttpScorer {
    pub fn new(endpoint: &str, model: &str, api_key: Option<String>, batch_size: usize, timeout: Duration) -> Self {
        HttpScorer {
            id: format!("http:{model}"),
            endpoint: endpoint.to_string(),
            model: model.to_string(),
            api_key,
            batch_size: batch_size.max(1),
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
        }
    }

    fn post(&self, chunk: &[ScoreTriple]) -> Result<Vec<f64>, ScorerError> {
        let data: Vec<Value> = chunk
            .iter()
            .map(|t| json!({"src": t.source, "mt": t.hypothesis, "ref": t.reference}))
            .collect();
        let mut req = self.agent.post(&self.endpoint);
        if let Some(k) = &self.api_key {
            req = req.set("Authorization", &format!("Bearer {k}"));
        }
        let resp = req
            .send_json(json!({"model": self.model, "data": data}))
            .map_err(|e| ScorerError::Unavailable(classify_http_error(e).to_string()))?;
        let body: Value = resp.into_json().map_err(|e| ScorerError::Unavailable(e.to_string()))?;
        let scores = body
            .get("scores")
            .and_then(Value::as_array)
            .ok_or_else(|| ScorerError::Unavailable("response has no scores array".into()))?
            .iter()
            .map(|v| v.as_f64().ok_or_else(|| ScorerError::Unavailable(format!("non-numeric score {v}"))))
            .collect::<Result<Vec<f64>, _>>()?;
        check_scores(chunk.len(), scores)
    }
}

impl ExternalScorer for HttpScorer {
    fn id(&self) -> &str {
        &self.id
    }
    fn score(&self, batch: &[ScoreTriple]) -> Result<Vec<f64>, ScorerError> {
        let mut out = Vec::with_capacity(batch.len());
        for chunk in batch.chunks(self.batch_size) {
            out.extend(self.post(chunk)?);
        }
        Ok(out)
    }
}

/// Digest-keyed scores, optionally persisted as `digest<TAB>score` lines.
#[derive(Debug, Default)]
pub struct ScoreCache {
    path: Option<PathBuf>,
    entries: Mutex<BTreeMap<String, f64>>,
}

pub fn score_key(scorer_id: &str, t: &ScoreTriple) -> String {
    fields_digest(&[scorer_id, &t.source, &t.hypothesis, &t.reference])
}

impl ScoreCache {
    pub fn in_memory() -> Self {
        ScoreCache::default()
    }

    /// Opens (or starts) a cache file.
    pub fn open(path: &Path) -> Result<Self, ScorerError> {
        let err = |message: String| ScorerError::Cache { path: path.display().to_string(), message };
        let mut entries = BTreeMap::new();
        if path.exists() {
            let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
            for (i, line) in text.lines().enumerate() {
                let (k, v) = line.split_once('\t').ok_or_else(|| err(format!("line {}: expected two fields", i + 1)))?;
                let v: f64 = v.parse().map_err(|_| err(format!("line {}: bad score", i + 1)))?;
                entries.insert(k.to_string(), v);
            }
        }
        Ok(ScoreCache { path: Some(path.to_path_buf()), entries: Mutex::new(entries) })
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.entries.lock().unwrap().get(key).copied()
    }

    pub fn insert(&self, key: String, v: f64) {
        self.entries.lock().unwrap().insert(key, v);
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn save(&self) -> Result<(), ScorerError> {
        let Some(path) = &self.path else { return Ok(()) };
        let mut text = String::new();
        for (k, v) in self.entries.lock().unwrap().iter() {
            text.push_str(&format!("{k}\t{v}\n"));
        }
        std::fs::write(path, text).map_err(|e| ScorerError::Cache { path: path.display().to_string(), message: e.to_string() })
    }
}

/// Serves repeated triples from the cache; only misses reach the scorer.
pub struct CachedScorer<'a, S> {
    inner: S,
    cache: &'a ScoreCache,
}

impl<'a, S: ExternalScorer> CachedScorer<'a, S> {
    pub fn new(inner: S, cache: &'a ScoreCache) -> Self {
        CachedScorer { inner, cache }
    }
}

impl<S: ExternalScorer> ExternalScorer for CachedScorer<'_, S> {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn score(&self, batch: &[ScoreTriple]) -> Result<Vec<f64>, ScorerError> {
        let keys: Vec<String> = batch.iter().map(|t| score_key(self.inner.id(), t)).collect();
        let mut out: Vec<Option<f64>> = keys.iter().map(|k| self.cache.get(k)).collect();
        let missing: Vec<usize> = (0..batch.len()).filter(|&i| out[i].is_none()).collect();
        if !missing.is_empty() {
            let todo: Vec<ScoreTriple> = missing.iter().map(|&i| batch[i].clone()).collect();
            let got = self.inner.score(&todo)?;
            for (&i, s) in missing.iter().zip(got) {
                self.cache.insert(keys[i].clone(), s);
                out[i] = Some(s);
            }
        }
        Ok(out.into_iter().map(Option::unwrap).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalScores {
    pub per_reference: BTreeMap<TranslatorId, f64>,
    pub avg: f64,
    pub best: f64,
}

impl ExternalScores {
    pub fn from_scores(per_reference: BTreeMap<TranslatorId, f64>) -> Option<Self> {
        if per_reference.is_empty() {
            return None;
        }
        let avg = per_reference.values().sum::<f64>() / per_reference.len() as f64;
        let best = per_reference.values().copied().fold(f64::NEG_INFINITY, f64::max);
        Some(ExternalScores { per_reference, avg, best })
    }
}

/// One score per reference, plus their mean and maximum.
pub fn external_quality_scores(
    source: &str,
    hypothesis: &str,
    refs: &BTreeMap<TranslatorId, String>,
    scorer: &dyn ExternalScorer,
) -> Result<ExternalScores, ScorerError> {
    let triples: Vec<ScoreTriple> = refs
        .values()
        .map(|r| ScoreTriple { source: source.into(), hypothesis: hypothesis.into(), reference: r.clone() })
        .collect();
    let scores = scorer.score(&triples)?;
    ExternalScores::from_scores(refs.keys().cloned().zip(scores).collect())
        .ok_or_else(|| ScorerError::Unavailable("no references to score against".into()))
}
