//! Embedding providers: a vector-store file and an HTTP embedding endpoint.
//!
//! Vectors are keyed by the SHA-256 of the exact text they embed.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use serde_json::{json, Value};

use super::{EmbeddingVector, MetricError};
use crate::client::classify_http_error;
use crate::digest::sha256_hex;

pub const VECTOR_STORE_HEADER: &str = "# multiref-vectors/1";

pub trait EmbeddingProvider: Send + Sync {
    fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, MetricError>;
}

pub fn text_key(text: &str) -> String {
    sha256_hex(text.as_bytes())
}

/// Text table of `id<TAB>dim<TAB>v1 v2 ...` lines under a header line.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VectorStore {
    dim: Option<usize>,
    vectors: BTreeMap<String, EmbeddingVector>,
}

impl VectorStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn insert(&mut self, key: String, v: EmbeddingVector) -> Result<(), MetricError> {
        match self.dim {
            Some(d) if d != v.dim() => return Err(MetricError::DimensionMismatch(d, v.dim())),
            _ => self.dim = Some(v.dim()),
        }
        self.vectors.insert(key, v);
        Ok(())
    }

    pub fn insert_text(&mut self, text: &str, v: EmbeddingVector) -> Result<(), MetricError> {
        self.insert(text_key(text), v)
    }

    pub fn get(&self, key: &str) -> Option<&EmbeddingVector> {
        self.vectors.get(key)
    }

    pub fn get_text(&self, text: &str) -> Option<&EmbeddingVector> {
        self.get(&text_key(text))
    }

    pub fn read<R: BufRead>(reader: R) -> Result<Self, MetricError> {
        let mut store = VectorStore::new();
        for (i, line) in reader.lines().enumerate() {
            let err = |message: String| MetricError::VectorStore { line: i + 1, message };
            let line = line.map_err(|e| err(e.to_string()))?;
            if i == 0 {
                if line.trim() != VECTOR_STORE_HEADER {
                    return Err(err(format!("expected header {VECTOR_STORE_HEADER:?}")));
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.splitn(3, '\t');
            let (Some(id), Some(dim), Some(values)) = (parts.next(), parts.next(), parts.next()) else {
                return Err(err("expected id, dim and values".into()));
            };
            let dim: usize = dim.parse().map_err(|_| err(format!("bad dim {dim:?}")))?;
            let values: Vec<f64> = values
                .split_whitespace()
                .map(|v| v.parse::<f64>().map_err(|_| err(format!("bad value {v:?}"))))
                .collect::<Result<_, _>>()?;
            if values.len() != dim {
                return Err(err(format!("declared dim {dim}, found {} values", values.len())));
            }
            let v = EmbeddingVector::new(values).map_err(|e| err(e.to_string()))?;
            store.insert(id.to_string(), v).map_err(|e| err(e.to_string()))?;
        }
        Ok(store)
    }

    pub fn write<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "{VECTOR_STORE_HEADER}")?;
        for (id, v) in &self.vectors {
            let values: Vec<String> = v.values().iter().map(|x| x.to_string()).collect();
            writeln!(out, "{id}\t{}\t{}", v.dim(), values.join(" "))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, MetricError> {
        let f = std::fs::File::open(path).map_err(|e| MetricError::Io { path: path.display().to_string(), source: e })?;
        Self::read(std::io::BufReader::new(f))
    }

    pub fn save(&self, path: &Path) -> Result<(), MetricError> {
        let io = |e| MetricError::Io { path: path.display().to_string(), source: e };
        let mut buf = Vec::new();
        self.write(&mut buf).map_err(io)?;
        std::fs::write(path, buf).map_err(io)
    }
}

impl EmbeddingProvider for VectorStore {
    fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, MetricError> {
        texts
            .iter()
            .map(|t| {
                self.get_text(t)
                    .cloned()
                    .ok_or_else(|| MetricError::MissingEmbedding(t.chars().take(60).collect()))
            })
            .collect()
    }
}

/// OpenAI-style `/embeddings` client with an in-memory vector cache.
pub struct HttpEmbeddingClient {
    endpoint: String,
    model: String,
    api_key: String,
    batch_size: usize,
    agent: ureq::Agent,
    cache: Mutex<VectorStore>,
}

impl HttpEmbeddingClient {
    pub fn new(endpoint: &str, model: &str, api_key: String, batch_size: usize, timeout: Duration) -> Self {
        HttpEmbeddingClient {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key,
            batch_size: batch_size.max(1),
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
            cache: Mutex::new(VectorStore::new()),
        }
    }

    /// Seeds the cache, e.g. from a previously saved store.
    pub fn with_cache(self, store: VectorStore) -> Self {
        *self.cache.lock().unwrap() = store;
        self
    }

    pub fn cache(&self) -> VectorStore {
        self.cache.lock().unwrap().clone()
    }

    fn fetch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, MetricError> {
        let resp = self
            .agent
            .post(&self.endpoint)
            .set("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(json!({"model": self.model, "input": texts}))
            .map_err(|e| MetricError::Provider(classify_http_error(e).to_string()))?;
        let body: Value = resp.into_json().map_err(|e| MetricError::Provider(e.to_string()))?;
        let data = body
            .get("data")
            .and_then(Value::as_array)
            .ok_or_else(|| MetricError::Provider("response has no data array".into()))?;
        let mut rows: Vec<(usize, EmbeddingVector)> = Vec::with_capacity(data.len());
        for (pos, item) in data.iter().enumerate() {
            let index = item.get("index").and_then(Value::as_u64).map(|i| i as usize).unwrap_or(pos);
            let values: Vec<f64> = serde_json::from_value(item.get("embedding").cloned().unwrap_or(Value::Null))
                .map_err(|e| MetricError::Provider(format!("bad embedding: {e}")))?;
            rows.push((index, EmbeddingVector::new(values)?));
        }
        rows.sort_by_key(|(i, _)| *i);
        if rows.len() != texts.len() || rows.iter().enumerate().any(|(i, (j, _))| i != *j) {
            return Err(MetricError::Provider(format!("expected {} embeddings, got {}", texts.len(), rows.len())));
        }
        Ok(rows.into_iter().map(|(_, v)| v).collect())
    }
}

impl EmbeddingProvider for HttpEmbeddingClient {
    fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, MetricError> {
        let missing: Vec<&str> = {
            let cache = self.cache.lock().unwrap();
            let mut seen = std::collections::BTreeSet::new();
            texts
                .iter()
                .copied()
                .filter(|t| cache.get_text(t).is_none() && seen.insert(*t))
                .collect()
        };
        for chunk in missing.chunks(self.batch_size) {
            let vectors = self.fetch(chunk)?;
            let mut cache = self.cache.lock().unwrap();
            for (t, v) in chunk.iter().zip(vectors) {
                cache.insert_text(t, v)?;
            }
        }
        self.cache.lock().unwrap().embed(texts)
    }
}
