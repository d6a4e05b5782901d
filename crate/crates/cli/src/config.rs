use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use multiref::aligner::AlignerConfig;
use multiref::bench::{EvalConfig, RunnerConfig};
use multiref::client::{ChatClient, EchoClient, HttpChatClient, LookupClient, ReplayClient, DEFAULT_API_KEY_ENV, DEFAULT_CHAT_ENDPOINT};
use multiref::corpus::{AlignedCorpus, TranslatorId};
use multiref::curation::FilterThresholds;
use multiref::metrics::embedding::{EmbeddingProvider, HttpEmbeddingClient, VectorStore};
use multiref::metrics::external::{ExternalScorer, HttpScorer};
use multiref::verifier::VerifierConfig;

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub align: AlignSection,
    pub verify: VerifierConfig,
    pub curation: FilterThresholds,
    pub translate: RunnerConfig,
    pub evaluate: EvalConfig,
    pub embeddings: EmbeddingSection,
    pub external: Option<ExternalSection>,
    pub systems: BTreeMap<String, SystemSection>,
    #[serde(skip)]
    pub base: PathBuf,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
pub struct AlignSection {
    #[serde(flatten)]
    pub aligner: AlignerConfig,
    #[serde(flatten)]
    pub provider: ProviderSection,
}

/// Where chat completions come from.
#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct ProviderSection {
    /// `http`, `lookup`, `replay` or `echo`.
    pub provider: String,
    pub endpoint: String,
    pub api_key_env: String,
    pub timeout_secs: u64,
    /// `lookup`: JSON of translator -> segment id -> text.
    pub lookup: Option<PathBuf>,
    /// `replay`: JSON of request digest -> response.
    pub replay: Option<PathBuf>,
}

impl Default for ProviderSection {
    fn default() -> Self {
        ProviderSection {
            provider: "http".into(),
            endpoint: DEFAULT_CHAT_ENDPOINT.into(),
            api_key_env: DEFAULT_API_KEY_ENV.into(),
            timeout_secs: 600,
            lookup: None,
            replay: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct EmbeddingSection {
    /// `file` or `http`.
    pub provider: String,
    pub path: Option<PathBuf>,
    pub endpoint: String,
    pub model: String,
    pub api_key_env: String,
    pub batch_size: usize,
    pub timeout_secs: u64,
}

impl Default for EmbeddingSection {
    fn default() -> Self {
        EmbeddingSection {
            provider: "file".into(),
            path: None,
            endpoint: "https://openrouter.ai/api/v1/embeddings".into(),
            model: "google/gemini-embedding-001".into(),
            api_key_env: DEFAULT_API_KEY_ENV.into(),
            batch_size: 64,
            timeout_secs: 120,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct ExternalSection {
    /// Column label in reports.
    pub label: String,
    pub endpoint: String,
    pub model: String,
    pub api_key_env: Option<String>,
    pub batch_size: usize,
    pub timeout_secs: u64,
    pub cache: Option<PathBuf>,
}

impl Default for ExternalSection {
    fn default() -> Self {
        ExternalSection {
            label: "ext".into(),
            endpoint: String::new(),
            model: String::new(),
            api_key_env: None,
            batch_size: 32,
            timeout_secs: 600,
            cache: None,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default)]
pub struct SystemSection {
    #[serde(flatten)]
    pub provider: ProviderSection,
    /// Model id sent to the provider; defaults to the system id.
    pub model: Option<String>,
    /// `reference` provider: translator whose passage text is returned.
    pub translator: Option<String>,
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Config> {
        let Some(path) = path else { return Ok(Config::default()) };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut config: Config = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        config.base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        config.curation.validate().map_err(|e| anyhow::anyhow!("invalid curation thresholds: {e}"))?;
        Ok(config)
    }

    /// Resolves a config-relative path.
    pub fn path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() { p.to_path_buf() } else { self.base.join(p) }
    }

    pub fn embeddings(&self) -> Result<Box<dyn EmbeddingProvider>> {
        let e = &self.embeddings;
        match e.provider.as_str() {
            "file" => {
                let path = e.path.as_ref().context("embeddings.path is required for the file provider")?;
                Ok(Box::new(VectorStore::load(&self.path(path))?))
            }
            "http" => {
                let key = std::env::var(&e.api_key_env).with_context(|| format!("environment variable {} is not set", e.api_key_env))?;
                let mut client =
                    HttpEmbeddingClient::new(&e.endpoint, &e.model, key, e.batch_size, Duration::from_secs(e.timeout_secs));
                if let Some(path) = &e.path {
                    let path = self.path(path);
                    if path.exists() {
                        client = client.with_cache(VectorStore::load(&path)?);
                    }
                }
                Ok(Box::new(client))
            }
            other => bail!("unknown embeddings provider {other:?}"),
        }
    }

    pub fn external(&self) -> Result<Option<(String, Box<dyn ExternalScorer>)>> {
        let Some(x) = &self.external else { return Ok(None) };
        let key = match &x.api_key_env {
            Some(var) => Some(std::env::var(var).with_context(|| format!("environment variable {var} is not set"))?),
            None => None,
        };
        let scorer = HttpScorer::new(&x.endpoint, &x.model, key, x.batch_size, Duration::from_secs(x.timeout_secs));
        Ok(Some((x.label.clone(), Box::new(scorer))))
    }

    pub fn chat_client(&self, p: &ProviderSection, lookup_scope: Option<&str>) -> Result<Box<dyn ChatClient>> {
        match p.provider.as_str() {
            "http" => Ok(Box::new(HttpChatClient::from_env(&p.endpoint, &p.api_key_env, Duration::from_secs(p.timeout_secs))?)),
            "echo" => Ok(Box::new(EchoClient::new())),
            "replay" => {
                let path = p.replay.as_ref().context("replay provider needs a replay file")?;
                Ok(Box::new(ReplayClient::load(&self.path(path))?))
            }
            "lookup" => {
                let path = p.lookup.as_ref().context("lookup provider needs a lookup file")?;
                let path = self.path(path);
                let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
                let all: BTreeMap<String, BTreeMap<String, Option<String>>> =
                    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
                let scope = lookup_scope.context("lookup provider needs a translator")?;
                let table: HashMap<String, Option<String>> = all.get(scope).cloned().unwrap_or_default().into_iter().collect();
                Ok(Box::new(LookupClient::new(table)))
            }
            other => bail!("unknown provider {other:?}"),
        }
    }

    pub fn system_client(&self, system: &str, corpus: &AlignedCorpus) -> Result<(String, Box<dyn ChatClient>)> {
        let s = self.systems.get(system).cloned().unwrap_or_default();
        let model = s.model.clone().unwrap_or_else(|| system.to_string());
        if s.provider.provider == "reference" {
            let t = TranslatorId::new(s.translator.as_deref().context("reference provider needs a translator")?);
            if corpus.role_of(&t).is_none() {
                bail!("translator {t} is not in the corpus");
            }
            let table: HashMap<String, Option<String>> =
                corpus.passages.iter().map(|p| (p.id.to_string(), Some(p.text_of(&t)))).collect();
            return Ok((model, Box::new(LookupClient::new(table))));
        }
        Ok((model, self.chat_client(&s.provider, None)?))
    }
}
