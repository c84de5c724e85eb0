//! Sentence embedding providers: file-backed, HTTP with on-disk cache, and
//! in-memory.
//!
//! Token-level vectors are mean-pooled on load; sentence-level vectors pass
//! through.

use std::collections::HashMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::jsonl::{self, JsonlError};
use crate::metrics::{mean_pool, MetricsError};
use crate::{EmbeddingVector, Matrix};

#[derive(Debug, thiserror::Error)]
pub enum ProviderError {
    #[error("no embedding for text {sha} ({preview:?})")]
    Missing { sha: String, preview: String },
    #[error("embedding dimension {got} differs from {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid embedding: {0}")]
    Invalid(#[from] MetricsError),
    #[error("embedding request failed: {0}")]
    Http(String),
    #[error("embedding response malformed: {0}")]
    Malformed(String),
    #[error("offline mode: {0} texts not in the embedding cache")]
    Offline(usize),
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error("cache write failed: {0}")]
    Cache(std::io::Error),
}

/// Maps sentence texts to embeddings.
pub trait EmbeddingProvider: Send + Sync {
    fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, ProviderError>;

    fn embed_one(&self, text: &str) -> Result<EmbeddingVector, ProviderError> {
        Ok(self.embed(&[text])?.pop().expect("one embedding per text"))
    }
}

impl<P: EmbeddingProvider + ?Sized> EmbeddingProvider for &P {
    fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        (**self).embed(texts)
    }
}

impl<P: EmbeddingProvider + ?Sized> EmbeddingProvider for Box<P> {
    fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        (**self).embed(texts)
    }
}

pub fn text_sha256(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Sentence vector or token-level vectors to be mean-pooled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StoredVector {
    Sentence(Vec<f64>),
    Tokens(Vec<Vec<f64>>),
}

impl StoredVector {
    pub fn into_embedding(self) -> Result<EmbeddingVector, MetricsError> {
        match self {
            StoredVector::Sentence(v) => EmbeddingVector::new(v),
            StoredVector::Tokens(rows) => {
                let m = Matrix::from_rows(&rows)
                    .ok_or(MetricsError::DimensionMismatch { left: rows[0].len(), right: 0 })?;
                mean_pool(&m)
            }
        }
    }
}

/// One line of an embedding file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub text_sha256: String,
    pub vector: StoredVector,
}

impl EmbeddingRecord {
    pub fn new(text: &str, vector: Vec<f64>) -> Self {
        EmbeddingRecord { text_sha256: text_sha256(text), vector: StoredVector::Sentence(vector) }
    }
}

/// Writes an embedding file for `(text, vector)` pairs.
pub fn write_embedding_file<'a>(
    path: &Path,
    items: impl IntoIterator<Item = (&'a str, &'a [f64])>,
) -> Result<(), ProviderError> {
    let records: Vec<EmbeddingRecord> = items.into_iter().map(|(t, v)| EmbeddingRecord::new(t, v.to_vec())).collect();
    Ok(jsonl::write(path, &records)?)
}

struct VectorTable {
    by_sha: HashMap<String, EmbeddingVector>,
    dim: Option<usize>,
}

impl VectorTable {
    fn new() -> Self {
        VectorTable { by_sha: HashMap::new(), dim: None }
    }

    fn insert(&mut self, sha: String, v: EmbeddingVector) -> Result<(), ProviderError> {
        match self.dim {
            Some(d) if d != v.dim() => return Err(ProviderError::Dimension { expected: d, got: v.dim() }),
            None => self.dim = Some(v.dim()),
            _ => {}
        }
        self.by_sha.insert(sha, v);
        Ok(())
    }

    fn lookup(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        texts
            .iter()
            .map(|t| {
                let sha = text_sha256(t);
                self.by_sha.get(&sha).cloned().ok_or_else(|| ProviderError::Missing {
                    sha,
                    preview: t.chars().take(60).collect(),
                })
            })
            .collect()
    }
}

/// Embeddings precomputed into a JSON Lines file keyed by text hash.
pub struct FileProvider {
    table: VectorTable,
}

impl FileProvider {
    pub fn open(path: &Path) -> Result<Self, ProviderError> {
        let mut table = VectorTable::new();
        for rec in jsonl::read::<EmbeddingRecord>(path)? {
            table.insert(rec.text_sha256, rec.vector.into_embedding()?)?;
        }
        Ok(FileProvider { table })
    }

    pub fn len(&self) -> usize {
        self.table.by_sha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.by_sha.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.table.dim
    }
}

impl EmbeddingProvider for FileProvider {
    fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        self.table.lookup(texts)
    }
}

/// In-memory provider keyed by exact text.
#[derive(Default)]
pub struct MemoryProvider {
    table: HashMap<String, EmbeddingVector>,
}

impl MemoryProvider {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, text: impl Into<String>, vector: Vec<f64>) -> Result<(), MetricsError> {
        self.table.insert(text.into(), EmbeddingVector::new(vector)?);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &EmbeddingVector)> {
        self.table.iter().map(|(k, v)| (k.as_str(), v))
    }
}

impl EmbeddingProvider for MemoryProvider {
    fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        texts
            .iter()
            .map(|t| {
                self.table.get(*t).cloned().ok_or_else(|| ProviderError::Missing {
                    sha: text_sha256(t),
                    preview: t.chars().take(60).collect(),
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HttpProviderConfig {
    pub base_url: String,
    pub model: String,
    pub api_key_env: String,
    pub cache_path: Option<PathBuf>,
    pub batch_size: usize,
    pub timeout_secs: u64,
    pub offline: bool,
}

impl Default for HttpProviderConfig {
    fn default() -> Self {
        HttpProviderConfig {
            base_url: "http://localhost:8000/v1".into(),
            model: "text-embedding-ada-002".into(),
            api_key_env: "FINSTS_EMBED_API_KEY".into(),
            cache_path: None,
            batch_size: 64,
            timeout_secs: 60,
            offline: false,
        }
    }
}

#[derive(Serialize)]
struct EmbeddingsRequest<'a> {
    model: &'a str,
    input: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbeddingsResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    #[serde(default)]
    index: Option<usize>,
    embedding: Vec<f64>,
}

/// Parses `data[i].embedding`, honoring `index` when present.
pub fn parse_embeddings_response(body: &str, expected: usize) -> Result<Vec<Vec<f64>>, ProviderError> {
    let mut resp: EmbeddingsResponse =
        serde_json::from_str(body).map_err(|e| ProviderError::Malformed(e.to_string()))?;
    if resp.data.len() != expected {
        return Err(ProviderError::Malformed(format!("expected {expected} embeddings, got {}", resp.data.len())));
    }
    if resp.data.iter().all(|d| d.index.is_some()) {
        resp.data.sort_by_key(|d| d.index);
    }
    Ok(resp.data.into_iter().map(|d| d.embedding).collect())
}

/// `POST {base_url}/embeddings` client whose cache file doubles as a
/// [`FileProvider`] input.
pub struct HttpProvider {
    agent: ureq::Agent,
    url: String,
    api_key: Option<String>,
    cfg: HttpProviderConfig,
    table: Mutex<VectorTable>,
}

impl HttpProvider {
    pub fn new(cfg: HttpProviderConfig) -> Result<Self, ProviderError> {
        let mut table = VectorTable::new();
        if let Some(p) = cfg.cache_path.as_deref().filter(|p| p.exists()) {
            for rec in jsonl::read::<EmbeddingRecord>(p)? {
                table.insert(rec.text_sha256, rec.vector.into_embedding()?)?;
            }
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(cfg.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(HttpProvider {
            agent,
            url: format!("{}/embeddings", cfg.base_url.trim_end_matches('/')),
            api_key: std::env::var(&cfg.api_key_env).ok().filter(|k| !k.is_empty()),
            cfg,
            table: Mutex::new(table),
        })
    }

    fn fetch(&self, batch: &[&str]) -> Result<Vec<Vec<f64>>, ProviderError> {
        let mut req = self.agent.post(&self.url).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let body = serde_json::to_string(&EmbeddingsRequest { model: &self.cfg.model, input: batch })
            .expect("serializable request");
        let mut resp = req.send(body.as_bytes()).map_err(|e| ProviderError::Http(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(|e| ProviderError::Http(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(ProviderError::Http(format!("status {status}: {text}")));
        }
        parse_embeddings_response(&text, batch.len())
    }
}

impl EmbeddingProvider for HttpProvider {
    fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        let mut missing: Vec<&str> = {
            let table = self.table.lock().unwrap();
            texts.iter().copied().filter(|t| !table.by_sha.contains_key(&text_sha256(t))).collect()
        };
        missing.sort_unstable();
        missing.dedup();
        if !missing.is_empty() {
            if self.cfg.offline {
                return Err(ProviderError::Offline(missing.len()));
            }
            for batch in missing.chunks(self.cfg.batch_size.max(1)) {
                let vectors = self.fetch(batch)?;
                let mut table = self.table.lock().unwrap();
                let mut lines = String::new();
                for (text, v) in batch.iter().zip(vectors) {
                    let rec = EmbeddingRecord::new(text, v);
                    lines.push_str(&serde_json::to_string(&rec).expect("serializable record"));
                    lines.push('\n');
                    let StoredVector::Sentence(v) = rec.vector else { unreachable!() };
                    table.insert(rec.text_sha256, EmbeddingVector::new(v)?)?;
                }
                if let Some(p) = &self.cfg.cache_path {
                    let mut f = OpenOptions::new().create(true).append(true).open(p).map_err(ProviderError::Cache)?;
                    f.write_all(lines.as_bytes()).map_err(ProviderError::Cache)?;
                }
            }
        }
        self.table.lock().unwrap().lookup(texts)
    }
}
