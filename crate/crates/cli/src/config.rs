use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use finsts_core::augment::LlmConfig;
use finsts_core::corpus::SegmenterConfig;
use finsts_core::metrics::AssessConfig;
use finsts_core::provider::{EmbeddingProvider, FileProvider, HttpProvider, HttpProviderConfig};
use finsts_core::trainer::TrainingConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ProviderSpec {
    /// JSON Lines of `{"text_sha256", "vector"}`.
    File { path: PathBuf },
    Http(HttpProviderConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchingConfig {
    pub min_similarity: f64,
}

impl Default for MatchingConfig {
    fn default() -> Self {
        MatchingConfig { min_similarity: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Corpus manifest (JSON Lines of `{company, period, path}`).
    pub corpus: Option<PathBuf>,
    pub provider: Option<ProviderSpec>,
    pub llm: LlmConfig,
    pub segmenter: SegmenterConfig,
    pub matching: MatchingConfig,
    pub training: TrainingConfig,
    pub assess: AssessConfig,
    pub train_fraction: f64,
    pub out_dir: PathBuf,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            corpus: None,
            provider: None,
            llm: LlmConfig::default(),
            segmenter: SegmenterConfig::default(),
            matching: MatchingConfig::default(),
            training: TrainingConfig::default(),
            assess: AssessConfig::default(),
            train_fraction: 0.85,
            out_dir: PathBuf::from("out"),
            seed: 0,
        }
    }
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

/// Parses and validates a config file. Relative paths inside it resolve
/// against the file's directory.
pub fn load_config(path: &Path) -> anyhow::Result<PipelineConfig> {
    let body = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let mut cfg: PipelineConfig =
        serde_json::from_str(&body).with_context(|| format!("parsing config {}", path.display()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    if let Some(c) = &mut cfg.corpus {
        resolve(base, c);
    }
    match &mut cfg.provider {
        Some(ProviderSpec::File { path }) => resolve(base, path),
        Some(ProviderSpec::Http(h)) => {
            if let Some(c) = &mut h.cache_path {
                resolve(base, c);
            }
        }
        None => {}
    }
    if let Some(c) = &mut cfg.llm.cache_path {
        resolve(base, c);
    }
    resolve(base, &mut cfg.out_dir);
    cfg.validate()?;
    Ok(cfg)
}

impl PipelineConfig {
    pub fn validate(&self) -> anyhow::Result<()> {
        self.training.validate().context("training")?;
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            bail!("train_fraction must lie in (0, 1), got {}", self.train_fraction);
        }
        if !(self.assess.distortion > 0.0) {
            bail!("assess.distortion must be > 0");
        }
        if self.llm.concurrency == 0 {
            bail!("llm.concurrency must be >= 1");
        }
        Ok(())
    }

    pub fn set_offline(&mut self) {
        self.llm.offline = true;
        if let Some(ProviderSpec::Http(h)) = &mut self.provider {
            h.offline = true;
        }
    }

    pub fn corpus(&self) -> anyhow::Result<&Path> {
        let p = self.corpus.as_deref().context("config has no corpus manifest")?;
        if !p.exists() {
            bail!("corpus manifest {} does not exist", p.display());
        }
        Ok(p)
    }

    pub fn open_provider(&self) -> anyhow::Result<Box<dyn EmbeddingProvider>> {
        match self.provider.as_ref().context("config has no embedding provider")? {
            ProviderSpec::File { path } => Ok(Box::new(
                FileProvider::open(path).with_context(|| format!("opening embeddings {}", path.display()))?,
            )),
            ProviderSpec::Http(h) => Ok(Box::new(HttpProvider::new(h.clone())?)),
        }
    }
}

/// Seed for one pipeline stage: the first 8 bytes of
/// `sha256(seed as little-endian u64 || stage name)`.
pub fn stage_seed(seed: u64, stage: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(stage.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}
