//! Output directory layout and per-run manifests.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Context;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::PipelineConfig;

pub struct Run {
    pub subcommand: String,
    pub out: PathBuf,
    pub seed: u64,
    pub stage_seed: Option<u64>,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    subcommand: &'a str,
    seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    stage_seed: Option<u64>,
    config: &'a PipelineConfig,
    inputs: &'a BTreeMap<String, String>,
    outputs: &'a BTreeMap<String, String>,
    finished_at_unix_ms: u128,
}

pub fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl Run {
    pub fn new(subcommand: &str, out: &Path, seed: u64) -> anyhow::Result<Self> {
        std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        Ok(Run {
            subcommand: subcommand.into(),
            out: out.to_path_buf(),
            seed,
            stage_seed: None,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    /// Records an input file's hash; fails when it is missing.
    pub fn input(&mut self, path: &Path) -> anyhow::Result<PathBuf> {
        let hash = sha256_file(path)?;
        self.inputs.insert(path.display().to_string(), hash);
        Ok(path.to_path_buf())
    }

    pub fn output(&mut self, path: &Path) -> anyhow::Result<()> {
        let key = path.strip_prefix(&self.out).unwrap_or(path).display().to_string();
        self.outputs.insert(key, sha256_file(path)?);
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> anyhow::Result<PathBuf> {
        let path = self.path(name);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let body = serde_json::to_string_pretty(value)? + "\n";
        std::fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
        self.output(&path)?;
        Ok(path)
    }

    pub fn finish(self, cfg: &PipelineConfig) -> anyhow::Result<()> {
        let manifest = Manifest {
            subcommand: &self.subcommand,
            seed: self.seed,
            stage_seed: self.stage_seed,
            config: cfg,
            inputs: &self.inputs,
            outputs: &self.outputs,
            finished_at_unix_ms: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0),
        };
        let dir = self.out.join("manifests");
        std::fs::create_dir_all(&dir)?;
        let path = dir.join(format!("{}.json", self.subcommand));
        std::fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }
}
