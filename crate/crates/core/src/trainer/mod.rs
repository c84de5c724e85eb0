//! Projection-head training over frozen sentence embeddings with the cosine
//! triplet loss.

mod loss;
mod optim;

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use loss::{loss_gradient, triplet_loss};
pub use optim::{Adam, LinearWarmup};

use crate::augment::{AugmentError, TripletDataset};
use crate::linalg::Matrix;
use crate::metrics::MetricsError;
use crate::provider::{EmbeddingProvider, ProviderError};
use crate::Scalar;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("output dimension {k} exceeds input dimension {d}")]
    OutputTooWide { k: usize, d: usize },
    #[error("input dimension {got} does not match head dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("dataset needs at least 2 triplets, has {0}")]
    TooSmall(usize),
    #[error("training set is empty")]
    EmptyDataset,
    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Dataset(#[from] AugmentError),
    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },
}

/// Linear map `d → k` (optionally affine) applied to frozen embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParameters<S> {
    /// k×d.
    pub weight: Matrix<S>,
    pub bias: Option<Vec<S>>,
}

impl<S: Scalar> HeadParameters<S> {
    pub fn identity(d: usize) -> Self {
        HeadParameters { weight: Matrix::identity(d), bias: None }
    }

    pub fn d(&self) -> usize {
        self.weight.ncols()
    }

    pub fn k(&self) -> usize {
        self.weight.nrows()
    }

    pub fn num_params(&self) -> usize {
        self.weight.as_slice().len() + self.bias.as_ref().map_or(0, Vec::len)
    }

    /// `weight · v (+ bias)`.
    pub fn project(&self, v: &[S]) -> Result<Vec<S>, TrainError> {
        if v.len() != self.d() {
            return Err(TrainError::DimensionMismatch { expected: self.d(), got: v.len() });
        }
        let mut out = self.weight.mul_vec(v);
        if let Some(b) = &self.bias {
            for (o, &bi) in out.iter_mut().zip(b) {
                *o += bi;
            }
        }
        Ok(out)
    }

    pub fn is_finite(&self) -> bool {
        self.weight.as_slice().iter().chain(self.bias.iter().flatten()).all(|v| v.is_finite())
    }
}

/// Gradient with the same shape as a [`HeadParameters`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient<S> {
    pub weight: Matrix<S>,
    pub bias: Option<Vec<S>>,
}

impl<S: Scalar> Gradient<S> {
    pub fn zeros_like(head: &HeadParameters<S>) -> Self {
        Gradient {
            weight: Matrix::zeros(head.k(), head.d()),
            bias: head.bias.as_ref().map(|b| vec![S::zero(); b.len()]),
        }
    }

    fn add_scaled(&mut self, other: &Gradient<S>, scale: S) {
        for (a, &b) in self.weight.as_mut_slice().iter_mut().zip(other.weight.as_slice()) {
            *a += b * scale;
        }
        if let (Some(a), Some(b)) = (self.bias.as_mut(), other.bias.as_ref()) {
            for (x, &y) in a.iter_mut().zip(b) {
                *x += y * scale;
            }
        }
    }
}

pub const DEFAULT_INIT_NOISE: f64 = 0.01;

/// Truncated identity `[I_k | 0]` plus seeded uniform noise in `[-noise, noise]`.
pub fn init_head<S: Scalar>(d: usize, k: usize, seed: u64, noise: f64) -> Result<HeadParameters<S>, TrainError> {
    if k == 0 || k > d {
        return Err(TrainError::OutputTooWide { k, d });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weight = Matrix::zeros(k, d);
    for i in 0..k {
        for j in 0..d {
            let base = if i == j { 1.0 } else { 0.0 };
            let jitter = if noise > 0.0 { rng.random_range(-noise..=noise) } else { 0.0 };
            weight[(i, j)] = S::lit(base + jitter);
        }
    }
    Ok(HeadParameters { weight, bias: None })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub margin: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub warmup_fraction: f64,
    pub epochs: usize,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    /// Requested head width; clamped to the embedding dimension.
    pub output_dim: usize,
    pub use_bias: bool,
    pub init_noise: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            margin: 0.2,
            batch_size: 64,
            learning_rate: 1e-3,
            warmup_fraction: 0.10,
            epochs: 5,
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            output_dim: 256,
            use_bias: false,
            init_noise: DEFAULT_INIT_NOISE,
        }
    }
}

impl TrainingConfig {
    /// Step size used when fine-tuning a full transformer encoder.
    pub fn encoder_finetune_preset() -> Self {
        TrainingConfig { learning_rate: 2e-5, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.into()));
        if !(self.margin >= 0.0) {
            return bad("margin must be >= 0");
        }
        if !(self.warmup_fraction > 0.0 && self.warmup_fraction < 1.0) {
            return bad("warmup_fraction must lie in (0, 1)");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be > 0");
        }
        if self.output_dim == 0 {
            return bad("output_dim must be >= 1");
        }
        if !(self.init_noise >= 0.0) {
            return bad("init_noise must be >= 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
    pub checkpoint: Option<PathBuf>,
    pub train_size: usize,
    pub test_size: usize,
}

/// Seeded shuffle, then the first `floor(N · train_fraction)` records train.
pub fn split_dataset(
    ds: &TripletDataset,
    train_fraction: f64,
    seed: u64,
) -> Result<(TripletDataset, TripletDataset), TrainError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(TrainError::Config("train_fraction must lie in (0, 1)".into()));
    }
    if ds.len() < 2 {
        return Err(TrainError::TooSmall(ds.len()));
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    // The epsilon absorbs representation error such as 0.85 * 100 = 84.999...
    let cut = (ds.len() as f64 * train_fraction + 1e-9).floor() as usize;
    let pick = |idx: &[usize]| TripletDataset::new(idx.iter().map(|&i| ds.records()[i].clone()).collect());
    Ok((pick(&order[..cut])?, pick(&order[cut..])?))
}

/// Embedded triplet: anchor, positive, negative.
pub type TripletVectors<S> = [Vec<S>; 3];

/// Looks up embeddings for every triplet text.
pub fn embed_triplets<S: Scalar>(
    ds: &TripletDataset,
    provider: &dyn EmbeddingProvider,
) -> Result<Vec<TripletVectors<S>>, TrainError> {
    let side = |f: fn(&crate::augment::TripletRecord) -> &str| -> Result<Vec<Vec<S>>, TrainError> {
        let texts: Vec<&str> = ds.records().iter().map(f).collect();
        Ok(provider.embed(&texts)?.into_iter().map(|v| v.iter().map(|&x| S::lit(x)).collect()).collect())
    };
    let a = side(|r| &r.anchor)?;
    let p = side(|r| &r.positive)?;
    let n = side(|r| &r.negative)?;
    Ok(a.into_iter().zip(p).zip(n).map(|((a, p), n)| [a, p, n]).collect())
}

/// Serialized head: `{"d","k","weight","bias","config","epoch"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub d: usize,
    pub k: usize,
    /// Row-major k×d.
    pub weight: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias: Option<Vec<f64>>,
    pub config: TrainingConfig,
    pub epoch: usize,
}

impl Checkpoint {
    pub fn from_head<S: Scalar>(head: &HeadParameters<S>, config: &TrainingConfig, epoch: usize) -> Self {
        Checkpoint {
            d: head.d(),
            k: head.k(),
            weight: head.weight.as_slice().iter().map(|v| v.to_f64_lossy()).collect(),
            bias: head.bias.as_ref().map(|b| b.iter().map(|v| v.to_f64_lossy()).collect()),
            config: config.clone(),
            epoch,
        }
    }

    pub fn to_head<S: Scalar>(&self) -> Result<HeadParameters<S>, TrainError> {
        let weight = Matrix::from_vec(self.k, self.d, self.weight.iter().map(|&v| S::lit(v)).collect())
            .ok_or_else(|| TrainError::Config(format!("weight has {} entries, expected {}", self.weight.len(), self.k * self.d)))?;
        let bias = match &self.bias {
            Some(b) if b.len() != self.k => return Err(TrainError::Config("bias length differs from k".into())),
            Some(b) => Some(b.iter().map(|&v| S::lit(v)).collect()),
            None => None,
        };
        Ok(HeadParameters { weight, bias })
    }

    pub fn write(&self, path: &Path) -> Result<(), TrainError> {
        let body = serde_json::to_string_pretty(self).expect("serializable checkpoint");
        std::fs::write(path, body + "\n")
            .map_err(|e| TrainError::Checkpoint { path: path.to_path_buf(), reason: e.to_string() })
    }

    pub fn read(path: &Path) -> Result<Self, TrainError> {
        let err = |reason: String| TrainError::Checkpoint { path: path.to_path_buf(), reason };
        let body = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        serde_json::from_str(&body).map_err(|e| err(e.to_string()))
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Directory for per-epoch checkpoints (`epoch-<n>.json`).
    pub checkpoint_dir: Option<PathBuf>,
}

/// Trains a head on an embedded dataset with mini-batch Adam.
///
/// Batches are reduced in index order, so a fixed seed gives bit-identical
/// results.
pub fn train_vectors<S: Scalar>(
    data: &[TripletVectors<S>],
    cfg: &TrainingConfig,
    opts: &TrainOptions,
) -> Result<(HeadParameters<S>, TrainReport), TrainError> {
    cfg.validate()?;
    let Some(first) = data.first() else {
        return Err(TrainError::EmptyDataset);
    };
    let d = first[0].len();
    if let Some(bad) = data.iter().flatten().find(|v| v.len() != d) {
        return Err(TrainError::DimensionMismatch { expected: d, got: bad.len() });
    }
    let mut head = init_head::<S>(d, cfg.output_dim.min(d), cfg.seed, cfg.init_noise)?;
    if cfg.use_bias {
        head.bias = Some(vec![S::zero(); head.k()]);
    }
    let mut report =
        TrainReport { epoch_losses: Vec::new(), steps: 0, checkpoint: None, train_size: data.len(), test_size: 0 };
    if cfg.epochs == 0 {
        return Ok((head, report));
    }

    let batches_per_epoch = data.len().div_ceil(cfg.batch_size);
    let schedule = LinearWarmup::new(cfg.learning_rate, batches_per_epoch * cfg.epochs, cfg.warmup_fraction);
    let mut adam = Adam::<S>::new(head.num_params(), cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon);
    let margin = S::lit(cfg.margin);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_5eed);
    let mut order: Vec<usize> = (0..data.len()).collect();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0f64;
        for batch in order.chunks(cfg.batch_size) {
            let mut grad = Gradient::zeros_like(&head);
            let mut batch_loss = S::zero();
            let scale = S::one() / S::from_usize(batch.len()).unwrap();
            for &i in batch {
                let [s, p, n] = &data[i];
                let (loss, g) = loss_gradient(&head, s, p, n, margin)?;
                batch_loss += loss;
                grad.add_scaled(&g, scale);
            }
            report.steps += 1;
            if !batch_loss.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, step: report.steps });
            }
            epoch_loss += batch_loss.to_f64_lossy();
            let lr = S::lit(schedule.rate(report.steps));
            match (&mut head.bias, &grad.bias) {
                (Some(b), Some(gb)) => adam.step(
                    &mut [head.weight.as_mut_slice(), b.as_mut_slice()],
                    &[grad.weight.as_slice(), gb.as_slice()],
                    lr,
                ),
                _ => adam.step(&mut [head.weight.as_mut_slice()], &[grad.weight.as_slice()], lr),
            }
        }
        let mean = epoch_loss / data.len() as f64;
        log::info!("epoch {} mean loss {mean:.6}", epoch + 1);
        report.epoch_losses.push(mean);
        if let Some(dir) = &opts.checkpoint_dir {
            let path = dir.join(format!("epoch-{}.json", epoch + 1));
            Checkpoint::from_head(&head, cfg, epoch + 1).write(&path)?;
            report.checkpoint = Some(path);
        }
    }
    Ok((head, report))
}

/// Embeds `ds` through `provider` and trains a head on it.
pub fn train<S: Scalar>(
    ds: &TripletDataset,
    provider: &dyn EmbeddingProvider,
    cfg: &TrainingConfig,
    opts: &TrainOptions,
) -> Result<(HeadParameters<S>, TrainReport), TrainError> {
    if ds.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let data = embed_triplets::<S>(ds, provider)?;
    train_vectors(&data, cfg, opts)
}
