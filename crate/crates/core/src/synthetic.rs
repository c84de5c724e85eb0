//! Seeded synthetic triplets with known shift subspaces.
//!
//! Anchors are random unit vectors. Positives add Gaussian noise on the
//! nuisance dimensions only. Negatives add the same kind of nuisance noise
//! plus a perturbation restricted to a two-dimensional subspace owned by
//! their category (C1 → dims 0..2, C2 → 2..4, C3 → 4..6, C4 → 6..8).

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::augment::{ShiftCategory, TripletDataset, TripletRecord};
use crate::evaluate::LabeledPair;
use crate::provider::{write_embedding_file, MemoryProvider, ProviderError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub triplets: usize,
    /// Anchors for the labeled pair set; each yields one positive and one negative pair.
    pub labeled_anchors: usize,
    pub dim: usize,
    pub nuisance_sigma: f64,
    pub shift_sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig { triplets: 2000, labeled_anchors: 400, dim: 64, nuisance_sigma: 0.2, shift_sigma: 0.25, seed: 7 }
    }
}

/// Number of leading dimensions reserved for the four shift subspaces.
pub const SHIFT_DIMS: usize = 8;

/// Dimensions perturbed by negatives of `category`.
pub fn shift_subspace(category: ShiftCategory) -> std::ops::Range<usize> {
    let i = category.index().expect("shift category");
    2 * i..2 * i + 2
}

#[derive(Debug, Clone)]
pub struct SyntheticSet {
    pub triplets: TripletDataset,
    pub labeled: Vec<LabeledPair>,
    /// Every text with its vector, in generation order.
    pub vectors: Vec<(String, Vec<f64>)>,
}

impl SyntheticSet {
    pub fn provider(&self) -> MemoryProvider {
        let mut p = MemoryProvider::new();
        for (t, v) in &self.vectors {
            p.insert(t.clone(), v.clone()).expect("finite synthetic vector");
        }
        p
    }

    pub fn write_embeddings(&self, path: &Path) -> Result<(), ProviderError> {
        write_embedding_file(path, self.vectors.iter().map(|(t, v)| (t.as_str(), v.as_slice())))
    }
}

struct Sampler {
    rng: ChaCha8Rng,
    dim: usize,
    nuisance: Normal<f64>,
    shift: Normal<f64>,
}

impl Sampler {
    fn anchor(&mut self) -> Vec<f64> {
        let v: Vec<f64> = (0..self.dim).map(|_| StandardNormal.sample(&mut self.rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| x / n).collect()
    }

    fn positive(&mut self, a: &[f64]) -> Vec<f64> {
        let mut v = a.to_vec();
        for x in &mut v[SHIFT_DIMS..] {
            *x += self.nuisance.sample(&mut self.rng);
        }
        v
    }

    fn negative(&mut self, a: &[f64], category: ShiftCategory) -> Vec<f64> {
        let mut v = self.positive(a);
        for j in shift_subspace(category) {
            v[j] += self.shift.sample(&mut self.rng);
        }
        v
    }
}

pub fn generate(cfg: &SyntheticConfig) -> SyntheticSet {
    assert!(cfg.dim > SHIFT_DIMS, "synthetic dim must exceed {SHIFT_DIMS}");
    let mut s = Sampler {
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        dim: cfg.dim,
        nuisance: Normal::new(0.0, cfg.nuisance_sigma).expect("valid sigma"),
        shift: Normal::new(0.0, cfg.shift_sigma).expect("valid sigma"),
    };
    let mut vectors = Vec::new();
    let mut records = Vec::with_capacity(cfg.triplets);
    for i in 0..cfg.triplets {
        let category = ShiftCategory::ALL[i % 4];
        let a = s.anchor();
        let p = s.positive(&a);
        let n = s.negative(&a, category);
        let texts = [format!("anchor {i}"), format!("positive {i}"), format!("negative {i} {}", category.code())];
        for (t, v) in texts.iter().zip([a, p, n]) {
            vectors.push((t.clone(), v));
        }
        let [anchor, positive, negative] = texts;
        records.push(TripletRecord {
            id: format!("syn-{i:05}/{}", category.code()),
            anchor,
            positive,
            negative,
            category,
            source_model: "synthetic".into(),
            company: "SYN".into(),
            period: "0".into(),
        });
    }
    let mut labeled = Vec::with_capacity(2 * cfg.labeled_anchors);
    for i in 0..cfg.labeled_anchors {
        let category = ShiftCategory::ALL[i % 4];
        let a = s.anchor();
        let p = s.positive(&a);
        let n = s.negative(&a, category);
        let (ta, tp, tn) = (format!("held anchor {i}"), format!("held positive {i}"), format!("held negative {i}"));
        labeled.push(LabeledPair::new(format!("held-{i:05}-p"), ta.clone(), tp.clone(), 1, None));
        labeled.push(LabeledPair::new(format!("held-{i:05}-n"), ta.clone(), tn.clone(), -1, Some(category)));
        vectors.extend([(ta, a), (tp, p), (tn, n)]);
    }
    SyntheticSet { triplets: TripletDataset::new(records).expect("valid synthetic records"), labeled, vectors }
}
