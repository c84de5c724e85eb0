//! Stateless numeric metrics: cosine, pooling, Jaccard, AUC, Cohen's kappa,
//! SPD log-determinant and TransRate.

use std::collections::BTreeMap;
use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::corpus::TokenSet;
use crate::linalg::{dot, norm, Matrix};
use crate::Scalar;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("zero-norm vector")]
    ZeroNorm,
    #[error("non-finite value")]
    NonFinite,
    #[error("cannot pool an empty matrix")]
    EmptyPool,
    #[error("score list is empty")]
    EmptyScores,
    #[error("label lists differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("label list is empty")]
    EmptyLabels,
    #[error("matrix is not symmetric")]
    NotSymmetric,
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("distortion must be positive, got {0}")]
    InvalidDistortion(f64),
    #[error("need at least {needed} rows, got {got}")]
    TooFewRows { needed: usize, got: usize },
}

/// Dense finite embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector<S> {
    values: Vec<S>,
}

impl<S: Scalar> EmbeddingVector<S> {
    pub fn new(values: Vec<S>) -> Result<Self, MetricsError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(MetricsError::NonFinite);
        }
        Ok(EmbeddingVector { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn into_vec(self) -> Vec<S> {
        self.values
    }
}

impl<S> Deref for EmbeddingVector<S> {
    type Target = [S];
    fn deref(&self) -> &[S] {
        &self.values
    }
}

impl<S> AsRef<[S]> for EmbeddingVector<S> {
    fn as_ref(&self) -> &[S] {
        &self.values
    }
}

pub type EmbeddingMatrix<S> = Matrix<S>;

/// Cosine similarity `a·b / (‖a‖‖b‖)`, clamped to [-1, 1].
pub fn cosine<S: Scalar>(a: &[S], b: &[S]) -> Result<S, MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::DimensionMismatch { left: a.len(), right: b.len() });
    }
    let (na, nb) = (norm(a), norm(b));
    if na == S::zero() || nb == S::zero() {
        return Err(MetricsError::ZeroNorm);
    }
    let c = dot(a, b) / (na * nb);
    if !c.is_finite() {
        return Err(MetricsError::NonFinite);
    }
    Ok(c.max(-S::one()).min(S::one()))
}

/// Column-wise mean of token vectors.
pub fn mean_pool<S: Scalar>(tokens: &Matrix<S>) -> Result<EmbeddingVector<S>, MetricsError> {
    if tokens.nrows() == 0 {
        return Err(MetricsError::EmptyPool);
    }
    let n = S::from_usize(tokens.nrows()).expect("row count fits scalar");
    let mut sum = vec![S::zero(); tokens.ncols()];
    for r in tokens.row_iter() {
        for (s, &v) in sum.iter_mut().zip(r) {
            *s += v;
        }
    }
    EmbeddingVector::new(sum.into_iter().map(|s| s / n).collect())
}

/// `|a∩b| / |a∪b|`, with two empty sets counted as identical.
pub fn jaccard(a: &TokenSet, b: &TokenSet) -> f64 {
    let union = a.union_len(b);
    if union == 0 {
        return 1.0;
    }
    a.intersection_len(b) as f64 / union as f64
}

/// Probability that a random positive outscores a random negative, ties
/// counted half. Computed from mid-ranks in O((P+N) log(P+N)).
pub fn auc<S: Scalar>(positive: &[S], negative: &[S]) -> Result<f64, MetricsError> {
    if positive.is_empty() || negative.is_empty() {
        return Err(MetricsError::EmptyScores);
    }
    if positive.iter().chain(negative).any(|s| !s.is_finite()) {
        return Err(MetricsError::NonFinite);
    }
    let mut all: Vec<(S, bool)> =
        positive.iter().map(|&s| (s, true)).chain(negative.iter().map(|&s| (s, false))).collect();
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite scores"));

    // Twice the rank sum keeps mid-ranks integral.
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        // ranks i+1 ..= j+1, mid-rank = (i + j + 2) / 2
        let twice_mid = (i + j + 2) as u128;
        let pos_in_group = all[i..=j].iter().filter(|e| e.1).count() as u128;
        twice_rank_sum += twice_mid * pos_in_group;
        i = j + 1;
    }
    let p = positive.len() as u128;
    let n = negative.len() as u128;
    // 2U = 2R - P(P+1)
    let twice_u = twice_rank_sum - p * (p + 1);
    Ok(twice_u as f64 / (2 * p * n) as f64)
}

/// Chance-corrected agreement between two annotators.
pub fn cohens_kappa<T: Ord>(a: &[T], b: &[T]) -> Result<f64, MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(MetricsError::EmptyLabels);
    }
    let n = a.len() as i128;
    let agree = a.iter().zip(b).filter(|(x, y)| x == y).count() as i128;
    let mut marg: BTreeMap<&T, (i128, i128)> = BTreeMap::new();
    for x in a {
        marg.entry(x).or_default().0 += 1;
    }
    for y in b {
        marg.entry(y).or_default().1 += 1;
    }
    let chance: i128 = marg.values().map(|(ca, cb)| ca * cb).sum();
    // kappa = (n·agree − Σ ca·cb) / (n² − Σ ca·cb), exact in integers.
    let denom = n * n - chance;
    if denom == 0 {
        return Ok(1.0);
    }
    Ok((n * agree - chance) as f64 / denom as f64)
}

/// Linear-interpolation percentile (`q` in [0, 1]) of unsorted values.
pub fn quantile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() || !(0.0..=1.0).contains(&q) {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    Some(sorted[lo] + (sorted[hi] - sorted[lo]) * frac)
}

const SYMMETRY_TOL: f64 = 1e-9;

/// Log-determinant of a symmetric positive-definite matrix via Cholesky.
pub fn spd_logdet<S: Scalar>(m: &Matrix<S>) -> Result<S, MetricsError> {
    if m.nrows() != m.ncols() {
        return Err(MetricsError::NotSymmetric);
    }
    if !m.is_symmetric(S::lit(SYMMETRY_TOL)) {
        return Err(MetricsError::NotSymmetric);
    }
    let l = m.cholesky().ok_or(MetricsError::NotPositiveDefinite)?;
    let two = S::lit(2.0);
    Ok((0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<S>() * two)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssessConfig {
    /// Rate-distortion ε.
    pub distortion: f64,
    pub center_per_class: bool,
}

impl Default for AssessConfig {
    fn default() -> Self {
        AssessConfig { distortion: 1.0, center_per_class: true }
    }
}

/// Coding rate `½ logdet(I + d/(m ε²) AᵀA)` of an m×d matrix.
fn coding_rate<S: Scalar>(a: &Matrix<S>, distortion: S) -> Result<S, MetricsError> {
    let (m, d) = (a.nrows(), a.ncols());
    let scale = S::from_usize(d).unwrap() / (S::from_usize(m).unwrap() * distortion * distortion);
    let mut g = a.gram();
    for v in g.as_mut_slice() {
        *v *= scale;
    }
    for i in 0..d {
        g[(i, i)] += S::one();
    }
    Ok(spd_logdet(&g)? * S::lit(0.5))
}

/// TransRate: `R(Z) − Σ_c (n_c/n) R(Z_c)` with coding rate `R`.
///
/// `labels[i]` is the class of row `i`. Empty classes are skipped.
pub fn transrate<S: Scalar>(z: &Matrix<S>, labels: &[usize], cfg: &AssessConfig) -> Result<S, MetricsError> {
    if !(cfg.distortion > 0.0) || !cfg.distortion.is_finite() {
        return Err(MetricsError::InvalidDistortion(cfg.distortion));
    }
    if z.nrows() != labels.len() {
        return Err(MetricsError::LengthMismatch(z.nrows(), labels.len()));
    }
    if z.nrows() < 2 {
        return Err(MetricsError::TooFewRows { needed: 2, got: z.nrows() });
    }
    if z.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(MetricsError::NonFinite);
    }
    let eps = S::lit(cfg.distortion);
    let mut centered = z.clone();
    centered.center_columns();
    let total = coding_rate(&centered, eps)?;

    let mut classes: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &c) in labels.iter().enumerate() {
        classes.entry(c).or_default().push(i);
    }
    let source = if cfg.center_per_class { z } else { &centered };
    let n = S::from_usize(z.nrows()).unwrap();
    let mut conditional = S::zero();
    for rows in classes.values() {
        let block: Vec<&[S]> = rows.iter().map(|&i| source.row(i)).collect();
        let mut zc = Matrix::from_rows(&block).expect("rectangular");
        if cfg.center_per_class {
            zc.center_columns();
        }
        conditional += S::from_usize(rows.len()).unwrap() / n * coding_rate(&zc, eps)?;
    }
    Ok(total - conditional)
}
