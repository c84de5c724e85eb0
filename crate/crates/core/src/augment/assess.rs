use serde::{Deserialize, Serialize};

use super::{AugmentError, TripletDataset};
use crate::corpus::{token_sequence, tokenize};
use crate::metrics::{jaccard, quantile, transrate, AssessConfig};
use crate::provider::EmbeddingProvider;
use crate::Matrix;

/// 25th, 50th and 75th percentiles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub p25: f64,
    pub p50: f64,
    pub p75: f64,
}

impl Quartiles {
    pub fn of(values: &[f64]) -> Option<Quartiles> {
        Some(Quartiles { p25: quantile(values, 0.25)?, p50: quantile(values, 0.5)?, p75: quantile(values, 0.75)? })
    }
}

/// Mean token count of each side of the triplets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SideMeans {
    pub anchor: f64,
    pub positive: f64,
    pub negative: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssessmentReport {
    pub size: usize,
    pub mean_token_counts: SideMeans,
    pub jaccard_quartiles_pos: Quartiles,
    pub jaccard_quartiles_neg: Quartiles,
    pub transrate_pos: f64,
    pub transrate_neg: f64,
}

fn mean(values: impl Iterator<Item = usize>) -> f64 {
    let (sum, n) = values.fold((0usize, 0usize), |(s, n), v| (s + v, n + 1));
    sum as f64 / n as f64
}

/// Surface-overlap and separability summary of a triplet dataset.
///
/// TransRate treats anchors as class 0 and the generated side as class 1.
/// Token counts are full token sequences (duplicates counted).
pub fn assess_dataset(
    ds: &TripletDataset,
    provider: &dyn EmbeddingProvider,
    cfg: &AssessConfig,
) -> Result<AssessmentReport, AugmentError> {
    if ds.is_empty() {
        return Err(AugmentError::EmptyDataset);
    }
    let recs = ds.records();
    let mean_token_counts = SideMeans {
        anchor: mean(recs.iter().map(|r| token_sequence(&r.anchor).len())),
        positive: mean(recs.iter().map(|r| token_sequence(&r.positive).len())),
        negative: mean(recs.iter().map(|r| token_sequence(&r.negative).len())),
    };
    let jac_pos: Vec<f64> = recs.iter().map(|r| jaccard(&tokenize(&r.anchor), &tokenize(&r.positive))).collect();
    let jac_neg: Vec<f64> = recs.iter().map(|r| jaccard(&tokenize(&r.anchor), &tokenize(&r.negative))).collect();

    let anchors = provider.embed(&recs.iter().map(|r| r.anchor.as_str()).collect::<Vec<_>>())?;
    let positives = provider.embed(&recs.iter().map(|r| r.positive.as_str()).collect::<Vec<_>>())?;
    let negatives = provider.embed(&recs.iter().map(|r| r.negative.as_str()).collect::<Vec<_>>())?;
    let two_class = |other: &[crate::EmbeddingVector]| -> Result<f64, AugmentError> {
        let rows: Vec<&[f64]> = anchors.iter().chain(other).map(|v| &v[..]).collect();
        let z = Matrix::from_rows(&rows).ok_or(crate::metrics::MetricsError::DimensionMismatch {
            left: rows[0].len(),
            right: rows.iter().map(|r| r.len()).find(|&l| l != rows[0].len()).unwrap_or(0),
        })?;
        let labels: Vec<usize> = (0..rows.len()).map(|i| usize::from(i >= anchors.len())).collect();
        Ok(transrate(&z, &labels, cfg)?)
    };

    Ok(AssessmentReport {
        size: ds.len(),
        mean_token_counts,
        jaccard_quartiles_pos: Quartiles::of(&jac_pos).expect("non-empty"),
        jaccard_quartiles_neg: Quartiles::of(&jac_neg).expect("non-empty"),
        transrate_pos: two_class(&positives)?,
        transrate_neg: two_class(&negatives)?,
    })
}
