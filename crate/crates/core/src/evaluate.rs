//! Pair scoring, AUC reports, model comparison and the per-category ablation.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::augment::{AugmentError, ShiftCategory, TripletDataset};
use crate::jsonl::{self, JsonlError};
use crate::metrics::{auc, cosine, MetricsError};
use crate::provider::{EmbeddingProvider, ProviderError};
use crate::trainer::{train, HeadParameters, TrainError, TrainOptions, TrainingConfig};
use crate::Scalar;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("pair {id}: {reason}")]
    InvalidPair { id: String, reason: String },
    #[error("evaluation needs both positive and negative examples ({positives} positive, {negatives} negative)")]
    SingleLabel { positives: usize, negatives: usize },
    #[error("comparison needs at least 2 reports, got {0}")]
    TooFewReports(usize),
    #[error("baseline index {0} out of range")]
    NoBaseline(usize),
    #[error("baseline AUC is 0")]
    ZeroBaseline,
    #[error("category {0} missing from {1}")]
    MissingCategory(ShiftCategory, &'static str),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Dataset(#[from] AugmentError),
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
}

/// A sentence pair with a human or synthetic label. `label` is 1 for no
/// shift and −1 for a shift, in which case `category` names it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledPair {
    pub pair_id: String,
    pub sentence_a: String,
    pub sentence_b: String,
    pub label: i8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<ShiftCategory>,
}

impl LabeledPair {
    pub fn new(
        pair_id: impl Into<String>,
        sentence_a: impl Into<String>,
        sentence_b: impl Into<String>,
        label: i8,
        category: Option<ShiftCategory>,
    ) -> Self {
        LabeledPair {
            pair_id: pair_id.into(),
            sentence_a: sentence_a.into(),
            sentence_b: sentence_b.into(),
            label,
            category,
        }
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |reason: &str| Err(EvalError::InvalidPair { id: self.pair_id.clone(), reason: reason.into() });
        match (self.label, self.category) {
            (1, None) => Ok(()),
            (1, Some(_)) => bad("label 1 must not carry a category"),
            (-1, Some(c)) if c.is_shift() => Ok(()),
            (-1, _) => bad("label -1 requires a category in C1..C4"),
            _ => bad("label must be 1 or -1"),
        }
    }
}

pub fn read_labeled_pairs(path: &Path) -> Result<Vec<LabeledPair>, EvalError> {
    let pairs: Vec<LabeledPair> = jsonl::read(path)?;
    pairs.iter().try_for_each(LabeledPair::validate)?;
    Ok(pairs)
}

/// Cosine of the projected embeddings, or of the raw ones without a head.
pub fn score_pair<S: Scalar>(head: Option<&HeadParameters<S>>, a: &[S], b: &[S]) -> Result<S, EvalError> {
    Ok(match head {
        Some(h) => cosine(&h.project(a)?, &h.project(b)?)?,
        None => cosine(a, b)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model_name: String,
    pub auc: f64,
    pub n_positive: usize,
    pub n_negative: usize,
    /// Each category's negatives against all positives.
    pub per_category_auc: BTreeMap<ShiftCategory, f64>,
}

fn score_texts<S: Scalar>(
    pairs: &[(&str, &str)],
    head: Option<&HeadParameters<S>>,
    provider: &dyn EmbeddingProvider,
) -> Result<Vec<S>, EvalError> {
    let a: Vec<&str> = pairs.iter().map(|p| p.0).collect();
    let b: Vec<&str> = pairs.iter().map(|p| p.1).collect();
    let (ea, eb) = (provider.embed(&a)?, provider.embed(&b)?);
    let lift = |v: &[f64]| -> Vec<S> { v.iter().map(|&x| S::lit(x)).collect() };
    ea.iter().zip(&eb).map(|(x, y)| score_pair(head, &lift(x), &lift(y))).collect()
}

fn report<S: Scalar>(
    model_name: &str,
    positives: &[S],
    negatives: &[(ShiftCategory, S)],
) -> Result<EvalReport, EvalError> {
    if positives.is_empty() || negatives.is_empty() {
        return Err(EvalError::SingleLabel { positives: positives.len(), negatives: negatives.len() });
    }
    let all_neg: Vec<S> = negatives.iter().map(|n| n.1).collect();
    let mut per_category_auc = BTreeMap::new();
    for c in ShiftCategory::ALL {
        let neg: Vec<S> = negatives.iter().filter(|n| n.0 == c).map(|n| n.1).collect();
        if !neg.is_empty() {
            per_category_auc.insert(c, auc(positives, &neg)?);
        }
    }
    Ok(EvalReport {
        model_name: model_name.into(),
        auc: auc(positives, &all_neg)?,
        n_positive: positives.len(),
        n_negative: all_neg.len(),
        per_category_auc,
    })
}

/// Positives are (anchor, positive) scores, negatives (anchor, negative).
pub fn eval_augmented<S: Scalar>(
    model_name: &str,
    ds: &TripletDataset,
    head: Option<&HeadParameters<S>>,
    provider: &dyn EmbeddingProvider,
) -> Result<EvalReport, EvalError> {
    let recs = ds.records();
    let pos: Vec<(&str, &str)> = recs.iter().map(|r| (r.anchor.as_str(), r.positive.as_str())).collect();
    let neg: Vec<(&str, &str)> = recs.iter().map(|r| (r.anchor.as_str(), r.negative.as_str())).collect();
    let positives = score_texts(&pos, head, provider)?;
    let negatives: Vec<_> = recs.iter().map(|r| r.category).zip(score_texts(&neg, head, provider)?).collect();
    report(model_name, &positives, &negatives)
}

pub fn eval_annotated<S: Scalar>(
    model_name: &str,
    pairs: &[LabeledPair],
    head: Option<&HeadParameters<S>>,
    provider: &dyn EmbeddingProvider,
) -> Result<EvalReport, EvalError> {
    pairs.iter().try_for_each(LabeledPair::validate)?;
    let texts: Vec<(&str, &str)> = pairs.iter().map(|p| (p.sentence_a.as_str(), p.sentence_b.as_str())).collect();
    let scores = score_texts(&texts, head, provider)?;
    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    for (p, s) in pairs.iter().zip(scores) {
        match p.category {
            None => positives.push(s),
            Some(c) => negatives.push((c, s)),
        }
    }
    report(model_name, &positives, &negatives)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model_name: String,
    pub auc: f64,
    /// `100 · (auc − baseline) / baseline`.
    pub improvement_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub baseline: String,
    pub rows: Vec<ComparisonRow>,
}

pub fn improvement_pct(baseline: f64, model: f64) -> Result<f64, EvalError> {
    if baseline == 0.0 {
        return Err(EvalError::ZeroBaseline);
    }
    Ok(100.0 * (model - baseline) / baseline)
}

pub fn compare_models(reports: &[EvalReport], baseline: usize) -> Result<Comparison, EvalError> {
    if reports.len() < 2 {
        return Err(EvalError::TooFewReports(reports.len()));
    }
    let base = reports.get(baseline).ok_or(EvalError::NoBaseline(baseline))?;
    let rows = reports
        .iter()
        .map(|r| {
            Ok(ComparisonRow {
                model_name: r.model_name.clone(),
                auc: r.auc,
                improvement_pct: improvement_pct(base.auc, r.auc)?,
            })
        })
        .collect::<Result<_, EvalError>>()?;
    Ok(Comparison { baseline: base.model_name.clone(), rows })
}

impl Comparison {
    pub fn to_table(&self) -> String {
        let width = self.rows.iter().map(|r| r.model_name.len()).max().unwrap_or(0).max(5);
        let mut out = format!("{:<width$}  {:>6}  {:>8}\n", "model", "auc", "vs base");
        for r in &self.rows {
            let _ = writeln!(out, "{:<width$}  {:>6.3}  {:>+7.2}%", r.model_name, r.auc, r.improvement_pct);
        }
        out
    }
}

/// Rows are excluded training categories, columns evaluated categories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationMatrix {
    pub excluded: Vec<ShiftCategory>,
    pub evaluated: Vec<ShiftCategory>,
    pub auc: Vec<Vec<f64>>,
}

impl AblationMatrix {
    pub fn cell(&self, excluded: ShiftCategory, evaluated: ShiftCategory) -> Option<f64> {
        let r = self.excluded.iter().position(|&c| c == excluded)?;
        let c = self.evaluated.iter().position(|&c| c == evaluated)?;
        Some(self.auc[r][c])
    }

    /// True when, for every evaluated category that was also excluded, the
    /// run without it scores lowest in that column.
    pub fn diagonal_is_column_minimum(&self) -> bool {
        self.evaluated.iter().enumerate().all(|(col, &c)| match self.excluded.iter().position(|&e| e == c) {
            Some(row) => self.auc.iter().all(|r| self.auc[row][col] <= r[col]),
            None => true,
        })
    }

    pub fn to_table(&self) -> String {
        let mut out = format!("{:<10}", "train w/o");
        for c in &self.evaluated {
            let _ = write!(out, "  {:>6}", c.code());
        }
        out.push('\n');
        for (c, row) in self.excluded.iter().zip(&self.auc) {
            let _ = write!(out, "{:<10}", c.code());
            for v in row {
                let _ = write!(out, "  {v:>6.3}");
            }
            out.push('\n');
        }
        out
    }
}

/// Trains one head per excluded category, each seeded with
/// `cfg.seed + category index`, and scores every category on `annotated`.
pub fn ablation_run(
    ds: &TripletDataset,
    annotated: &[LabeledPair],
    provider: &dyn EmbeddingProvider,
    cfg: &TrainingConfig,
) -> Result<AblationMatrix, EvalError> {
    ablation_rows(ds, annotated, provider, cfg, &ShiftCategory::ALL)
}

/// [`ablation_run`] restricted to the given excluded categories.
pub fn ablation_rows(
    ds: &TripletDataset,
    annotated: &[LabeledPair],
    provider: &dyn EmbeddingProvider,
    cfg: &TrainingConfig,
    excluded: &[ShiftCategory],
) -> Result<AblationMatrix, EvalError> {
    let in_train = ds.categories();
    for c in ShiftCategory::ALL {
        if !in_train.contains(&c) {
            return Err(EvalError::MissingCategory(c, "training data"));
        }
        if !annotated.iter().any(|p| p.category == Some(c)) {
            return Err(EvalError::MissingCategory(c, "annotated negatives"));
        }
    }
    let runs: Vec<Result<Vec<f64>, EvalError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = excluded
            .iter()
            .map(|&skip| {
                let offset = skip.index().expect("shift category") as u64;
                let cfg = TrainingConfig { seed: cfg.seed.wrapping_add(offset), ..cfg.clone() };
                scope.spawn(move || {
                    let subset = ds.without_category(skip);
                    let (head, _) = train::<f64>(&subset, provider, &cfg, &TrainOptions::default())?;
                    let rep = eval_annotated(&format!("w/o {}", skip.code()), annotated, Some(&head), provider)?;
                    Ok(ShiftCategory::ALL.iter().map(|c| rep.per_category_auc[c]).collect())
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("ablation worker panicked")).collect()
    });
    Ok(AblationMatrix {
        excluded: excluded.to_vec(),
        evaluated: ShiftCategory::ALL.to_vec(),
        auc: runs.into_iter().collect::<Result<_, _>>()?,
    })
}
