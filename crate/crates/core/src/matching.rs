//! Cross-period sentence pairing by maximum-weight assignment.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::Sentence;
use crate::linalg::Matrix;
use crate::metrics::{cosine, MetricsError};
use crate::Scalar;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MatchingError {
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("similarity matrix is empty")]
    EmptyMatrix,
    #[error("similarity matrix has a non-finite entry at ({0}, {1})")]
    NonFinite(usize, usize),
    #[error("match index ({row}, {col}) out of range for {rows}×{cols} sentences")]
    IndexOutOfRange { row: usize, col: usize, rows: usize, cols: usize },
    #[error("paired sentences come from the same document {0}")]
    SameDocument(String),
}

/// Pairwise cosine similarities; `values[(i, j)] = cos(rows[i], cols[j])`.
pub fn similarity_matrix<S: Scalar>(rows: &Matrix<S>, cols: &Matrix<S>) -> Result<Matrix<S>, MatchingError> {
    if rows.nrows() > 0 && cols.nrows() > 0 && rows.ncols() != cols.ncols() {
        return Err(MetricsError::DimensionMismatch { left: rows.ncols(), right: cols.ncols() }.into());
    }
    let mut out = Matrix::zeros(rows.nrows(), cols.nrows());
    for i in 0..rows.nrows() {
        for j in 0..cols.nrows() {
            out[(i, j)] = cosine(rows.row(i), cols.row(j))?;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Match<S> {
    pub row: usize,
    pub col: usize,
    pub similarity: S,
}

/// Optimal one-to-one matching. `matches` is sorted by row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment<S> {
    pub matches: Vec<Match<S>>,
    pub unmatched_rows: Vec<usize>,
    pub unmatched_cols: Vec<usize>,
}

impl<S: Scalar> Assignment<S> {
    /// Sum of matched similarities in row order.
    pub fn total(&self) -> S {
        self.matches.iter().map(|m| m.similarity).sum()
    }
}

/// Maximum-total-similarity matching via the Hungarian algorithm.
///
/// Rectangular inputs leave `|rows − cols|` rows or columns unmatched.
pub fn hungarian_assign<S: Scalar>(sim: &Matrix<S>) -> Result<Assignment<S>, MatchingError> {
    if sim.is_empty() {
        return Err(MatchingError::EmptyMatrix);
    }
    for i in 0..sim.nrows() {
        for j in 0..sim.ncols() {
            if !sim[(i, j)].is_finite() {
                return Err(MatchingError::NonFinite(i, j));
            }
        }
    }
    let transposed = sim.nrows() > sim.ncols();
    let cost = {
        let base = if transposed { sim.transpose() } else { sim.clone() };
        let data = base.as_slice().iter().map(|&v| -v).collect();
        Matrix::from_vec(base.nrows(), base.ncols(), data).unwrap()
    };
    let col_of_row = min_cost_assignment(&cost);

    let mut pairs: Vec<(usize, usize)> = col_of_row
        .iter()
        .enumerate()
        .map(|(r, &c)| if transposed { (c, r) } else { (r, c) })
        .collect();
    pairs.sort_unstable();
    let mut row_used = vec![false; sim.nrows()];
    let mut col_used = vec![false; sim.ncols()];
    let matches = pairs
        .into_iter()
        .map(|(row, col)| {
            row_used[row] = true;
            col_used[col] = true;
            Match { row, col, similarity: sim[(row, col)] }
        })
        .collect();
    Ok(Assignment {
        matches,
        unmatched_rows: (0..sim.nrows()).filter(|&i| !row_used[i]).collect(),
        unmatched_cols: (0..sim.ncols()).filter(|&j| !col_used[j]).collect(),
    })
}

/// Shortest-augmenting-path Hungarian algorithm for an n×m cost matrix with
/// n ≤ m. Returns the column assigned to each row. O(n²m).
///
/// Columns are scanned in increasing order and only strictly smaller slack
/// replaces the current minimum, so among equal-cost choices the lowest
/// column index wins.
fn min_cost_assignment<S: Scalar>(cost: &Matrix<S>) -> Vec<usize> {
    let (n, m) = (cost.nrows(), cost.ncols());
    debug_assert!(n <= m);
    let inf = S::infinity();
    // 1-based with a virtual column 0.
    let mut u = vec![S::zero(); n + 1];
    let mut v = vec![S::zero(); m + 1];
    let mut row_of_col = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        row_of_col[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = row_of_col[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[row_of_col[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of_col[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of_col[j0] = row_of_col[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col_of_row = vec![0usize; n];
    for j in 1..=m {
        if row_of_col[j] != 0 {
            col_of_row[row_of_col[j] - 1] = j - 1;
        }
    }
    col_of_row
}

/// Two matched sentences from different periods of one company.
#[derive(Debug, Clone, PartialEq)]
pub struct NarrativePair {
    pub id: String,
    pub company: String,
    pub sentence_a: Sentence,
    pub sentence_b: Sentence,
    pub match_similarity: f64,
}

/// Wire form of a pair: sentence texts only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub id: String,
    pub company: String,
    pub sentence_a: String,
    pub sentence_b: String,
    pub match_similarity: f64,
}

impl NarrativePair {
    pub fn to_record(&self) -> PairRecord {
        PairRecord {
            id: self.id.clone(),
            company: self.company.clone(),
            sentence_a: self.sentence_a.text.clone(),
            sentence_b: self.sentence_b.text.clone(),
            match_similarity: self.match_similarity,
        }
    }
}

pub fn pair_id(a: &Sentence, b: &Sentence) -> String {
    let mut h = Sha256::new();
    h.update(a.id.as_bytes());
    h.update([0u8]);
    h.update(b.id.as_bytes());
    format!("pair-{}", &hex::encode(h.finalize())[..16])
}

/// Turns an assignment into pairs, keeping matches with similarity at least
/// `min_similarity`, sorted by descending similarity.
pub fn build_pairs<S: Scalar>(
    assignment: &Assignment<S>,
    sents_a: &[Sentence],
    sents_b: &[Sentence],
    company: &str,
    min_similarity: f64,
) -> Result<Vec<NarrativePair>, MatchingError> {
    let mut pairs = Vec::new();
    for m in &assignment.matches {
        let (Some(a), Some(b)) = (sents_a.get(m.row), sents_b.get(m.col)) else {
            return Err(MatchingError::IndexOutOfRange {
                row: m.row,
                col: m.col,
                rows: sents_a.len(),
                cols: sents_b.len(),
            });
        };
        if a.doc_id == b.doc_id {
            return Err(MatchingError::SameDocument(a.doc_id.clone()));
        }
        let similarity = m.similarity.to_f64_lossy();
        if similarity < min_similarity {
            continue;
        }
        pairs.push(NarrativePair {
            id: pair_id(a, b),
            company: company.to_string(),
            sentence_a: a.clone(),
            sentence_b: b.clone(),
            match_similarity: similarity,
        });
    }
    // Stable sort keeps row order among equal similarities.
    pairs.sort_by(|x, y| y.match_similarity.total_cmp(&x.match_similarity));
    Ok(pairs)
}
