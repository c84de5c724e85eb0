//! Token-level alignment of two sentences for highlighting.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::corpus::token_sequence;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DiffOp {
    Equal,
    Insert,
    Delete,
    Replace,
}

/// Token index ranges into the two sides. Spans are ordered and together
/// cover both token sequences.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiffSpan {
    pub op: DiffOp,
    pub a_range: Range<usize>,
    pub b_range: Range<usize>,
}

/// Diff over the normalized token sequences of `a` and `b`.
pub fn diff_tokens(a: &str, b: &str) -> Vec<DiffSpan> {
    diff_sequences(&token_sequence(a), &token_sequence(b))
}

/// LCS alignment, with runs between matches folded into a single
/// insert, delete or replace span.
pub fn diff_sequences<T: PartialEq>(a: &[T], b: &[T]) -> Vec<DiffSpan> {
    let (n, m) = (a.len(), b.len());
    // lcs[i][j]: LCS length of a[i..] and b[j..]
    let mut lcs = vec![vec![0u32; m + 1]; n + 1];
    for i in (0..n).rev() {
        for j in (0..m).rev() {
            lcs[i][j] = if a[i] == b[j] { lcs[i + 1][j + 1] + 1 } else { lcs[i + 1][j].max(lcs[i][j + 1]) };
        }
    }
    let mut spans: Vec<DiffSpan> = Vec::new();
    let (mut i, mut j) = (0, 0);
    let (mut gap_i, mut gap_j) = (0, 0);
    let flush_gap = |spans: &mut Vec<DiffSpan>, gi: usize, i: usize, gj: usize, j: usize| {
        let op = match (gi < i, gj < j) {
            (true, true) => DiffOp::Replace,
            (true, false) => DiffOp::Delete,
            (false, true) => DiffOp::Insert,
            (false, false) => return,
        };
        spans.push(DiffSpan { op, a_range: gi..i, b_range: gj..j });
    };
    while i < n || j < m {
        if i < n && j < m && a[i] == b[j] && lcs[i][j] == lcs[i + 1][j + 1] + 1 {
            flush_gap(&mut spans, gap_i, i, gap_j, j);
            match spans.last_mut() {
                Some(s) if s.op == DiffOp::Equal && s.a_range.end == i && s.b_range.end == j => {
                    s.a_range.end += 1;
                    s.b_range.end += 1;
                }
                _ => spans.push(DiffSpan { op: DiffOp::Equal, a_range: i..i + 1, b_range: j..j + 1 }),
            }
            i += 1;
            j += 1;
            gap_i = i;
            gap_j = j;
        } else if j < m && (i == n || lcs[i][j + 1] >= lcs[i + 1][j]) {
            j += 1;
        } else {
            i += 1;
        }
    }
    flush_gap(&mut spans, gap_i, n, gap_j, m);
    spans
}
