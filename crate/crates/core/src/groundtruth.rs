//! Vulnerable-line ground truth from a line diff against the fixed function.

use std::collections::BTreeSet;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::text::split_lines;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Edit {
    /// Line `a` of the old sequence matches line `b` of the new one.
    Keep { a: usize, b: usize },
    Delete { a: usize },
    Insert { b: usize },
}

/// Minimal LCS edit script turning `a` into `b`.
///
/// Walks a suffix-LCS table from the front. At equal cost a deletion is
/// preferred over an insertion, so for a replaced line the delete comes first.
pub fn line_diff<T: PartialEq>(a: &[T], b: &[T]) -> Vec<Edit> {
    // a shared prefix is kept whole by the walk below, so skip it in the table
    let skip = a.iter().zip(b).take_while(|(x, y)| x == y).count();
    let mut script = Vec::with_capacity(a.len() + b.len());
    script.extend((0..skip).map(|k| Edit::Keep { a: k, b: k }));
    let (a, b) = (&a[skip..], &b[skip..]);
    let (n, m) = (a.len(), b.len());
    let w = m + 1;
    // lcs[i * w + j] = LCS length of a[i..] and b[j..]
    let mut small = [0u32; 256];
    let mut large = Vec::new();
    let lcs: &mut [u32] = if (n + 1) * w <= small.len() {
        &mut small[..(n + 1) * w]
    } else {
        large.resize((n + 1) * w, 0);
        &mut large
    };
    for (i, ai) in a.iter().enumerate().rev() {
        let (cur, next) = lcs[i * w..(i + 2) * w].split_at_mut(w);
        for (j, bj) in b.iter().enumerate().rev() {
            // a match always wins, and next[j] >= next[j + 1], so this is the
            // usual recurrence without a data-dependent branch
            cur[j] = (next[j + 1] + u32::from(ai == bj)).max(next[j]).max(cur[j + 1]);
        }
    }
    let (mut i, mut j) = (0, 0);
    while i < n || j < m {
        if i < n && j < m && a[i] == b[j] {
            script.push(Edit::Keep { a: skip + i, b: skip + j });
            i += 1;
            j += 1;
        } else if i < n && (j == m || lcs[(i + 1) * w + j] >= lcs[i * w + j + 1]) {
            script.push(Edit::Delete { a: skip + i });
            i += 1;
        } else {
            script.push(Edit::Insert { b: skip + j });
            j += 1;
        }
    }
    script
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionPair {
    pub function_id: String,
    pub vulnerable_code: String,
    pub fixed_code: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    #[serde(rename = "id")]
    pub function_id: String,
    pub vulnerable_lines: BTreeSet<usize>,
    pub line_count: usize,
}

impl GroundTruth {
    pub fn is_empty(&self) -> bool {
        self.vulnerable_lines.is_empty()
    }
}

/// Lines of the vulnerable function that the fix deletes or replaces.
///
/// Lines that differ only in trailing whitespace count as unchanged. Moved
/// lines show up as delete + insert and are flagged.
pub fn extract_ground_truth(pair: &FunctionPair) -> GroundTruth {
    let old = split_lines(&pair.vulnerable_code);
    let new = split_lines(&pair.fixed_code);
    let old_cmp: Vec<&str> = old.iter().map(|l| l.trim_end()).collect();
    let new_cmp: Vec<&str> = new.iter().map(|l| l.trim_end()).collect();
    let vulnerable_lines: BTreeSet<usize> = line_diff(&old_cmp, &new_cmp)
        .into_iter()
        .filter_map(|e| match e {
            Edit::Delete { a } => Some(a),
            _ => None,
        })
        .collect();
    if vulnerable_lines.is_empty() {
        warn!(
            "{}: fix deletes no line of the vulnerable function; ground truth is empty",
            pair.function_id
        );
    }
    GroundTruth {
        function_id: pair.function_id.clone(),
        vulnerable_lines,
        line_count: old.len(),
    }
}
