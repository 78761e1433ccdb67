//! Detection Alignment: fuzzy-set Jaccard overlap between rescaled line
//! relevance and the ground-truth indicator.
//!
//! ```text
//! DA = sum_l min(mu_R(l), mu_G(l)) / sum_l max(mu_R(l), mu_G(l))
//! ```
//!
//! Samples predicted benign score 0. Samples with an empty ground truth or no
//! lines are excluded from dataset means and counted separately.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::groundtruth::GroundTruth;
use crate::relevance::LineRelevanceVector;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct FuzzyLineSet {
    pub memberships: Vec<f64>,
}

pub fn fuzzify_ground_truth(gt: &GroundTruth) -> FuzzyLineSet {
    let mut memberships = vec![0.0; gt.line_count];
    for &l in &gt.vulnerable_lines {
        if let Some(m) = memberships.get_mut(l) {
            *m = 1.0;
        }
    }
    FuzzyLineSet { memberships }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExcludeReason {
    EmptyGroundTruth,
    EmptyFunction,
}

impl fmt::Display for ExcludeReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExcludeReason::EmptyGroundTruth => "empty-ground-truth",
            ExcludeReason::EmptyFunction => "empty-function",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DaResult {
    #[serde(rename = "id")]
    pub function_id: String,
    pub method: String,
    pub da: f64,
    #[serde(rename = "intersection")]
    pub intersection_mass: f64,
    #[serde(rename = "union")]
    pub union_mass: f64,
    pub predicted_label: u8,
    pub excluded: bool,
    pub exclude_reason: Option<ExcludeReason>,
}

/// Fuzzy intersection and union masses.
pub fn fuzzy_masses(a: &[f64], b: &[f64]) -> (f64, f64) {
    a.iter().zip(b).fold((0.0, 0.0), |(i, u), (&x, &y)| (i + x.min(y), u + x.max(y)))
}

/// Ratio of intersection to union mass; 0 when the union is empty.
pub fn da_from_masses(intersection: f64, union: f64) -> f64 {
    if union > 0.0 {
        (intersection / union).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

pub fn detection_alignment(
    rel: &LineRelevanceVector,
    gt: &FuzzyLineSet,
    predicted_label: u8,
) -> Result<DaResult> {
    let (r, g) = (&rel.values, &gt.memberships);
    if r.len() != g.len() {
        return Err(Error::LengthMismatch {
            expected: g.len(),
            actual: r.len(),
        });
    }
    if let Some(v) = r.iter().chain(g).find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Invalid(format!("membership {v} outside [0, 1]")));
    }
    let mut out = DaResult {
        function_id: rel.function_id.clone(),
        method: rel.method.clone(),
        da: 0.0,
        intersection_mass: 0.0,
        union_mass: 0.0,
        predicted_label,
        excluded: false,
        exclude_reason: None,
    };
    let reason = if g.is_empty() {
        Some(ExcludeReason::EmptyFunction)
    } else if g.iter().all(|&m| m == 0.0) {
        Some(ExcludeReason::EmptyGroundTruth)
    } else {
        None
    };
    if let Some(reason) = reason {
        out.excluded = true;
        out.exclude_reason = Some(reason);
        return Ok(out);
    }
    if predicted_label == 0 {
        return Ok(out);
    }
    let (inter, union) = fuzzy_masses(r, g);
    debug_assert!(union >= 1.0, "non-empty indicator contributes at least 1 to the union");
    out.intersection_mass = inter;
    out.union_mass = union;
    out.da = da_from_masses(inter, union);
    Ok(out)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    /// `None` when every sample was excluded.
    pub mean_da: Option<f64>,
    pub n_evaluated: usize,
    pub n_excluded: usize,
    pub n_false_negative: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    #[serde(flatten)]
    pub methods: BTreeMap<String, MethodSummary>,
    pub f1: Option<f64>,
}

/// Per-method mean DA over non-excluded samples. False negatives count as 0.
/// Summation follows input order.
pub fn aggregate(results: &[DaResult]) -> EvalSummary {
    let mut sums: BTreeMap<String, (f64, MethodSummary)> = BTreeMap::new();
    for r in results {
        let (sum, s) = sums.entry(r.method.clone()).or_default();
        if r.excluded {
            s.n_excluded += 1;
            continue;
        }
        s.n_evaluated += 1;
        if r.predicted_label == 0 {
            s.n_false_negative += 1;
        }
        *sum += r.da;
    }
    EvalSummary {
        methods: sums
            .into_iter()
            .map(|(m, (sum, mut s))| {
                s.mean_da = (s.n_evaluated > 0).then(|| sum / s.n_evaluated as f64);
                (m, s)
            })
            .collect(),
        f1: None,
    }
}

/// F1 of the positive class; 0 when precision + recall is 0.
pub fn f1_score(predictions: &[u8], labels: &[u8]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::LengthMismatch {
            expected: labels.len(),
            actual: predictions.len(),
        });
    }
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for (&p, &y) in predictions.iter().zip(labels) {
        match (p, y) {
            (1, 1) => tp += 1,
            (1, _) => fp += 1,
            (_, 1) => fneg += 1,
            _ => {}
        }
    }
    if tp == 0 {
        return Ok(0.0);
    }
    let precision = tp as f64 / (tp + fp) as f64;
    let recall = tp as f64 / (tp + fneg) as f64;
    Ok(2.0 * precision * recall / (precision + recall))
}
