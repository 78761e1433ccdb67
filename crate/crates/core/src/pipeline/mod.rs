//! File formats and the extract / score / evaluate / report loops.
//!
//! Wire formats (one JSON object per line):
//!
//! * dataset: `{"id","code","label","fixed_code"}` (`fixed_code` optional for benign rows)
//! * ground truth: `{"id","vulnerable_lines":[..],"line_count"}`
//! * relevance: `{"id","method","predicted_label","tokens":[{"line","score"},..]}`
//! * results: `{"id","method","da","intersection","union","predicted_label","excluded","exclude_reason"}`
//! * line relevance: `{"id","method","values":[..],"vulnerable_lines":[..]}`

pub mod io;

use std::collections::{BTreeSet, HashMap};
use std::fmt::{self, Write as _};
use std::str::FromStr;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::groundtruth::{extract_ground_truth, FunctionPair, GroundTruth};
use crate::metric::{aggregate, detection_alignment, f1_score, fuzzify_ground_truth, DaResult, EvalSummary};
use crate::microformer::{forward, integrated_gradients, IgConfig, ModelInput, ModelParams};
use crate::relevance::{absolute_variant, attention_record, line_relevance, method, TokenRelevanceRecord};
use crate::tokenizer::{Specials, Vocabulary};
use crate::{Error, Result};

pub use io::{ensure_unique, read_jsonl, to_jsonl, write_jsonl};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: String,
    pub code: String,
    pub label: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_code: Option<String>,
}

/// Ground truth for every vulnerable row; benign rows are skipped silently,
/// vulnerable rows without a fix are skipped with a warning.
pub fn extract_ground_truths(records: &[DatasetRecord]) -> (Vec<GroundTruth>, Vec<String>) {
    let mut out = Vec::new();
    let mut warnings = Vec::new();
    for r in records {
        if r.label == 0 {
            continue;
        }
        let Some(fixed) = &r.fixed_code else {
            warnings.push(format!("{}: vulnerable record has no fixed_code; skipped", r.id));
            continue;
        };
        let gt = extract_ground_truth(&FunctionPair {
            function_id: r.id.clone(),
            vulnerable_code: r.code.clone(),
            fixed_code: fixed.clone(),
        });
        if gt.is_empty() {
            warnings.push(format!("{}: empty ground truth; will be excluded", r.id));
        }
        out.push(gt);
    }
    (out, warnings)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ScoreMethod {
    AttentionFirst,
    AttentionLast,
    /// 1-based layer.
    AttentionLayer(usize),
    IntegratedGradients,
}

impl ScoreMethod {
    /// 1-based layer an attention method reads from a model with `layers` layers.
    pub fn layer(&self, layers: usize) -> Option<usize> {
        match *self {
            ScoreMethod::AttentionFirst => Some(1),
            ScoreMethod::AttentionLast => Some(layers),
            ScoreMethod::AttentionLayer(m) => Some(m),
            ScoreMethod::IntegratedGradients => None,
        }
    }
}

impl fmt::Display for ScoreMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScoreMethod::AttentionFirst => f.write_str(method::ATTENTION_FIRST),
            ScoreMethod::AttentionLast => f.write_str(method::ATTENTION_LAST),
            ScoreMethod::AttentionLayer(m) => write!(f, "attention-{m}"),
            ScoreMethod::IntegratedGradients => f.write_str(method::INTEGRATED_GRADIENTS),
        }
    }
}

impl FromStr for ScoreMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            method::ATTENTION_FIRST => Ok(ScoreMethod::AttentionFirst),
            method::ATTENTION_LAST => Ok(ScoreMethod::AttentionLast),
            method::INTEGRATED_GRADIENTS | "ig" => Ok(ScoreMethod::IntegratedGradients),
            _ => s
                .strip_prefix("attention-")
                .and_then(|m| m.parse().ok())
                .filter(|&m: &usize| m >= 1)
                .map(ScoreMethod::AttentionLayer)
                .ok_or_else(|| Error::UnknownMethod(s.to_string())),
        }
    }
}

/// Everything needed to turn source functions into relevance records.
pub struct Scorer<'a> {
    pub vocab: &'a Vocabulary,
    pub params: &'a ModelParams,
    pub specials: Specials,
    pub methods: Vec<ScoreMethod>,
    pub budget: usize,
    pub ig: IgConfig,
}

impl Scorer<'_> {
    /// One record per method, in method order.
    pub fn score(&self, id: &str, code: &str) -> Result<Vec<TokenRelevanceRecord>> {
        let tokens = self.vocab.encode(id, code, self.budget);
        if tokens.tokens.is_empty() {
            return Err(Error::EmptySequence);
        }
        let input = ModelInput::from_tokens(&tokens, self.specials);
        let trace = forward(self.params, &input)?;
        let mut out = Vec::with_capacity(self.methods.len());
        for m in &self.methods {
            let mut record = match m.layer(self.params.config.layers) {
                Some(layer) => {
                    let attn = trace.attention_tensor(
                        layer,
                        id,
                        input.special_positions(),
                        tokens.token_lines(),
                    )?;
                    attention_record(&attn, &m.to_string(), trace.predicted_label)?
                }
                None => integrated_gradients(self.params, &tokens, self.specials, &self.ig)?,
            };
            record.truncated = tokens.truncated;
            out.push(record);
        }
        Ok(out)
    }
}

/// Rescaled line relevance next to the ground truth, for heat-map data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineRecord {
    pub id: String,
    pub method: String,
    pub values: Vec<f64>,
    pub vulnerable_lines: BTreeSet<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub results: Vec<DaResult>,
    pub lines: Vec<LineRecord>,
    pub summary: EvalSummary,
    pub warnings: Vec<String>,
}

/// Joins relevance records with ground truth by id and scores every pair.
///
/// `labels` (id to true label) enables benign rows: they count toward F1 but
/// not toward DA. Without it, the ground-truth file defines the label-1 set and
/// relevance ids missing from it are skipped with a warning.
pub fn evaluate(
    records: &[TokenRelevanceRecord],
    truths: &[GroundTruth],
    labels: Option<&HashMap<String, u8>>,
    absolute: bool,
) -> Result<Evaluation> {
    let keys: Vec<String> = records.iter().map(|r| format!("{}\u{0}{}", r.function_id, r.method)).collect();
    ensure_unique(keys.iter().map(String::as_str), "relevance")?;
    ensure_unique(truths.iter().map(|g| g.function_id.as_str()), "ground truth")?;
    let by_id: HashMap<&str, &GroundTruth> = truths.iter().map(|g| (g.function_id.as_str(), g)).collect();

    let mut results = Vec::new();
    let mut lines = Vec::new();
    let mut warnings = Vec::new();
    let mut predictions: Vec<(&str, u8, u8)> = Vec::new();
    let mut predicted_ids = std::collections::HashSet::new();
    // one warning per id, not per method
    let mut warned = std::collections::HashSet::new();

    for record in records {
        let id = record.function_id.as_str();
        let truth = by_id.get(id).copied();
        let label = match (labels, truth) {
            (Some(map), _) => match map.get(id) {
                Some(&y) => Some(y),
                None => {
                    if warned.insert(id) {
                        warnings.push(format!("{id}: not in the dataset; skipped"));
                    }
                    continue;
                }
            },
            (None, Some(_)) => Some(1),
            (None, None) => None,
        };
        if let Some(y) = label {
            if predicted_ids.insert(id) {
                predictions.push((id, record.predicted_label, y));
            }
        }
        let Some(truth) = truth else {
            if label != Some(0) && warned.insert(id) {
                warnings.push(format!("{id}: no ground truth; skipped"));
            }
            continue;
        };
        let record = if absolute {
            absolute_variant(record)
        } else {
            record.clone()
        };
        record.validate(truth.line_count)?;
        let rel = line_relevance(&record, truth.line_count)?;
        let result = detection_alignment(&rel, &fuzzify_ground_truth(truth), record.predicted_label)?;
        if !result.excluded {
            lines.push(LineRecord {
                id: id.to_string(),
                method: record.method.clone(),
                values: rel.values,
                vulnerable_lines: truth.vulnerable_lines.clone(),
            });
        }
        results.push(result);
    }
    let seen: std::collections::HashSet<&str> = records.iter().map(|r| r.function_id.as_str()).collect();
    for g in truths {
        if !seen.contains(g.function_id.as_str()) {
            warnings.push(format!("{}: ground truth without relevance; skipped", g.function_id));
        }
    }
    for w in &warnings {
        warn!("{w}");
    }

    let mut summary = aggregate(&results);
    if !predictions.is_empty() {
        let preds: Vec<u8> = predictions.iter().map(|p| p.1).collect();
        let ys: Vec<u8> = predictions.iter().map(|p| p.2).collect();
        summary.f1 = Some(f1_score(&preds, &ys)?);
    }
    Ok(Evaluation {
        results,
        lines,
        summary,
        warnings,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"))
}

/// Plain-text table, one column per method.
pub fn report_table(summary: &EvalSummary) -> String {
    let methods: Vec<&String> = summary.methods.keys().collect();
    let width = methods.iter().map(|m| m.len()).max().unwrap_or(0).max(10);
    let mut out = String::new();
    let _ = write!(out, "{:<18}", "metric");
    for m in &methods {
        let _ = write!(out, " {m:>width$}");
    }
    out.push('\n');
    let mut row = |name: &str, cell: &dyn Fn(&crate::metric::MethodSummary) -> String| {
        let _ = write!(out, "{name:<18}");
        for m in &methods {
            let _ = write!(out, " {:>width$}", cell(&summary.methods[*m]));
        }
        out.push('\n');
    };
    row("mean DA", &|s| fmt_opt(s.mean_da));
    row("evaluated", &|s| s.n_evaluated.to_string());
    row("excluded", &|s| s.n_excluded.to_string());
    row("false negatives", &|s| s.n_false_negative.to_string());
    let _ = writeln!(out, "{:<18} {}", "F1", fmt_opt(summary.f1));
    out
}

/// `id,method,line,relevance,vulnerable`, one row per line of every sample.
pub fn heat_csv(lines: &[LineRecord]) -> String {
    let mut out = String::from("id,method,line,relevance,vulnerable\n");
    for r in lines {
        for (l, v) in r.values.iter().enumerate() {
            let _ = writeln!(
                out,
                "{},{},{l},{v},{}",
                csv_field(&r.id),
                csv_field(&r.method),
                u8::from(r.vulnerable_lines.contains(&l))
            );
        }
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
