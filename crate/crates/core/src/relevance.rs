//! From token relevance to rescaled per-line relevance.
//!
//! Attention-based token relevance uses the attention a token *receives*:
//! `r_i = sum_h sum_j A[h, j, i]`, summed over heads and query positions.
//! The outgoing sum `sum_j A[h, i, j]` is identically 1 per head after the
//! softmax, so it cannot rank tokens.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const ROW_SUM_TOLERANCE: f64 = 1e-6;

pub mod method {
    pub const ATTENTION_FIRST: &str = "attention-first";
    pub const ATTENTION_LAST: &str = "attention-last";
    pub const ATTNLRP: &str = "attnlrp";
    pub const INTEGRATED_GRADIENTS: &str = "integrated-gradients";
    pub const EXTERNAL: &str = "external";
    pub const ABS_SUFFIX: &str = "-abs";
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenScore {
    pub line: usize,
    pub score: f64,
}

/// One line of the relevance interchange JSONL.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenRelevanceRecord {
    #[serde(rename = "id")]
    pub function_id: String,
    pub method: String,
    pub predicted_label: u8,
    #[serde(rename = "tokens")]
    pub scores: Vec<TokenScore>,
    /// 1-based encoder layer, for attention methods.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer: Option<usize>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub truncated: bool,
}

impl TokenRelevanceRecord {
    pub fn validate(&self, line_count: usize) -> Result<()> {
        if self.predicted_label > 1 {
            return Err(Error::Invalid(format!(
                "{}: predicted_label must be 0 or 1",
                self.function_id
            )));
        }
        for s in &self.scores {
            if s.line >= line_count {
                return Err(Error::LineOutOfRange {
                    line: s.line,
                    line_count,
                });
            }
            if !s.score.is_finite() {
                return Err(Error::Invalid(format!("{}: non-finite score", self.function_id)));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineRelevanceVector {
    #[serde(rename = "id")]
    pub function_id: String,
    pub method: String,
    pub values: Vec<f64>,
}

/// One layer's attention weights, `heads x seq_len x seq_len`, row-major.
/// `values[(h * J + q) * J + k]` is the weight query `q` puts on key `k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionTensor {
    #[serde(rename = "id")]
    pub function_id: String,
    pub layer: usize,
    pub heads: usize,
    pub seq_len: usize,
    #[serde(rename = "attn")]
    pub values: Vec<f64>,
    #[serde(default)]
    pub special_positions: Vec<usize>,
    /// Source line of each non-special position, in position order.
    pub token_lines: Vec<usize>,
}

impl AttentionTensor {
    pub fn at(&self, head: usize, query: usize, key: usize) -> f64 {
        let j = self.seq_len;
        self.values[(head * j + query) * j + key]
    }

    pub fn validate(&self) -> Result<()> {
        let j = self.seq_len;
        if self.values.len() != self.heads * j * j {
            return Err(Error::MalformedAttention(format!(
                "expected {} values for {}x{}x{}, got {}",
                self.heads * j * j,
                self.heads,
                j,
                j,
                self.values.len()
            )));
        }
        if let Some(v) = self.values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::NotSoftmax(format!("entry {v} is negative or not finite")));
        }
        for (r, row) in self.values.chunks(j.max(1)).enumerate() {
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::NotSoftmax(format!(
                    "row {} of head {} sums to {sum}",
                    r % j,
                    r / j
                )));
            }
        }
        let mut seen = vec![false; j];
        for &p in &self.special_positions {
            if p >= j || std::mem::replace(&mut seen[p], true) {
                return Err(Error::MalformedAttention(format!("bad special position {p}")));
            }
        }
        let content = j - self.special_positions.len();
        if self.token_lines.len() != content {
            return Err(Error::LengthMismatch {
                expected: content,
                actual: self.token_lines.len(),
            });
        }
        Ok(())
    }
}

/// Total attention each position receives, over heads and queries.
pub fn incoming_attention(attn: &AttentionTensor) -> Result<Vec<f64>> {
    attn.validate()?;
    let j = attn.seq_len;
    let mut received = vec![0.0; j];
    for row in attn.values.chunks(j.max(1)) {
        for (k, &w) in row.iter().enumerate() {
            received[k] += w;
        }
    }
    Ok(received)
}

/// Incoming-attention relevance of every non-special position, tagged with its line.
pub fn attention_token_relevance(attn: &AttentionTensor) -> Result<Vec<TokenScore>> {
    let received = incoming_attention(attn)?;
    let mut special = vec![false; attn.seq_len];
    for &p in &attn.special_positions {
        special[p] = true;
    }
    Ok(received
        .into_iter()
        .zip(special)
        .filter(|(_, s)| !s)
        .map(|(score, _)| score)
        .zip(&attn.token_lines)
        .map(|(score, &line)| TokenScore { line, score })
        .collect())
}

pub fn attention_record(
    attn: &AttentionTensor,
    method: &str,
    predicted_label: u8,
) -> Result<TokenRelevanceRecord> {
    Ok(TokenRelevanceRecord {
        function_id: attn.function_id.clone(),
        method: method.to_string(),
        predicted_label,
        scores: attention_token_relevance(attn)?,
        layer: Some(attn.layer),
        truncated: false,
    })
}

/// Per-line sums of token scores. Lines without tokens (including lines lost
/// to truncation) get 0.
pub fn aggregate_lines(record: &TokenRelevanceRecord, line_count: usize) -> Result<Vec<f64>> {
    let mut lines = vec![0.0; line_count];
    for s in &record.scores {
        let slot = lines.get_mut(s.line).ok_or(Error::LineOutOfRange {
            line: s.line,
            line_count,
        })?;
        *slot += s.score;
    }
    Ok(lines)
}

/// Min-max rescaling into [0, 1]; a constant vector maps to all zeros.
pub fn rescale(raw: &[f64]) -> Vec<f64> {
    let min = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    if range.is_nan() || range <= 0.0 {
        return vec![0.0; raw.len()];
    }
    raw.iter()
        .map(|&v| ((v - min) / range).clamp(0.0, 1.0))
        .collect()
}

pub fn line_relevance(record: &TokenRelevanceRecord, line_count: usize) -> Result<LineRelevanceVector> {
    let raw = aggregate_lines(record, line_count)?;
    Ok(LineRelevanceVector {
        function_id: record.function_id.clone(),
        method: record.method.clone(),
        values: rescale(&raw),
    })
}

pub fn absolute_variant(record: &TokenRelevanceRecord) -> TokenRelevanceRecord {
    let mut out = record.clone();
    for s in &mut out.scores {
        s.score = s.score.abs();
    }
    out.method.push_str(method::ABS_SUFFIX);
    out
}
