//! Browser bindings: ground truth from a fix, alignment of a line-score
//! vector, and tokenization with line provenance. Every call returns JSON
//! text so the page needs no glue beyond `JSON.parse`.

use dalign_core::groundtruth::{extract_ground_truth, FunctionPair};
use dalign_core::metric::{detection_alignment, fuzzify_ground_truth};
use dalign_core::relevance::{rescale, LineRelevanceVector};
use dalign_core::text::line_count;
use dalign_core::tokenizer::{train_bpe, Vocabulary};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

fn to_js(v: Value) -> String {
    v.to_string()
}

fn err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

/// Lines of `vulnerable` that the fix deleted or rewrote.
pub fn ground_truth_json(vulnerable: &str, fixed: &str) -> String {
    let gt = extract_ground_truth(&FunctionPair {
        function_id: "demo".into(),
        vulnerable_code: vulnerable.into(),
        fixed_code: fixed.into(),
    });
    to_js(json!({
        "vulnerable_lines": gt.vulnerable_lines,
        "line_count": gt.line_count,
    }))
}

/// Rescales raw per-line scores to [0, 1] and scores them against the
/// vulnerable lines.
pub fn alignment_json(raw_scores: &[f64], vulnerable_lines: &[u32], predicted_label: u8) -> Result<String, String> {
    let gt = dalign_core::groundtruth::GroundTruth {
        function_id: "demo".into(),
        vulnerable_lines: vulnerable_lines.iter().map(|&l| l as usize).collect(),
        line_count: raw_scores.len(),
    };
    if let Some(&l) = gt.vulnerable_lines.iter().find(|&&l| l >= gt.line_count) {
        return Err(format!("line {l} is outside the {} scored lines", gt.line_count));
    }
    if raw_scores.iter().any(|s| !s.is_finite()) {
        return Err("scores must be finite numbers".into());
    }
    let values = rescale(raw_scores);
    let rel = LineRelevanceVector {
        function_id: "demo".into(),
        method: "manual".into(),
        values: values.clone(),
    };
    let r = detection_alignment(&rel, &fuzzify_ground_truth(&gt), predicted_label).map_err(|e| e.to_string())?;
    Ok(to_js(json!({
        "rescaled": values,
        "da": r.da,
        "intersection": r.intersection_mass,
        "union": r.union_mass,
        "excluded": r.exclude_reason.map(|x| x.to_string()),
    })))
}

/// Tokenizes `code` with a vocabulary trained on `code` itself, or with
/// the raw byte vocabulary when `vocab_size` is 0.
pub fn tokenize_json(code: &str, vocab_size: usize, budget: usize) -> Result<String, String> {
    let vocab = if vocab_size == 0 {
        Vocabulary::byte_level()
    } else {
        train_bpe(&[code], vocab_size).map_err(|e| e.to_string())?
    };
    let t = vocab.encode("demo", code, budget);
    let tokens: Vec<Value> = t
        .tokens
        .iter()
        .map(|tok| {
            json!({
                "id": tok.id,
                "line": tok.line_index,
                "text": String::from_utf8_lossy(&code.as_bytes()[tok.byte_span.clone()]),
            })
        })
        .collect();
    Ok(to_js(json!({
        "tokens": tokens,
        "line_count": line_count(code),
        "truncated": t.truncated,
        "vocab_size": vocab.len(),
    })))
}

#[wasm_bindgen(js_name = groundTruth)]
pub fn ground_truth(vulnerable: &str, fixed: &str) -> String {
    ground_truth_json(vulnerable, fixed)
}

#[wasm_bindgen]
pub fn alignment(raw_scores: &[f64], vulnerable_lines: &[u32], predicted_label: u8) -> Result<String, JsError> {
    alignment_json(raw_scores, vulnerable_lines, predicted_label).map_err(err)
}

#[wasm_bindgen]
pub fn tokenize(code: &str, vocab_size: usize, budget: usize) -> Result<String, JsError> {
    tokenize_json(code, vocab_size, budget).map_err(err)
}
