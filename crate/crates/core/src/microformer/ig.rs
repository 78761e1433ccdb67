//! Integrated Gradients on the token-embedding layer.
//!
//! `r_i = sum_dim (x_i - x'_i) * sum_k w_k * dF(x' + a_k (x - x')) / dx_i`
//! with Gauss-Legendre nodes `a_k` and weights `w_k` on [0, 1], `F` the
//! vulnerable-class logit, and `x'` the padding embedding at every content
//! position (begin/end markers are left untouched).

use super::model::{backward, check_input, embed, forward_embedded};
use super::{Matrix, ModelInput, ModelParams};
use crate::quadrature::GaussLegendre;
use crate::relevance::{method, TokenRelevanceRecord, TokenScore};
use crate::tokenizer::{Specials, TokenizedFunction};
use crate::{Error, Result};

pub const DEFAULT_IG_STEPS: usize = 64;

/// Class whose logit is attributed.
const VULNERABLE: usize = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct IgConfig {
    pub steps: usize,
    pub pad_id: u32,
    pub quadrature: GaussLegendre,
}

impl IgConfig {
    pub fn new(steps: usize, pad_id: u32) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Invalid("integrated gradients needs at least one step".into()));
        }
        Ok(IgConfig {
            steps,
            pad_id,
            quadrature: GaussLegendre::new(steps),
        })
    }
}

/// Per-position attributions (length J, zero at special positions) and the
/// logits at input and baseline.
pub fn integrated_gradients_positions(
    params: &ModelParams,
    input: &ModelInput,
    cfg: &IgConfig,
) -> Result<(Vec<f64>, f64, f64)> {
    check_input(params, input)?;
    let x = embed(params, &input.ids);
    let mut baseline = x.clone();
    let pad = params
        .token_embedding
        .data
        .get(cfg.pad_id as usize * params.config.d_model..(cfg.pad_id as usize + 1) * params.config.d_model)
        .ok_or(Error::TokenOutOfVocab {
            id: cfg.pad_id,
            vocab_size: params.config.vocab_size,
        })?;
    for (r, &content) in input.content.iter().enumerate() {
        if content {
            baseline.row_mut(r).copy_from_slice(pad);
        }
    }
    let f_input = forward_embedded(params, &x, &input.content)?.0.logits[VULNERABLE];
    let f_baseline = forward_embedded(params, &baseline, &input.content)?.0.logits[VULNERABLE];

    let mut delta = x.clone();
    for (d, b) in delta.data.iter_mut().zip(&baseline.data) {
        *d -= b;
    }
    let mut avg_grad = Matrix::zeros(x.rows, x.cols);
    let mut upstream = [0.0; 2];
    upstream[VULNERABLE] = 1.0;
    for (&alpha, &w) in cfg.quadrature.nodes.iter().zip(&cfg.quadrature.weights) {
        let mut point = baseline.clone();
        for (p, d) in point.data.iter_mut().zip(&delta.data) {
            *p += alpha * d;
        }
        let (_, cache) = forward_embedded(params, &point, &input.content)?;
        let (_, g) = backward(params, &cache, upstream);
        for (a, gv) in avg_grad.data.iter_mut().zip(&g.data) {
            *a += w * gv;
        }
    }
    let scores = (0..x.rows)
        .map(|r| delta.row(r).iter().zip(avg_grad.row(r)).map(|(d, g)| d * g).sum())
        .collect();
    Ok((scores, f_input, f_baseline))
}

/// Token relevance record for one function, special positions dropped.
pub fn integrated_gradients(
    params: &ModelParams,
    tokens: &TokenizedFunction,
    specials: Specials,
    cfg: &IgConfig,
) -> Result<TokenRelevanceRecord> {
    let input = ModelInput::from_tokens(tokens, specials);
    let (positions, _, _) = integrated_gradients_positions(params, &input, cfg)?;
    let predicted_label = super::forward(params, &input)?.predicted_label;
    let scores = positions
        .iter()
        .zip(&input.content)
        .filter(|(_, c)| **c)
        .map(|(&s, _)| s)
        .zip(&tokens.tokens)
        .map(|(score, t)| TokenScore {
            line: t.line_index,
            score,
        })
        .collect();
    Ok(TokenRelevanceRecord {
        function_id: tokens.function_id.clone(),
        method: method::INTEGRATED_GRADIENTS.to_string(),
        predicted_label,
        scores,
        layer: None,
        truncated: tokens.truncated,
    })
}
