//! A small transformer-encoder classifier with a hand-written backward pass.
//!
//! Architecture per layer (post-norm):
//!
//! ```text
//! X ─► multi-head self-attention ─► + X ─► LayerNorm ─► feed-forward (GELU) ─► + ─► LayerNorm
//! ```
//!
//! Token embeddings plus a learned position table feed the stack; the final
//! hidden states are mean-pooled over content positions (begin/end markers
//! excluded) and projected to two logits `[benign, vulnerable]`.
//!
//! Attention per head is `A_h = softmax(Q_h K_h^T / sqrt(d_k))` with
//! `Q_h = X W^Q_h`, `K_h = X W^K_h`, `V_h = X W^V_h`; the heads' `A_h V_h`
//! outputs are concatenated and projected back to `d`.

mod checkpoint;
mod ig;
pub mod matrix;
mod model;
mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use checkpoint::{Checkpoint, CheckpointHeader, TensorSpec, CHECKPOINT_MAGIC};
pub use ig::{integrated_gradients, integrated_gradients_positions, IgConfig, DEFAULT_IG_STEPS};
pub use matrix::Matrix;
pub use model::{
    backward, embed, forward, forward_cached, forward_embedded, grad_embeddings, ForwardCache, ForwardTrace,
    LAYER_NORM_EPS,
};
pub use train::{evaluate_f1, train_toy, LabeledInput, TrainConfig, TrainOutcome};

use crate::tokenizer::{Specials, TokenizedFunction};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub d_ff: usize,
    pub max_len: usize,
}

impl ModelConfig {
    /// d = 32, 4 heads of width 8, 2 layers, d_ff = 64, 512 positions.
    pub fn with_vocab(vocab_size: usize) -> Self {
        ModelConfig {
            vocab_size,
            d_model: 32,
            heads: 4,
            layers: 2,
            d_ff: 64,
            max_len: 512,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.vocab_size == 0 || self.d_model == 0 || self.heads == 0 || self.d_ff == 0 {
            return bad("dimensions must be positive");
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return bad("d_model must be a multiple of heads");
        }
        if self.max_len < 3 {
            return bad("max_len must allow begin, end and one content position");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    /// `d x d`; head `h` uses columns `h*d_k .. (h+1)*d_k`.
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub wo: Matrix,
    pub bo: Matrix,
    pub ln1_gain: Matrix,
    pub ln1_bias: Matrix,
    pub w1: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
    pub ln2_gain: Matrix,
    pub ln2_bias: Matrix,
}

impl LayerParams {
    fn zeros(c: &ModelConfig) -> Self {
        let d = c.d_model;
        LayerParams {
            wq: Matrix::zeros(d, d),
            wk: Matrix::zeros(d, d),
            wv: Matrix::zeros(d, d),
            wo: Matrix::zeros(d, d),
            bo: Matrix::zeros(1, d),
            ln1_gain: Matrix::zeros(1, d),
            ln1_bias: Matrix::zeros(1, d),
            w1: Matrix::zeros(d, c.d_ff),
            b1: Matrix::zeros(1, c.d_ff),
            w2: Matrix::zeros(c.d_ff, d),
            b2: Matrix::zeros(1, d),
            ln2_gain: Matrix::zeros(1, d),
            ln2_bias: Matrix::zeros(1, d),
        }
    }

    fn tensors(&self) -> [(&'static str, &Matrix); 13] {
        [
            ("wq", &self.wq),
            ("wk", &self.wk),
            ("wv", &self.wv),
            ("wo", &self.wo),
            ("bo", &self.bo),
            ("ln1_gain", &self.ln1_gain),
            ("ln1_bias", &self.ln1_bias),
            ("w1", &self.w1),
            ("b1", &self.b1),
            ("w2", &self.w2),
            ("b2", &self.b2),
            ("ln2_gain", &self.ln2_gain),
            ("ln2_bias", &self.ln2_bias),
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Matrix; 13] {
        [
            &mut self.wq,
            &mut self.wk,
            &mut self.wv,
            &mut self.wo,
            &mut self.bo,
            &mut self.ln1_gain,
            &mut self.ln1_bias,
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.ln2_gain,
            &mut self.ln2_bias,
        ]
    }
}

/// All trainable weights. Gradients use the same type.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    /// `vocab_size x d`
    pub token_embedding: Matrix,
    /// `max_len x d`
    pub position_embedding: Matrix,
    pub layers: Vec<LayerParams>,
    /// `d x 2`
    pub classifier: Matrix,
    /// `1 x 2`
    pub classifier_bias: Matrix,
}

impl ModelParams {
    pub fn zeros(config: ModelConfig) -> Self {
        let d = config.d_model;
        ModelParams {
            config,
            token_embedding: Matrix::zeros(config.vocab_size, d),
            position_embedding: Matrix::zeros(config.max_len, d),
            layers: (0..config.layers).map(|_| LayerParams::zeros(&config)).collect(),
            classifier: Matrix::zeros(d, 2),
            classifier_bias: Matrix::zeros(1, 2),
        }
    }

    /// Seeded random initialization: N(0, 0.5) embeddings, N(0, 1/fan_in)
    /// weights, unit layer-norm gains, zero biases.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::zeros(config);
        let mut fill = |m: &mut Matrix, std: f64| {
            let dist = Normal::new(0.0, std).expect("positive std");
            for v in &mut m.data {
                *v = dist.sample(&mut rng);
            }
        };
        let d = config.d_model as f64;
        let ff = config.d_ff as f64;
        fill(&mut p.token_embedding, 0.5);
        fill(&mut p.position_embedding, 0.1);
        for layer in &mut p.layers {
            for m in [&mut layer.wq, &mut layer.wk, &mut layer.wv, &mut layer.wo, &mut layer.w1] {
                fill(m, 1.0 / d.sqrt());
            }
            fill(&mut layer.w2, 1.0 / ff.sqrt());
            layer.ln1_gain.data.fill(1.0);
            layer.ln2_gain.data.fill(1.0);
        }
        fill(&mut p.classifier, 1.0 / d.sqrt());
        Ok(p)
    }

    /// Named tensors in checkpoint order.
    pub fn tensors(&self) -> Vec<(String, &Matrix)> {
        let mut out = vec![
            ("token_embedding".to_string(), &self.token_embedding),
            ("position_embedding".to_string(), &self.position_embedding),
        ];
        for (i, layer) in self.layers.iter().enumerate() {
            for (name, m) in layer.tensors() {
                out.push((format!("layers.{i}.{name}"), m));
            }
        }
        out.push(("classifier".to_string(), &self.classifier));
        out.push(("classifier_bias".to_string(), &self.classifier_bias));
        out
    }

    /// Same order as [`ModelParams::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = vec![&mut self.token_embedding, &mut self.position_embedding];
        for layer in &mut self.layers {
            out.extend(layer.tensors_mut());
        }
        out.push(&mut self.classifier);
        out.push(&mut self.classifier_bias);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|(_, m)| m.data.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, m)| m.is_finite())
    }
}

/// Token ids for one forward pass and which positions are pooled.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelInput {
    pub ids: Vec<u32>,
    /// `false` at begin/end marker positions.
    pub content: Vec<bool>,
}

impl ModelInput {
    /// `[bos, content..., eos]`.
    pub fn from_tokens(tokens: &TokenizedFunction, specials: Specials) -> Self {
        let ids = tokens.model_input(specials);
        let mut content = vec![true; ids.len()];
        content[0] = false;
        *content.last_mut().expect("bos and eos present") = false;
        ModelInput { ids, content }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn special_positions(&self) -> Vec<usize> {
        self.content
            .iter()
            .enumerate()
            .filter(|(_, c)| !**c)
            .map(|(i, _)| i)
            .collect()
    }
}
