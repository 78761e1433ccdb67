use super::{LayerParams, Matrix, ModelInput, ModelParams};
use crate::relevance::AttentionTensor;
use crate::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

fn softmax_rows(m: &mut Matrix) {
    for r in 0..m.rows {
        let row = m.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

struct NormCache {
    normalized: Matrix,
    inv_std: Vec<f64>,
}

fn layer_norm(x: &Matrix, gain: &Matrix, bias: &Matrix) -> (Matrix, NormCache) {
    let d = x.cols;
    let mut normalized = Matrix::zeros(x.rows, d);
    let mut out = Matrix::zeros(x.rows, d);
    let mut inv_std = Vec::with_capacity(x.rows);
    for r in 0..x.rows {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        inv_std.push(is);
        for c in 0..d {
            let n = (row[c] - mean) * is;
            normalized.set(r, c, n);
            out.set(r, c, n * gain.data[c] + bias.data[c]);
        }
    }
    (out, NormCache { normalized, inv_std })
}

/// Returns d(input); accumulates gain and bias gradients.
fn layer_norm_backward(
    dy: &Matrix,
    cache: &NormCache,
    gain: &Matrix,
    dgain: &mut Matrix,
    dbias: &mut Matrix,
) -> Matrix {
    let d = dy.cols;
    let mut dx = Matrix::zeros(dy.rows, d);
    let mut dn = vec![0.0; d];
    for r in 0..dy.rows {
        let n = cache.normalized.row(r);
        let g = dy.row(r);
        for c in 0..d {
            dgain.data[c] += g[c] * n[c];
            dbias.data[c] += g[c];
            dn[c] = g[c] * gain.data[c];
        }
        let mean_dn = dn.iter().sum::<f64>() / d as f64;
        let mean_dn_n = dn.iter().zip(n).map(|(a, b)| a * b).sum::<f64>() / d as f64;
        let is = cache.inv_std[r];
        for (c, out) in dx.row_mut(r).iter_mut().enumerate() {
            *out = is * (dn[c] - mean_dn - n[c] * mean_dn_n);
        }
    }
    dx
}

struct LayerCache {
    input: Matrix,
    q: Vec<Matrix>,
    k: Vec<Matrix>,
    v: Vec<Matrix>,
    /// Per head, `J x J`.
    attention: Vec<Matrix>,
    concat: Matrix,
    norm1: NormCache,
    hidden: Matrix,
    pre_act: Matrix,
    act: Matrix,
    norm2: NormCache,
}

/// Intermediate values kept for [`backward`].
pub struct ForwardCache {
    ids: Option<Vec<u32>>,
    content: Vec<bool>,
    layers: Vec<LayerCache>,
    pooled: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace {
    /// `[benign, vulnerable]`
    pub logits: [f64; 2],
    /// One `heads x J x J` row-major array per layer, first layer first.
    pub attention: Vec<Vec<f64>>,
    pub heads: usize,
    pub seq_len: usize,
    pub predicted_label: u8,
    /// Token embeddings fed to the encoder (positions not yet added).
    pub embedded: Matrix,
}

impl ForwardTrace {
    /// Attention of the 1-based `layer` in interchange form.
    pub fn attention_tensor(
        &self,
        layer: usize,
        function_id: &str,
        special_positions: Vec<usize>,
        token_lines: Vec<usize>,
    ) -> Result<AttentionTensor> {
        let values = layer
            .checked_sub(1)
            .and_then(|i| self.attention.get(i))
            .ok_or_else(|| Error::Invalid(format!("model has no layer {layer}")))?;
        Ok(AttentionTensor {
            function_id: function_id.to_string(),
            layer,
            heads: self.heads,
            seq_len: self.seq_len,
            values: values.clone(),
            special_positions,
            token_lines,
        })
    }
}

pub(super) fn check_input(params: &ModelParams, input: &ModelInput) -> Result<()> {
    let c = &params.config;
    if input.ids.len() != input.content.len() {
        return Err(Error::LengthMismatch {
            expected: input.ids.len(),
            actual: input.content.len(),
        });
    }
    if input.len() > c.max_len {
        return Err(Error::SequenceTooLong {
            len: input.len(),
            max: c.max_len,
        });
    }
    if !input.content.iter().any(|&c| c) {
        return Err(Error::EmptySequence);
    }
    if let Some(&id) = input.ids.iter().find(|&&id| id as usize >= c.vocab_size) {
        return Err(Error::TokenOutOfVocab {
            id,
            vocab_size: c.vocab_size,
        });
    }
    Ok(())
}

/// Token-embedding rows for `ids`, without positions.
pub fn embed(params: &ModelParams, ids: &[u32]) -> Matrix {
    let d = params.config.d_model;
    let mut x = Matrix::zeros(ids.len(), d);
    for (r, &id) in ids.iter().enumerate() {
        x.row_mut(r).copy_from_slice(params.token_embedding.row(id as usize));
    }
    x
}

pub fn forward(params: &ModelParams, input: &ModelInput) -> Result<ForwardTrace> {
    check_input(params, input)?;
    let x = embed(params, &input.ids);
    let (trace, _) = run(params, x, &input.content, Some(input.ids.clone()));
    Ok(trace)
}

/// Forward pass from ids that also keeps the cache, so [`backward`] fills
/// token-embedding table gradients.
pub fn forward_cached(params: &ModelParams, input: &ModelInput) -> Result<(ForwardTrace, ForwardCache)> {
    check_input(params, input)?;
    let x = embed(params, &input.ids);
    Ok(run(params, x, &input.content, Some(input.ids.clone())))
}

/// Forward pass from explicit token embeddings (`J x d`), for gradient and
/// path-integral computations.
pub fn forward_embedded(
    params: &ModelParams,
    embedded: &Matrix,
    content: &[bool],
) -> Result<(ForwardTrace, ForwardCache)> {
    let c = &params.config;
    if embedded.cols != c.d_model || embedded.rows != content.len() {
        return Err(Error::LengthMismatch {
            expected: content.len() * c.d_model,
            actual: embedded.data.len(),
        });
    }
    if embedded.rows > c.max_len {
        return Err(Error::SequenceTooLong {
            len: embedded.rows,
            max: c.max_len,
        });
    }
    if !content.iter().any(|&c| c) {
        return Err(Error::EmptySequence);
    }
    Ok(run(params, embedded.clone(), content, None))
}

fn attention_block(layer: &LayerParams, x: &Matrix, heads: usize) -> (Matrix, LayerCacheParts) {
    let d = x.cols;
    let dk = d / heads;
    let scale = 1.0 / (dk as f64).sqrt();
    let q_all = x.matmul(&layer.wq);
    let k_all = x.matmul(&layer.wk);
    let v_all = x.matmul(&layer.wv);
    let mut parts = LayerCacheParts::default();
    let mut concat = Matrix::zeros(x.rows, d);
    for h in 0..heads {
        let q = q_all.columns(h * dk, dk);
        let k = k_all.columns(h * dk, dk);
        let v = v_all.columns(h * dk, dk);
        let mut a = q.matmul_t(&k);
        for s in &mut a.data {
            *s *= scale;
        }
        softmax_rows(&mut a);
        concat.set_columns(h * dk, &a.matmul(&v));
        parts.q.push(q);
        parts.k.push(k);
        parts.v.push(v);
        parts.attention.push(a);
    }
    let mut out = concat.matmul(&layer.wo);
    out.add_row(&layer.bo);
    parts.concat = concat;
    (out, parts)
}

#[derive(Default)]
struct LayerCacheParts {
    q: Vec<Matrix>,
    k: Vec<Matrix>,
    v: Vec<Matrix>,
    attention: Vec<Matrix>,
    concat: Matrix,
}

fn run(
    params: &ModelParams,
    embedded: Matrix,
    content: &[bool],
    ids: Option<Vec<u32>>,
) -> (ForwardTrace, ForwardCache) {
    let c = &params.config;
    let j = embedded.rows;
    let mut x = embedded.clone();
    for r in 0..j {
        for (a, p) in x.row_mut(r).iter_mut().zip(params.position_embedding.row(r)) {
            *a += p;
        }
    }
    let mut caches = Vec::with_capacity(c.layers);
    let mut attention_maps = Vec::with_capacity(c.layers);
    for layer in &params.layers {
        let (att, parts) = attention_block(layer, &x, c.heads);
        let mut u = x.clone();
        u.add_assign(&att);
        let (hidden, norm1) = layer_norm(&u, &layer.ln1_gain, &layer.ln1_bias);
        let mut pre_act = hidden.matmul(&layer.w1);
        pre_act.add_row(&layer.b1);
        let act = Matrix::from_vec(pre_act.rows, pre_act.cols, pre_act.data.iter().map(|&v| gelu(v)).collect());
        let mut v2 = act.matmul(&layer.w2);
        v2.add_row(&layer.b2);
        v2.add_assign(&hidden);
        let (out, norm2) = layer_norm(&v2, &layer.ln2_gain, &layer.ln2_bias);

        let mut flat = Vec::with_capacity(c.heads * j * j);
        for a in &parts.attention {
            flat.extend_from_slice(&a.data);
        }
        attention_maps.push(flat);
        caches.push(LayerCache {
            input: std::mem::replace(&mut x, out),
            q: parts.q,
            k: parts.k,
            v: parts.v,
            attention: parts.attention,
            concat: parts.concat,
            norm1,
            hidden,
            pre_act,
            act,
            norm2,
        });
    }

    let n = content.iter().filter(|&&c| c).count() as f64;
    let mut pooled = Matrix::zeros(1, c.d_model);
    for r in (0..j).filter(|&r| content[r]) {
        for (p, v) in pooled.data.iter_mut().zip(x.row(r)) {
            *p += v / n;
        }
    }
    let mut logits_m = pooled.matmul(&params.classifier);
    logits_m.add_row(&params.classifier_bias);
    let logits = [logits_m.data[0], logits_m.data[1]];

    let trace = ForwardTrace {
        logits,
        attention: attention_maps,
        heads: c.heads,
        seq_len: j,
        predicted_label: u8::from(logits[1] > logits[0]),
        embedded,
    };
    let cache = ForwardCache {
        ids,
        content: content.to_vec(),
        layers: caches,
        pooled,
    };
    (trace, cache)
}

/// Reverse pass for an upstream gradient on the logits.
///
/// Returns the gradient with respect to every parameter and with respect to
/// the token embeddings fed to the encoder. Token-embedding table gradients are
/// filled only when the forward pass started from ids.
pub fn backward(params: &ModelParams, cache: &ForwardCache, dlogits: [f64; 2]) -> (ModelParams, Matrix) {
    let c = &params.config;
    let d = c.d_model;
    let heads = c.heads;
    let dk = c.head_dim();
    let scale = 1.0 / (dk as f64).sqrt();
    let mut grads = ModelParams::zeros(params.config);
    let dl = Matrix::from_vec(1, 2, dlogits.to_vec());

    grads.classifier = cache.pooled.t_matmul(&dl);
    grads.classifier_bias = dl.clone();
    let dpooled = dl.matmul_t(&params.classifier);

    let j = cache.content.len();
    let n = cache.content.iter().filter(|&&c| c).count() as f64;
    let mut dx = Matrix::zeros(j, d);
    for r in (0..j).filter(|&r| cache.content[r]) {
        for (o, g) in dx.row_mut(r).iter_mut().zip(&dpooled.data) {
            *o = g / n;
        }
    }

    for (li, (layer, lc)) in params.layers.iter().zip(&cache.layers).enumerate().rev() {
        let g = &mut grads.layers[li];
        let dv2 = layer_norm_backward(&dx, &lc.norm2, &layer.ln2_gain, &mut g.ln2_gain, &mut g.ln2_bias);

        g.w2 = lc.act.t_matmul(&dv2);
        g.b2 = dv2.col_sums();
        let dact = dv2.matmul_t(&layer.w2);
        let mut dpre = dact;
        for (v, &z) in dpre.data.iter_mut().zip(&lc.pre_act.data) {
            *v *= gelu_grad(z);
        }
        g.w1 = lc.hidden.t_matmul(&dpre);
        g.b1 = dpre.col_sums();
        let mut dhidden = dpre.matmul_t(&layer.w1);
        dhidden.add_assign(&dv2);

        let du = layer_norm_backward(&dhidden, &lc.norm1, &layer.ln1_gain, &mut g.ln1_gain, &mut g.ln1_bias);

        g.wo = lc.concat.t_matmul(&du);
        g.bo = du.col_sums();
        let dconcat = du.matmul_t(&layer.wo);

        let mut dq_all = Matrix::zeros(j, d);
        let mut dk_all = Matrix::zeros(j, d);
        let mut dv_all = Matrix::zeros(j, d);
        for h in 0..heads {
            let a = &lc.attention[h];
            let dout = dconcat.columns(h * dk, dk);
            let da = dout.matmul_t(&lc.v[h]);
            let dv = a.t_matmul(&dout);
            let mut ds = Matrix::zeros(j, j);
            for r in 0..j {
                let arow = a.row(r);
                let darow = da.row(r);
                let dot: f64 = arow.iter().zip(darow).map(|(x, y)| x * y).sum();
                for (o, (&av, &dav)) in ds.row_mut(r).iter_mut().zip(arow.iter().zip(darow)) {
                    *o = av * (dav - dot) * scale;
                }
            }
            dq_all.set_columns(h * dk, &ds.matmul(&lc.k[h]));
            dk_all.set_columns(h * dk, &ds.t_matmul(&lc.q[h]));
            dv_all.set_columns(h * dk, &dv);
        }
        g.wq = lc.input.t_matmul(&dq_all);
        g.wk = lc.input.t_matmul(&dk_all);
        g.wv = lc.input.t_matmul(&dv_all);

        let mut dinput = du;
        dinput.add_assign(&dq_all.matmul_t(&layer.wq));
        dinput.add_assign(&dk_all.matmul_t(&layer.wk));
        dinput.add_assign(&dv_all.matmul_t(&layer.wv));
        dx = dinput;
    }

    for r in 0..j {
        for (p, v) in grads.position_embedding.row_mut(r).iter_mut().zip(dx.row(r)) {
            *p += v;
        }
    }
    if let Some(ids) = &cache.ids {
        for (r, &id) in ids.iter().enumerate() {
            for (t, v) in grads.token_embedding.row_mut(id as usize).iter_mut().zip(dx.row(r)) {
                *t += v;
            }
        }
    }
    (grads, dx)
}

/// Gradient of `logit[target_class]` with respect to each input token embedding.
pub fn grad_embeddings(params: &ModelParams, input: &ModelInput, target_class: usize) -> Result<Matrix> {
    check_input(params, input)?;
    if target_class > 1 {
        return Err(Error::Invalid(format!("target class {target_class} is not 0 or 1")));
    }
    let x = embed(params, &input.ids);
    let (_, cache) = forward_embedded(params, &x, &input.content)?;
    let mut dl = [0.0; 2];
    dl[target_class] = 1.0;
    Ok(backward(params, &cache, dl).1)
}
