//! Independent oracles, shared by the acceptance gate and the integration
//! tests. Every check returns a one-line detail on success and a description
//! of the first violation on failure.

use std::collections::BTreeSet;

use dalign_core::groundtruth::{line_diff, Edit};
use dalign_core::metric::{da_from_masses, detection_alignment, fuzzy_masses, FuzzyLineSet};
use dalign_core::microformer::{
    backward, embed, forward, forward_embedded, integrated_gradients_positions, IgConfig, ModelConfig, ModelInput,
    ModelParams,
};
use dalign_core::relevance::{incoming_attention, LineRelevanceVector};
use dalign_core::synthetic::{generate, SyntheticConfig};
use dalign_core::text::line_spans;
use dalign_core::tokenizer::{train_bpe, DEFAULT_BUDGET};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Check = Result<String, String>;

fn rel(values: Vec<f64>) -> LineRelevanceVector {
    LineRelevanceVector {
        function_id: "f".into(),
        method: "m".into(),
        values,
    }
}

fn indicator(g: &[f64]) -> FuzzyLineSet {
    FuzzyLineSet {
        memberships: g.to_vec(),
    }
}

fn da(r: &[f64], g: &[f64], predicted: u8) -> f64 {
    detection_alignment(&rel(r.to_vec()), &indicator(g), predicted)
        .expect("valid input")
        .da
}

/// The two published per-sample values, from masses and from a concrete
/// line vector realizing the same masses.
pub fn worked_examples() -> (Check, Check) {
    let jaccard = {
        let from_masses = da_from_masses(0.3538, 8.3921);
        // one ground-truth line at 0.3538; eight others sharing 7.3921
        let mut r = vec![0.3538];
        r.extend(std::iter::repeat_n(7.3921 / 8.0, 8));
        let mut g = vec![0.0; 9];
        g[0] = 1.0;
        let res = detection_alignment(&rel(r), &indicator(&g), 1).expect("valid");
        let ok = (from_masses - 0.0421).abs() <= 5e-4
            && (res.da - 0.0421).abs() <= 5e-4
            && (res.intersection_mass - 0.3538).abs() < 1e-12
            && (res.union_mass - 8.3921).abs() < 1e-12;
        let detail = format!("DA = {from_masses:.5} from masses, {:.5} from vectors", res.da);
        if ok {
            Ok(detail)
        } else {
            Err(detail)
        }
    };
    let zero = {
        let from_masses = da_from_masses(0.0, 1.0);
        let res = detection_alignment(&rel(vec![0.0; 5]), &indicator(&[0.0, 0.0, 1.0, 0.0, 0.0]), 1).expect("valid");
        let detail = format!(
            "DA = {from_masses} from masses; vector masses {} / {}",
            res.intersection_mass, res.union_mass
        );
        if from_masses == 0.0 && res.da == 0.0 && res.intersection_mass == 0.0 && res.union_mass == 1.0 {
            Ok(detail)
        } else {
            Err(detail)
        }
    };
    (jaccard, zero)
}

fn random_case(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    let n = rng.gen_range(1..=40);
    let mut g: Vec<f64> = (0..n).map(|_| f64::from(u8::from(rng.gen_bool(0.3)))).collect();
    if g.iter().all(|&x| x == 0.0) {
        g[rng.gen_range(0..n)] = 1.0;
    }
    let r = match rng.gen_range(0..4) {
        // exact alignment
        0 => g.clone(),
        // sparse, with exact zeros and ones
        1 => (0..n)
            .map(|_| match rng.gen_range(0..3) {
                0 => 0.0,
                1 => 1.0,
                _ => rng.gen(),
            })
            .collect(),
        _ => (0..n).map(|_| rng.gen()).collect(),
    };
    (r, g)
}

pub fn benign_rule(cases: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for k in 0..cases {
        let (r, g) = random_case(&mut rng);
        let res = detection_alignment(&rel(r.clone()), &indicator(&g), 0).expect("valid");
        if res.da != 0.0 || res.excluded {
            return Err(format!("case {k}: r={r:?} g={g:?} gave {res:?}"));
        }
    }
    Ok(format!("{cases} random benign-predicted samples all scored 0"))
}

/// Range, alignment iff, disjointness, monotonicity inside/outside the
/// ground truth, and symmetry of the masses.
pub fn da_invariants(cases: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = Vec::new();
    for k in 0..cases {
        let (r, g) = random_case(&mut rng);
        let d = da(&r, &g, 1);
        if !(0.0..=1.0).contains(&d) {
            violations.push(format!("case {k}: range {d}"));
        }
        if (d == 1.0) != (r == g) {
            violations.push(format!("case {k}: DA={d} but aligned={}", r == g));
        }
        let mut disjoint = r.clone();
        for (x, &m) in disjoint.iter_mut().zip(&g) {
            if m == 1.0 {
                *x = 0.0;
            }
        }
        if da(&disjoint, &g, 1) != 0.0 {
            violations.push(format!("case {k}: disjoint relevance scored nonzero"));
        }
        let i = rng.gen_range(0..r.len());
        let mut raised = r.clone();
        raised[i] = rng.gen_range(r[i]..=1.0);
        let d_raised = da(&raised, &g, 1);
        let ok = if g[i] == 1.0 {
            d_raised >= d - 1e-12
        } else {
            d_raised <= d + 1e-12
        };
        if !ok {
            violations.push(format!("case {k}: raising line {i} moved DA {d} -> {d_raised}"));
        }
        let (i1, u1) = fuzzy_masses(&r, &g);
        let (i2, u2) = fuzzy_masses(&g, &r);
        if i1 != i2 || u1 != u2 {
            violations.push(format!("case {k}: masses not symmetric"));
        }
    }
    match violations.first() {
        None => Ok(format!("{cases} random vectors, 0 violations")),
        Some(v) => Err(format!("{} violations, first: {v}", violations.len())),
    }
}

fn random_config(rng: &mut ChaCha8Rng) -> ModelConfig {
    let heads = [1, 2, 4][rng.gen_range(0..3)];
    let d_model = heads * rng.gen_range(1..=16 / heads);
    ModelConfig {
        vocab_size: rng.gen_range(4..=12),
        d_model,
        heads,
        layers: rng.gen_range(1..=2),
        d_ff: rng.gen_range(2..=16),
        max_len: 8,
    }
}

fn random_input(rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> ModelInput {
    let j = rng.gen_range(1..=cfg.max_len);
    let ids = (0..j).map(|_| rng.gen_range(0..cfg.vocab_size as u32)).collect();
    let mut content = vec![true; j];
    if j >= 3 {
        content[0] = false;
        content[j - 1] = false;
    }
    ModelInput { ids, content }
}

/// Perturbs the initialization so biases and gains are not at their neutral values.
fn jitter(params: &mut ModelParams, rng: &mut ChaCha8Rng) {
    for m in params.tensors_mut() {
        for v in &mut m.data {
            *v += rng.gen_range(-0.2..0.2);
        }
    }
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// Analytic gradients of a random linear functional of the logits, against
/// central differences with step 1e-4, for every parameter the input touches
/// and every input embedding entry.
pub fn gradient_check(configs: usize, seed: u64) -> Check {
    const H: f64 = 1e-4;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    for k in 0..configs {
        let cfg = random_config(&mut rng);
        let mut params = ModelParams::init(cfg, rng.gen()).expect("valid config");
        jitter(&mut params, &mut rng);
        let input = random_input(&mut rng, &cfg);
        let c = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let objective = |p: &ModelParams, x: Option<&dalign_core::microformer::Matrix>| {
            let logits = match x {
                Some(x) => forward_embedded(p, x, &input.content).expect("forward").0.logits,
                None => forward(p, &input).expect("forward").logits,
            };
            c[0] * logits[0] + c[1] * logits[1]
        };

        let (_, cache) = dalign_core::microformer::forward_cached(&params, &input).expect("forward");
        let (grads, _) = backward(&params, &cache, c);
        let x = embed(&params, &input.ids);
        let (_, cache_x) = forward_embedded(&params, &x, &input.content).expect("forward");
        let (_, dx) = backward(&params, &cache_x, c);

        let used: BTreeSet<usize> = input.ids.iter().map(|&i| i as usize).collect();
        let names: Vec<String> = params.tensors().into_iter().map(|(n, _)| n).collect();
        let analytic: Vec<Vec<f64>> = grads.tensors().into_iter().map(|(_, m)| m.data.clone()).collect();
        let d = cfg.d_model;
        for (t, name) in names.iter().enumerate() {
            let len = analytic[t].len();
            for e in 0..len {
                let touched = match name.as_str() {
                    "token_embedding" => used.contains(&(e / d)),
                    "position_embedding" => e / d < input.len(),
                    _ => true,
                };
                let a = analytic[t][e];
                if !touched {
                    if a != 0.0 {
                        return Err(format!("config {k}: {name}[{e}] untouched but gradient {a}"));
                    }
                    continue;
                }
                let mut p = params.clone();
                p.tensors_mut()[t].data[e] += H;
                let up = objective(&p, None);
                p.tensors_mut()[t].data[e] -= 2.0 * H;
                let down = objective(&p, None);
                let n = (up - down) / (2.0 * H);
                let err = rel_err(a, n);
                worst = worst.max(err);
                checked += 1;
                if err >= 1e-4 {
                    return Err(format!("config {k} {cfg:?}: {name}[{e}] analytic {a} numeric {n} rel {err:.2e}"));
                }
            }
        }
        for e in 0..x.data.len() {
            let mut xp = x.clone();
            xp.data[e] += H;
            let up = objective(&params, Some(&xp));
            xp.data[e] -= 2.0 * H;
            let down = objective(&params, Some(&xp));
            let n = (up - down) / (2.0 * H);
            let err = rel_err(dx.data[e], n);
            worst = worst.max(err);
            checked += 1;
            if err >= 1e-4 {
                return Err(format!("config {k}: input[{e}] analytic {} numeric {n} rel {err:.2e}", dx.data[e]));
            }
        }
    }
    Ok(format!("{configs} configs, {checked} entries, max relative error {worst:.2e}"))
}

fn ig_model(rng: &mut ChaCha8Rng) -> (ModelParams, ModelInput) {
    let cfg = ModelConfig {
        vocab_size: 12,
        d_model: 8,
        heads: 2,
        layers: 2,
        d_ff: 16,
        max_len: 8,
    };
    let mut params = ModelParams::init(cfg, rng.gen()).expect("valid");
    jitter(&mut params, rng);
    let j = rng.gen_range(3..=8);
    // pad (id 11) is the baseline token; content draws from the rest
    let mut ids: Vec<u32> = (0..j).map(|_| rng.gen_range(0..9)).collect();
    ids[0] = 9;
    ids[j - 1] = 10;
    let mut content = vec![true; j];
    content[0] = false;
    content[j - 1] = false;
    (params, ModelInput { ids, content })
}

/// Completeness at 128 nodes on random models, then convergence over the
/// node counts 8..128 on each model that was tested.
pub fn ig_completeness(models: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg128 = IgConfig::new(128, 11).expect("steps");
    let mut tested = 0;
    let mut worst = 0.0f64;
    let mut attempts = 0;
    while tested < models {
        attempts += 1;
        if attempts > 10 * models {
            return Err(format!("only {tested} of {attempts} random models had |F(x) - F(x')| > 1e-3"));
        }
        let (params, input) = ig_model(&mut rng);
        let (r, fx, fb) = integrated_gradients_positions(&params, &input, &cfg128).expect("ig");
        let gap = fx - fb;
        if gap.abs() <= 1e-3 {
            continue;
        }
        tested += 1;
        let err = (r.iter().sum::<f64>() - gap).abs() / gap.abs();
        worst = worst.max(err);
        if err >= 0.01 {
            return Err(format!("model {tested}: completeness error {err:.3e} at 128 nodes"));
        }
        // error may only grow by the 10% slack, above an absolute roundoff floor
        let floor = 1e-9 * gap.abs().max(1.0);
        let mut prev: Option<(usize, f64)> = None;
        for s in [8, 16, 32, 64, 128] {
            let (r, _, _) = integrated_gradients_positions(&params, &input, &IgConfig::new(s, 11).expect("steps"))
                .expect("ig");
            let e = (r.iter().sum::<f64>() - gap).abs();
            if let Some((ps, pe)) = prev {
                if e > 1.1 * pe + floor {
                    return Err(format!("model {tested}: error rose from {pe:.3e} at {ps} to {e:.3e} at {s} nodes"));
                }
            }
            prev = Some((s, e));
        }
    }
    Ok(format!("{tested} models, worst relative completeness error {worst:.2e} at 128 nodes; convergence monotone"))
}

/// Incoming attention over all positions sums to heads x J; every softmax
/// row sums to 1 and is non-negative.
pub fn attention_conservation(samples: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst_total = 0.0f64;
    let mut worst_row = 0.0f64;
    for k in 0..samples {
        let mut cfg = random_config(&mut rng);
        cfg.max_len = rng.gen_range(3..=64);
        let mut params = ModelParams::init(cfg, rng.gen()).expect("valid");
        jitter(&mut params, &mut rng);
        let input = random_input(&mut rng, &cfg);
        let trace = forward(&params, &input).expect("forward");
        let j = input.len();
        for m in 1..=cfg.layers {
            let attn = trace
                .attention_tensor(m, "f", input.special_positions(), vec![0; j - input.special_positions().len()])
                .expect("layer");
            for row in attn.values.chunks(j) {
                if row.iter().any(|&v| v < 0.0) {
                    return Err(format!("sample {k}: negative attention weight"));
                }
                worst_row = worst_row.max((row.iter().sum::<f64>() - 1.0).abs());
            }
            let total: f64 = incoming_attention(&attn).map_err(|e| e.to_string())?.iter().sum();
            worst_total = worst_total.max((total - (cfg.heads * j) as f64).abs());
        }
    }
    if worst_total < 1e-4 && worst_row < 1e-6 {
        Ok(format!(
            "{samples} random forward passes; max |sum - H*J| {worst_total:.1e}, max |row - 1| {worst_row:.1e}"
        ))
    } else {
        Err(format!("max |sum - H*J| {worst_total:.2e}, max |row - 1| {worst_row:.2e}"))
    }
}

/// A corpus of `n` functions: synthetic code, some with non-ASCII text,
/// CRLF endings, blank lines, and some long enough to be truncated.
pub fn tokenizer_corpus(n: usize, seed: u64) -> Vec<String> {
    let base = generate(&SyntheticConfig {
        functions: n,
        seed,
        ..Default::default()
    });
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    base.into_iter()
        .enumerate()
        .map(|(k, f)| match k % 10 {
            0 => f.code.replace("total", "Σtotal /* größe ✓ */"),
            1 => f.code.replace('\n', "\r\n"),
            2 => f.code.replace(";\n", ";\n\n"),
            3 => f.code.repeat(rng.gen_range(8..16)),
            4 => f.code.trim_end().to_string(),
            _ => f.code,
        })
        .collect()
}

pub fn tokenizer(n: usize, seed: u64) -> Check {
    let corpus = tokenizer_corpus(n, seed);
    let vocab = train_bpe(&corpus, 1024).map_err(|e| e.to_string())?;
    let mut truncated = 0;
    for (k, code) in corpus.iter().enumerate() {
        let full = vocab.encode("f", code, usize::MAX);
        let decoded = vocab.decode(&full.ids()).map_err(|e| e.to_string())?;
        if &decoded != code {
            return Err(format!("function {k}: decode(encode(x)) != x"));
        }
        let spans = line_spans(code.as_bytes());
        if full.line_count != spans.len() {
            return Err(format!("function {k}: {} lines, expected {}", full.line_count, spans.len()));
        }
        for t in &full.tokens {
            let line = &spans[t.line_index];
            if t.byte_span.start < line.start || t.byte_span.end > line.end || t.byte_span.is_empty() {
                return Err(format!("function {k}: token {:?} leaves line {}", t.byte_span, t.line_index));
            }
        }
        let cut = vocab.encode("f", code, DEFAULT_BUDGET);
        let expect_cut = full.tokens.len() > DEFAULT_BUDGET;
        truncated += usize::from(cut.truncated);
        if cut.truncated != expect_cut || cut.tokens[..] != full.tokens[..full.tokens.len().min(DEFAULT_BUDGET)] {
            return Err(format!("function {k}: truncation flag or prefix wrong"));
        }
    }
    if truncated == 0 {
        return Err("corpus never exceeds the budget; truncation untested".into());
    }
    Ok(format!("{n} functions round-trip, all tokens single-line, {truncated} truncated at {DEFAULT_BUDGET}"))
}

/// LCS length by the textbook prefix recurrence (sequences up to 15 long).
fn lcs_len(a: &[u8], b: &[u8]) -> usize {
    let mut prev = [0u8; 16];
    for &x in a {
        let mut cur = [0u8; 16];
        for (j, &y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        prev = cur;
    }
    prev[b.len()] as usize
}

fn is_subsequence(needle: impl Iterator<Item = u8>, hay: &[u8]) -> bool {
    let mut it = hay.iter();
    needle.into_iter().all(|x| it.any(|&y| y == x))
}

/// Number of kept lines, after checking the script walks both sides in
/// order and only keeps equal lines.
fn kept(a: &[u8], b: &[u8], script: &[Edit]) -> Result<usize, String> {
    let (mut i, mut j, mut k) = (0, 0, 0);
    for e in script {
        match *e {
            Edit::Keep { a: x, b: y } if x == i && y == j && a[x] == b[y] => {
                k += 1;
                i += 1;
                j += 1;
            }
            Edit::Delete { a: x } if x == i => i += 1,
            Edit::Insert { b: y } if y == j => j += 1,
            _ => return Err(format!("malformed script for {a:?} -> {b:?}: {script:?}")),
        }
    }
    if i != a.len() || j != b.len() {
        return Err(format!("script for {a:?} -> {b:?} does not cover both sides"));
    }
    Ok(k)
}

fn all_sequences(max_len: usize, symbols: u8) -> Vec<Vec<u8>> {
    let mut out = vec![Vec::new()];
    let mut frontier = vec![Vec::new()];
    for _ in 0..max_len {
        frontier = frontier
            .iter()
            .flat_map(|s: &Vec<u8>| {
                (0..symbols).map(move |c| {
                    let mut t = s.clone();
                    t.push(c);
                    t
                })
            })
            .collect();
        out.extend(frontier.iter().cloned());
    }
    out
}

/// Brute force: the maximum size of a subset of `a` that is a subsequence of `b`.
fn brute_lcs(a: &[u8], b: &[u8]) -> usize {
    (0u32..1 << a.len())
        .filter(|mask| is_subsequence((0..a.len()).filter(|i| mask >> i & 1 == 1).map(|i| a[i]), b))
        .map(u32::count_ones)
        .max()
        .unwrap_or(0) as usize
}

struct Walk<'a> {
    a: &'a [u8],
    max_len: usize,
    b: Vec<u8>,
    pairs: u64,
}

impl Walk<'_> {
    /// Visits every extension of `self.b`; `col[i]` is the LCS length of
    /// `a[..i]` and the current `b`.
    fn visit(&mut self, col: &[u8; 16]) -> Result<(), String> {
        let (a, b) = (self.a, &self.b[..]);
        let k = kept(a, b, &line_diff(a, b))?;
        if k != col[a.len()] as usize {
            return Err(format!("{a:?} -> {b:?}: kept {k} lines, LCS is {}", col[a.len()]));
        }
        self.pairs += 1;
        if self.b.len() == self.max_len {
            return Ok(());
        }
        for c in 0..3 {
            let mut next = [0u8; 16];
            for (i, &x) in a.iter().enumerate() {
                next[i + 1] = if x == c { col[i] + 1 } else { col[i + 1].max(next[i]) };
            }
            self.b.push(c);
            self.visit(&next)?;
            self.b.pop();
        }
        Ok(())
    }
}

/// Every pair of sequences up to `max_len` symbols over a 3-letter alphabet:
/// the diff's kept set must be a common subsequence of maximum length, with
/// the length from the prefix recurrence. Subset enumeration confirms the
/// recurrence on pairs up to `brute_len`.
pub fn ground_truth_oracle(max_len: usize, brute_len: usize) -> Check {
    let mut pairs = 0u64;
    for a in &all_sequences(max_len, 3) {
        let mut walk = Walk {
            a,
            max_len,
            b: Vec::with_capacity(max_len),
            pairs: 0,
        };
        walk.visit(&[0; 16])?;
        pairs += walk.pairs;
    }
    let small = all_sequences(brute_len, 3);
    for a in &small {
        for b in &small {
            if brute_lcs(a, b) != lcs_len(a, b) {
                return Err(format!("recurrence disagrees with subset enumeration on {a:?} / {b:?}"));
            }
        }
    }
    Ok(format!(
        "{pairs} pairs up to {max_len} lines; recurrence cross-checked by enumeration on {} pairs",
        small.len() * small.len()
    ))
}
