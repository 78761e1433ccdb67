//! Seeded generator of small C-like functions for end-to-end runs.
//!
//! Vulnerable functions contain one marker line (an unbounded `gets` call);
//! their fixed version replaces exactly that line, so the diff-derived ground
//! truth is the marker line. Benign functions never contain the marker.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const MARKER_LINE: &str = "    gets(buf);";
pub const FIXED_LINE: &str = "    read_line(buf, sizeof(buf));";

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub functions: usize,
    pub vulnerable_fraction: f64,
    pub min_body_lines: usize,
    pub max_body_lines: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            functions: 200,
            vulnerable_fraction: 0.5,
            min_body_lines: 4,
            max_body_lines: 9,
            seed: 0,
        }
    }
}

/// One dataset row, in the same shape as the dataset JSONL.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticFunction {
    pub id: String,
    pub code: String,
    pub label: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_code: Option<String>,
    /// 0-based line of the marker in `code`.
    #[serde(skip)]
    pub marker_line: Option<usize>,
}

const VARS: [&str; 8] = ["i", "n", "len", "count", "idx", "total", "size", "off"];

fn statement(rng: &mut ChaCha8Rng) -> String {
    let v = VARS.choose(rng).expect("non-empty");
    let w = VARS.choose(rng).expect("non-empty");
    let n: u32 = rng.gen_range(0..64);
    match rng.gen_range(0..8) {
        0 => format!("    int {v}_{n} = {n};"),
        1 => format!("    {v} = {w} + {n};"),
        2 => format!("    if ({v} > {n}) {w} = {n};"),
        3 => format!("    total += {v} * {n};"),
        4 => format!("    printf(\"%d\\n\", {v});"),
        5 => format!("    memset(buf, 0, {n});"),
        6 => format!("    {v} = compute({w}, {n});"),
        _ => format!("    for ({v} = 0; {v} < {n}; {v}++) total++;"),
    }
}

pub fn generate(cfg: &SyntheticConfig) -> Vec<SyntheticFunction> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n_vulnerable = (cfg.functions as f64 * cfg.vulnerable_fraction).round() as usize;
    let mut labels: Vec<u8> = (0..cfg.functions).map(|i| u8::from(i < n_vulnerable)).collect();
    labels.shuffle(&mut rng);
    let max_body = cfg.max_body_lines.max(cfg.min_body_lines);

    labels
        .into_iter()
        .enumerate()
        .map(|(k, label)| {
            let a = VARS.choose(&mut rng).expect("non-empty");
            let mut lines = vec![
                format!("int fn_{k}(int {a}, int n) {{"),
                format!("    char buf[{}];", rng.gen_range(8..128)),
            ];
            let body = rng.gen_range(cfg.min_body_lines..=max_body);
            lines.extend((0..body).map(|_| statement(&mut rng)));
            lines.push(format!("    return {a};"));
            lines.push("}".to_string());

            let id = format!("synthetic-{k:05}");
            if label == 0 {
                return SyntheticFunction {
                    id,
                    code: lines.join("\n") + "\n",
                    label,
                    fixed_code: None,
                    marker_line: None,
                };
            }
            // after the buffer declaration, before the return
            let at = rng.gen_range(2..lines.len() - 1);
            let mut fixed = lines.clone();
            lines.insert(at, MARKER_LINE.to_string());
            fixed.insert(at, FIXED_LINE.to_string());
            SyntheticFunction {
                id,
                code: lines.join("\n") + "\n",
                label,
                fixed_code: Some(fixed.join("\n") + "\n"),
                marker_line: Some(at),
            }
        })
        .collect()
}
