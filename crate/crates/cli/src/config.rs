//! Run configuration: defaults, then a `key = value` file, then flags.
//!
//! Config file format: one `key = value` pair per line; blank lines and lines
//! starting with `#` are ignored; keys are the long flag names with `-` or `_`
//! (`ig-steps = 32` and `ig_steps = 32` are the same). List values are
//! comma-separated. Unknown keys are errors.

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::Args;
use dalign_core::pipeline::ScoreMethod;

use crate::ValidationError;

/// Which encoder layer the plain `attention` method reads.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerSelector {
    First,
    Last,
    /// 1-based.
    Index(usize),
}

impl FromStr for LayerSelector {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "first" => Ok(LayerSelector::First),
            "last" => Ok(LayerSelector::Last),
            _ => match s.parse::<usize>() {
                Ok(m) if m >= 1 => Ok(LayerSelector::Index(m)),
                _ => Err(format!("layer must be first, last or a 1-based index, got {s:?}")),
            },
        }
    }
}

impl LayerSelector {
    fn method(self) -> ScoreMethod {
        match self {
            LayerSelector::First => ScoreMethod::AttentionFirst,
            LayerSelector::Last => ScoreMethod::AttentionLast,
            LayerSelector::Index(m) => ScoreMethod::AttentionLayer(m),
        }
    }
}

/// Flags shared by every subcommand. Unset flags fall back to the config
/// file, then to the built-in defaults.
#[derive(Args, Debug, Default)]
pub struct ConfigArgs {
    /// Key-value config file
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Directory for every file a command writes, and default location of its inputs
    #[arg(long, global = true, env = "DALIGN_OUTPUT_DIR", value_name = "DIR")]
    pub output_dir: Option<PathBuf>,
    /// Dataset JSONL: {"id","code","label","fixed_code"}
    #[arg(long, global = true, value_name = "FILE")]
    pub dataset: Option<PathBuf>,
    #[arg(long, global = true, value_name = "FILE")]
    pub vocab: Option<PathBuf>,
    /// Model checkpoint
    #[arg(long, global = true, value_name = "FILE")]
    pub model: Option<PathBuf>,
    /// Relevance JSONL to evaluate
    #[arg(long, global = true, value_name = "FILE")]
    pub relevance: Option<PathBuf>,
    /// Ground-truth JSONL
    #[arg(long, global = true, value_name = "FILE")]
    pub ground_truth: Option<PathBuf>,
    /// Comma-separated: attention, attention-first, attention-last, attention-<m>, integrated-gradients
    #[arg(long, global = true, value_delimiter = ',')]
    pub methods: Option<Vec<String>>,
    /// Content tokens kept per function
    #[arg(long, global = true)]
    pub budget: Option<usize>,
    /// Quadrature nodes for integrated gradients
    #[arg(long, global = true)]
    pub ig_steps: Option<usize>,
    /// Layer read by the plain `attention` method: first, last or a 1-based index
    #[arg(long, global = true)]
    pub layer: Option<LayerSelector>,
    /// Score lines by absolute token relevance
    #[arg(long = "abs", global = true)]
    pub absolute: bool,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub vocab_size: Option<usize>,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    #[arg(long, global = true)]
    pub learning_rate: Option<f64>,
    #[arg(long, global = true)]
    pub d_model: Option<usize>,
    #[arg(long, global = true)]
    pub heads: Option<usize>,
    #[arg(long, global = true)]
    pub layers: Option<usize>,
    #[arg(long, global = true)]
    pub d_ff: Option<usize>,
    /// Functions generated by `synth`
    #[arg(long, global = true)]
    pub functions: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    pub dataset: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub relevance: Option<PathBuf>,
    pub ground_truth: Option<PathBuf>,
    pub methods: Vec<String>,
    pub budget: usize,
    pub ig_steps: usize,
    pub layer: LayerSelector,
    pub absolute: bool,
    pub seed: u64,
    pub vocab_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub d_ff: usize,
    pub functions: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            output_dir: PathBuf::from("."),
            dataset: None,
            vocab: None,
            model: None,
            relevance: None,
            ground_truth: None,
            methods: vec![
                "attention-first".into(),
                "attention-last".into(),
                "integrated-gradients".into(),
            ],
            budget: dalign_core::tokenizer::DEFAULT_BUDGET,
            ig_steps: dalign_core::microformer::DEFAULT_IG_STEPS,
            layer: LayerSelector::First,
            absolute: false,
            seed: 0,
            vocab_size: dalign_core::tokenizer::DEFAULT_VOCAB_SIZE,
            epochs: 10,
            learning_rate: 3e-3,
            d_model: 32,
            heads: 4,
            layers: 2,
            d_ff: 64,
            functions: 200,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| ValidationError(format!("config key {key}: {e}")).into())
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(ValidationError(format!("config key {key}: expected true or false, got {value:?}")).into()),
    }
}

/// `key = value` pairs of a config file, keys normalized to `_`.
pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            bail!(ValidationError(format!("config line {}: expected key = value", i + 1)));
        };
        out.insert(k.trim().replace('-', "_"), v.trim().to_string());
    }
    Ok(out)
}

impl RunConfig {
    fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let path = || Some(PathBuf::from(value));
        match key {
            "output_dir" => self.output_dir = PathBuf::from(value),
            "dataset" => self.dataset = path(),
            "vocab" => self.vocab = path(),
            "model" => self.model = path(),
            "relevance" => self.relevance = path(),
            "ground_truth" => self.ground_truth = path(),
            "methods" => {
                self.methods = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(String::from)
                    .collect()
            }
            "budget" => self.budget = parse(key, value)?,
            "ig_steps" => self.ig_steps = parse(key, value)?,
            "layer" => self.layer = parse(key, value)?,
            "abs" | "absolute" => self.absolute = parse_bool(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "vocab_size" => self.vocab_size = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "d_model" => self.d_model = parse(key, value)?,
            "heads" => self.heads = parse(key, value)?,
            "layers" => self.layers = parse(key, value)?,
            "d_ff" => self.d_ff = parse(key, value)?,
            "functions" => self.functions = parse(key, value)?,
            _ => bail!(ValidationError(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Defaults, overridden by the config file, overridden by flags.
    pub fn resolve(args: &ConfigArgs) -> Result<Self> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &args.config {
            let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
            for (k, v) in parse_config_text(&text)? {
                cfg.apply(&k, &v)?;
            }
        }
        macro_rules! take {
            ($($field:ident),*) => {
                $(if let Some(v) = &args.$field {
                    cfg.$field = v.clone().into();
                })*
            };
        }
        take!(
            output_dir, dataset, vocab, model, relevance, ground_truth, methods, budget, ig_steps, layer, seed,
            vocab_size, epochs, learning_rate, d_model, heads, layers, d_ff, functions
        );
        cfg.absolute |= args.absolute;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            bail!(ValidationError("method list is empty".into()));
        }
        if self.budget == 0 {
            bail!(ValidationError("budget must be positive".into()));
        }
        if self.ig_steps == 0 {
            bail!(ValidationError("ig_steps must be positive".into()));
        }
        Ok(())
    }

    pub fn score_methods(&self) -> Result<Vec<ScoreMethod>> {
        let mut out: Vec<ScoreMethod> = Vec::new();
        for m in &self.methods {
            let method = if m == "attention" {
                self.layer.method()
            } else {
                m.parse().map_err(|e: dalign_core::Error| ValidationError(e.to_string()))?
            };
            if !out.contains(&method) {
                out.push(method);
            }
        }
        Ok(out)
    }

    /// An explicit path, or `name` inside the output directory.
    pub fn path_or(&self, explicit: &Option<PathBuf>, name: &str) -> PathBuf {
        explicit.clone().unwrap_or_else(|| self.output_dir.join(name))
    }

    /// Like [`RunConfig::path_or`], but the file must exist.
    pub fn input(&self, explicit: &Option<PathBuf>, name: &str, what: &str) -> Result<PathBuf> {
        let path = self.path_or(explicit, name);
        if !path.is_file() {
            return Err(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("{what} file {} does not exist", path.display()),
            )
            .into());
        }
        Ok(path)
    }

    pub fn output(&self, name: &str) -> Result<PathBuf> {
        fs::create_dir_all(&self.output_dir)
            .with_context(|| format!("creating output directory {}", self.output_dir.display()))?;
        Ok(self.output_dir.join(name))
    }
}
