use std::collections::HashMap;
use std::fs;

use anyhow::{Context, Result};
use dalign_core::groundtruth::GroundTruth;
use dalign_core::metric::{DaResult, EvalSummary};
use dalign_core::microformer::{
    train_toy, Checkpoint, IgConfig, LabeledInput, ModelConfig, ModelInput, ModelParams, TrainConfig,
};
use dalign_core::pipeline::{
    evaluate, extract_ground_truths, heat_csv, read_jsonl, report_table, write_jsonl, DatasetRecord, LineRecord,
    Scorer,
};
use dalign_core::relevance::TokenRelevanceRecord;
use dalign_core::synthetic::{generate, SyntheticConfig};
use dalign_core::tokenizer::{train_bpe, Vocabulary};
use log::{info, warn};
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::ValidationError;

pub const DATASET: &str = "dataset.jsonl";
pub const GROUND_TRUTH: &str = "ground_truth.jsonl";
pub const VOCAB: &str = "vocab.json";
pub const MODEL: &str = "model.ckpt";
pub const RELEVANCE: &str = "relevance.jsonl";
pub const RESULTS: &str = "results.jsonl";
pub const LINES: &str = "lines.jsonl";
pub const SUMMARY: &str = "summary.json";
pub const REPORT: &str = "report.txt";
pub const HEATMAP: &str = "heatmap.csv";

fn load_dataset(cfg: &RunConfig) -> Result<Vec<DatasetRecord>> {
    let path = cfg.input(&cfg.dataset, DATASET, "dataset")?;
    let rows: Vec<DatasetRecord> = read_jsonl(&path)?;
    dalign_core::pipeline::ensure_unique(rows.iter().map(|r| r.id.as_str()), &path.display().to_string())?;
    if let Some(r) = rows.iter().find(|r| r.label > 1) {
        return Err(ValidationError(format!("{}: label {} is not 0 or 1", r.id, r.label)).into());
    }
    Ok(rows)
}

pub fn synth(cfg: &RunConfig) -> Result<()> {
    let rows: Vec<DatasetRecord> = generate(&SyntheticConfig {
        functions: cfg.functions,
        seed: cfg.seed,
        ..Default::default()
    })
    .into_iter()
    .map(|f| DatasetRecord {
        id: f.id,
        code: f.code,
        label: f.label,
        fixed_code: f.fixed_code,
    })
    .collect();
    let out = cfg.output(DATASET)?;
    write_jsonl(&out, &rows)?;
    println!("wrote {} functions to {}", rows.len(), out.display());
    Ok(())
}

pub fn extract_gt(cfg: &RunConfig) -> Result<()> {
    let rows = load_dataset(cfg)?;
    let (truths, warnings) = extract_ground_truths(&rows);
    for w in &warnings {
        warn!("{w}");
    }
    let out = cfg.path_or(&cfg.ground_truth, GROUND_TRUTH);
    if cfg.ground_truth.is_none() {
        cfg.output(GROUND_TRUTH)?;
    }
    write_jsonl(&out, &truths)?;
    let empty = truths.iter().filter(|g| g.is_empty()).count();
    println!(
        "wrote {} ground-truth entries ({empty} empty) to {}",
        truths.len(),
        out.display()
    );
    Ok(())
}

pub fn train_vocab(cfg: &RunConfig) -> Result<()> {
    let rows = load_dataset(cfg)?;
    let corpus: Vec<&str> = rows.iter().map(|r| r.code.as_str()).collect();
    let vocab = train_bpe(&corpus, cfg.vocab_size)?;
    let out = cfg.output(VOCAB)?;
    vocab.save(&out)?;
    println!(
        "wrote vocabulary of {} ids ({} merges) to {}",
        vocab.len(),
        vocab.merges().len(),
        out.display()
    );
    Ok(())
}

fn load_vocab(cfg: &RunConfig) -> Result<Vocabulary> {
    Ok(Vocabulary::load(cfg.input(&cfg.vocab, VOCAB, "vocabulary")?)?)
}

pub fn train_model(cfg: &RunConfig) -> Result<()> {
    let rows = load_dataset(cfg)?;
    let vocab = load_vocab(cfg)?;
    let data: Vec<LabeledInput> = rows
        .iter()
        .filter_map(|r| {
            let tokens = vocab.encode(&r.id, &r.code, cfg.budget);
            if tokens.tokens.is_empty() {
                warn!("{}: empty function; skipped", r.id);
                return None;
            }
            Some(LabeledInput {
                input: ModelInput::from_tokens(&tokens, vocab.specials()),
                label: r.label,
            })
        })
        .collect();
    let config = ModelConfig {
        vocab_size: vocab.len(),
        d_model: cfg.d_model,
        heads: cfg.heads,
        layers: cfg.layers,
        d_ff: cfg.d_ff,
        max_len: cfg.budget + 2,
    };
    let init = ModelParams::init(config, cfg.seed)?;
    let outcome = train_toy(
        &init,
        &data,
        &TrainConfig {
            epochs: cfg.epochs,
            learning_rate: cfg.learning_rate,
            seed: cfg.seed,
            ..TrainConfig::default()
        },
    )?;
    for e in &outcome.history {
        info!(
            "epoch {}: train loss {:.4}, validation loss {:.4}, validation F1 {:.4}",
            e.epoch, e.train_loss, e.validation_loss, e.validation_f1
        );
    }
    let out = cfg.output(MODEL)?;
    Checkpoint::new(outcome.params, cfg.seed, &vocab).save(&out)?;
    println!(
        "wrote checkpoint to {} (best epoch {}, validation F1 {:.4})",
        out.display(),
        outcome.best_epoch,
        outcome.best_f1
    );
    Ok(())
}

pub fn score(cfg: &RunConfig) -> Result<()> {
    let rows = load_dataset(cfg)?;
    let vocab = load_vocab(cfg)?;
    let model_path = cfg.input(&cfg.model, MODEL, "checkpoint")?;
    let checkpoint = Checkpoint::load(&model_path)?;
    checkpoint.check_vocab(&vocab)?;
    let params = &checkpoint.params;
    if cfg.budget + 2 > params.config.max_len {
        return Err(ValidationError(format!(
            "budget {} needs {} positions but the model has {}",
            cfg.budget,
            cfg.budget + 2,
            params.config.max_len
        ))
        .into());
    }
    let methods = cfg.score_methods()?;
    for m in &methods {
        if let Some(layer) = m.layer(params.config.layers) {
            if layer > params.config.layers {
                return Err(ValidationError(format!("{m}: model has {} layers", params.config.layers)).into());
            }
        }
    }
    let scorer = Scorer {
        vocab: &vocab,
        params,
        specials: checkpoint.specials,
        methods,
        budget: cfg.budget,
        ig: IgConfig::new(cfg.ig_steps, checkpoint.specials.pad)?,
    };
    // indexed collect keeps input order
    let scored: Vec<dalign_core::Result<Vec<TokenRelevanceRecord>>> =
        rows.par_iter().map(|r| scorer.score(&r.id, &r.code)).collect();
    let mut records = Vec::new();
    for (row, result) in rows.iter().zip(scored) {
        match result {
            Ok(recs) => records.extend(recs),
            Err(dalign_core::Error::EmptySequence) => warn!("{}: empty function; skipped", row.id),
            Err(e) => return Err(anyhow::Error::new(e).context(format!("scoring {}", row.id))),
        }
    }
    let out = cfg.path_or(&cfg.relevance, RELEVANCE);
    if cfg.relevance.is_none() {
        cfg.output(RELEVANCE)?;
    }
    write_jsonl(&out, &records)?;
    println!("wrote {} relevance records to {}", records.len(), out.display());
    Ok(())
}

pub fn evaluate_cmd(cfg: &RunConfig) -> Result<()> {
    let records: Vec<TokenRelevanceRecord> = read_jsonl(cfg.input(&cfg.relevance, RELEVANCE, "relevance")?)?;
    let truths: Vec<GroundTruth> = read_jsonl(cfg.input(&cfg.ground_truth, GROUND_TRUTH, "ground-truth")?)?;
    let labels: Option<HashMap<String, u8>> = match &cfg.dataset {
        Some(_) => Some(load_dataset(cfg)?.into_iter().map(|r| (r.id, r.label)).collect()),
        None => None,
    };
    let e = evaluate(&records, &truths, labels.as_ref(), cfg.absolute)?;
    write_jsonl(cfg.output(RESULTS)?, &e.results)?;
    write_jsonl(cfg.output(LINES)?, &e.lines)?;
    let summary = serde_json::to_string_pretty(&e.summary)? + "\n";
    let summary_path = cfg.output(SUMMARY)?;
    fs::write(&summary_path, summary).with_context(|| format!("writing {}", summary_path.display()))?;
    print!("{}", report_table(&e.summary));
    Ok(())
}

pub fn report(cfg: &RunConfig) -> Result<()> {
    let summary_path = cfg.input(&None, SUMMARY, "summary")?;
    let text = fs::read_to_string(&summary_path).with_context(|| format!("reading {}", summary_path.display()))?;
    let summary: EvalSummary = serde_json::from_str(&text)?;
    let lines: Vec<LineRecord> = read_jsonl(cfg.input(&None, LINES, "line relevance")?)?;
    // per-sample results are optional; they only add a count
    let results_path = cfg.output_dir.join(RESULTS);
    if results_path.is_file() {
        let results: Vec<DaResult> = read_jsonl(&results_path)?;
        info!("{} per-sample results", results.len());
    }
    let table = report_table(&summary);
    fs::write(cfg.output(REPORT)?, &table)?;
    fs::write(cfg.output(HEATMAP)?, heat_csv(&lines))?;
    print!("{table}");
    Ok(())
}
