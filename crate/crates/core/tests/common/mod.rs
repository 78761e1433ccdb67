//! Desk-scale end-to-end run shared by the acceptance and integration tests.

#![allow(dead_code)]

pub mod checks;

use std::collections::{BTreeSet, HashMap};

use dalign_core::groundtruth::GroundTruth;
use dalign_core::metric::EvalSummary;
use dalign_core::microformer::{evaluate_f1, train_toy, IgConfig, LabeledInput, ModelConfig, ModelInput, ModelParams, TrainConfig};
use dalign_core::pipeline::{evaluate, extract_ground_truths, DatasetRecord, ScoreMethod, Scorer};
use dalign_core::relevance::TokenRelevanceRecord;
use dalign_core::synthetic::{generate, SyntheticConfig, SyntheticFunction};
use dalign_core::tokenizer::{train_bpe, Vocabulary, DEFAULT_BUDGET};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub struct DeskRun {
    pub test_f1: f64,
    pub best_epoch: usize,
    pub planted: EvalSummary,
    pub control: EvalSummary,
    pub records: Vec<TokenRelevanceRecord>,
    pub truths: Vec<GroundTruth>,
}

pub fn to_record(f: &SyntheticFunction) -> DatasetRecord {
    DatasetRecord {
        id: f.id.clone(),
        code: f.code.clone(),
        label: f.label,
        fixed_code: f.fixed_code.clone(),
    }
}

pub fn labeled(vocab: &Vocabulary, data: &[SyntheticFunction]) -> Vec<LabeledInput> {
    data.iter()
        .map(|f| LabeledInput {
            input: ModelInput::from_tokens(&vocab.encode(&f.id, &f.code, DEFAULT_BUDGET), vocab.specials()),
            label: f.label,
        })
        .collect()
}

/// Same-size random line set per function: the chance-alignment control.
pub fn shuffled_truths(truths: &[GroundTruth], seed: u64) -> Vec<GroundTruth> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    truths
        .iter()
        .map(|g| GroundTruth {
            function_id: g.function_id.clone(),
            vulnerable_lines: sample(&mut rng, g.line_count, g.vulnerable_lines.len())
                .into_iter()
                .collect::<BTreeSet<_>>(),
            line_count: g.line_count,
        })
        .collect()
}

/// Knobs of the desk-scale run.
pub struct DeskConfig {
    pub seed: u64,
    pub layers: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub ig_steps: usize,
}

impl Default for DeskConfig {
    fn default() -> Self {
        DeskConfig {
            seed: 7,
            layers: 1,
            epochs: 10,
            learning_rate: 1e-2,
            ig_steps: 32,
        }
    }
}

pub fn desk_run(dc: &DeskConfig) -> DeskRun {
    let seed = dc.seed;
    let train = generate(&SyntheticConfig {
        functions: 240,
        seed,
        ..Default::default()
    });
    let test = generate(&SyntheticConfig {
        functions: 100,
        seed: seed + 1,
        ..Default::default()
    });
    let corpus: Vec<&str> = train.iter().map(|f| f.code.as_str()).collect();
    let vocab = train_bpe(&corpus, 512).expect("vocabulary");
    let mut cfg = ModelConfig::with_vocab(vocab.len());
    cfg.max_len = 256;
    cfg.layers = dc.layers;
    let params = ModelParams::init(cfg, seed).expect("init");
    let outcome = train_toy(
        &params,
        &labeled(&vocab, &train),
        &TrainConfig {
            epochs: dc.epochs,
            learning_rate: dc.learning_rate,
            seed,
            ..TrainConfig::default()
        },
    )
    .expect("training");
    let test_f1 = evaluate_f1(&outcome.params, &labeled(&vocab, &test)).expect("f1");

    let scorer = Scorer {
        vocab: &vocab,
        params: &outcome.params,
        specials: vocab.specials(),
        methods: vec![
            ScoreMethod::AttentionFirst,
            ScoreMethod::AttentionLast,
            ScoreMethod::IntegratedGradients,
        ],
        budget: DEFAULT_BUDGET,
        ig: IgConfig::new(dc.ig_steps, vocab.specials().pad).expect("ig"),
    };
    let mut records = Vec::new();
    for f in &test {
        records.extend(scorer.score(&f.id, &f.code).expect("score"));
    }
    let rows: Vec<DatasetRecord> = test.iter().map(to_record).collect();
    let labels: HashMap<String, u8> = test.iter().map(|f| (f.id.clone(), f.label)).collect();
    let (truths, _) = extract_ground_truths(&rows);
    let planted = evaluate(&records, &truths, Some(&labels), false).expect("evaluate").summary;
    let control = evaluate(&records, &shuffled_truths(&truths, seed ^ 0x5eed), Some(&labels), false)
        .expect("evaluate control")
        .summary;
    DeskRun {
        test_f1,
        best_epoch: outcome.best_epoch,
        planted,
        control,
        records,
        truths,
    }
}
