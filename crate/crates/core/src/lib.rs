//! Line-level detection alignment (DA) for learning-based code vulnerability
//! detectors.
//!
//! The crate covers the whole evaluation path:
//!
//! ```text
//! source ─► tokenizer ─► relevance producer ─► line aggregation ─► rescale ─┐
//!                         (attention / IG /                                 ├─► fuzzy Jaccard ─► DA
//! fixed source ─► line diff ─► ground-truth lines ──────────────────────────┘
//! ```
//!
//! * [`tokenizer`]: byte-level BPE that records the source line of every token.
//! * [`groundtruth`]: vulnerable lines from a diff against the fixed function.
//! * [`relevance`]: token scores to rescaled per-line relevance, plus
//!   attention-based token relevance.
//! * [`microformer`]: a small transformer classifier with hand-written
//!   backward pass, used as an in-repo relevance producer.
//! * [`metric`]: fuzzy-set Jaccard DA, benign-prediction rule, dataset means, F1.
//! * [`pipeline`]: JSONL interchange formats and the scoring/evaluation loops
//!   used by the `dalign` binary.

pub mod error;
pub mod groundtruth;
pub mod metric;
pub mod microformer;
pub mod pipeline;
pub mod quadrature;
pub mod relevance;
pub mod synthetic;
pub mod text;
pub mod tokenizer;

pub use error::{Error, Result};
