//! Generative recommendation over semantic IDs with a masked-diffusion decoder.
//!
//! The pipeline tokenizes items into n-digit semantic IDs (SIDs) via parallel
//! semantic encoding (OPQ-style rotate/partition/quantize), trains an
//! encoder–decoder where the decoder predicts masked SID digits in parallel
//! under difficulty-ordered coherent noising, and decodes Top-K candidate SIDs
//! with a confidence-guided global beam search.
//!
//! Crate layout mirrors the pipeline stages:
//!
//! - [`dataset`]: interaction logs, leave-last-out splits, sliding-window
//!   augmentation.
//! - [`tokenizer`]: PSE (OPQ) fitting and tokenization, plus RQ-KMeans and
//!   random-token variants.
//! - [`network`]: the learnable encoder / masked-diffusion decoder with exact
//!   reverse-mode gradients.
//! - [`noising`]: training-view construction (coherent nested masks, random
//!   masking, on-policy variants).
//! - [`decoding`]: confidence-guided parallel beam search and its oracles.
//! - [`metrics`]: Recall@K / NDCG@K, validation score, early stopping.
//! - [`combinatorics`]: supervision-signal counts for masked-digit training.
//! - [`train`] / [`evaluate`]: the optimization loop and SID-based evaluation.
//! - [`synth`]: deterministic synthetic dataset generation for desk-scale runs.
//! - [`io`]: binary artifact formats (embeddings, codebooks, checkpoints).

pub mod combinatorics;
pub mod config;
pub mod dataset;
pub mod decoding;
pub mod error;
pub mod evaluate;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod network;
pub mod noising;
pub mod synth;
pub mod tokenizer;
pub mod train;

pub use config::RunConfig;
pub use dataset::{InteractionLog, ItemEmbeddingTable, SplitSpec, TrainingInstance};
pub use decoding::{BeamBranch, DecodeResult};
pub use error::{Error, Result};
pub use network::{DigitDistributions, EncoderState, ModelConfig, ModelParams};
pub use noising::{DifficultyProfile, MaskView, NoisingStrategy, ViewSchedule};
pub use tokenizer::{CodebookSet, SemanticId, TokenizerReport};
