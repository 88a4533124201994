//! Peephole-based function embeddings for binary similarity.
//!
//! The pipeline turns functions written in a VEX-like textual IR into
//! fixed-size vectors:
//!
//! 1. [`ir`] parses and validates programs, [`canon`] rewrites them into
//!    canonical form.
//! 2. [`peephole`] samples straight-line peepholes from each CFG with seeded
//!    random walks, and [`vexine`] normalizes every peephole with a small
//!    catalog of dataflow transformations.
//! 3. [`vocab`] extracts knowledge-graph triplets from canonical peepholes and
//!    learns a TransE entity vocabulary.
//! 4. [`embed`] accumulates vocabulary vectors into the initial
//!    `<O, T, A>` tuple plus string and library-call vectors.
//! 5. [`vexnet`] fine-tunes those inputs with an attention network trained in
//!    a siamese configuration.
//! 6. [`simtasks`] answers diffing and searching queries with an exact
//!    KD-tree and scores them.
//!
//! The numeric layers are generic over the floating point [`Scalar`]; the
//! aliases below fix it to `f64`, which is what the command-line tool and
//! the file formats use.

pub mod canon;
pub mod embed;
pub mod error;
pub mod ir;
pub mod opcodes;
pub mod optim;
pub mod peephole;
pub mod pipeline;
pub mod rng;
pub mod scalar;
pub mod simtasks;
pub mod synth;
pub mod tensor;
pub mod vexine;
pub mod vexnet;
pub mod vocab;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Entity vocabulary with double precision vectors.
pub type Vocabulary = vocab::Vocabulary<f64>;
/// Initial function embedding with double precision vectors.
pub type FunctionEmbedding = embed::FunctionEmbedding<f64>;
/// Fine-tuning network with double precision parameters.
pub type VexNetModel = vexnet::VexNetModel<f64>;
/// Single precision variants, for memory-bound deployments.
pub type Vocabulary32 = vocab::Vocabulary<f32>;
pub type FunctionEmbedding32 = embed::FunctionEmbedding<f32>;
pub type VexNetModel32 = vexnet::VexNetModel<f32>;
/// Exact nearest neighbour index over double precision embeddings.
pub type EmbeddingIndex = simtasks::EmbeddingIndex<f64>;
pub type EmbeddingIndex32 = simtasks::EmbeddingIndex<f32>;
