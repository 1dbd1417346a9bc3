//! Joint relation extraction over distantly supervised bags.
//!
//! Sentences are encoded by a piecewise-pooled CNN ([`encoder`]), combined
//! per bag by averaging or class-queried attention ([`aggregate`]), and
//! trained with pairwise ranking losses over class embeddings ([`ranking`])
//! that score every label of an entity tuple jointly. [`trainer`] runs
//! mini-batch SGD, [`eval`] produces held-out precision/recall curves, and
//! [`synthgen`] writes seeded synthetic corpora with planted label ties.

pub mod aggregate;
pub mod checkpoint;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod model;
pub mod numkit;
pub mod ranking;
pub mod synthgen;
pub mod trainer;

pub use aggregate::{Aggregation, BagRepresentation};
pub use corpus::{Mention, MentionBag, RelationSchema, Vocabulary};
pub use encoder::{EncodedSentence, EncoderConfig, EncoderParams};
pub use error::{Error, Result};
pub use eval::{EvalMode, PAtN, PrCurve};
pub use model::{Gradients, ModelConfig, ModelParams, ParamGroup};
pub use numkit::{DenseMatrix, Rng};
pub use ranking::{LossReport, RankingConfig, Variant};
pub use synthgen::{SynthConfig, TieKind, TiePair};
pub use trainer::{TrainConfig, TrainOutcome};
