//! Interactive learning of transparent concept definitions.
//!
//! A model here has two stages. The concept definition maps sparse count
//! features to binary concepts through a binary feature-concept matrix
//! (a concept fires when any of its associated features has a positive
//! count). A logistic-regression predictor then maps concept activations
//! to a binary label. The definition is grown one association at a time by
//! proposing feature-concept pairs that are both predictive and likely to
//! be accepted by a user, and adding only the pairs the user accepts.
//!
//! Module map:
//!
//! - [`data`]: sparse count matrices, datasets, splits, ingestion, toy data.
//! - [`concept`]: the binary concept matrix and incremental activations.
//! - [`predictor`]: logistic regression (optionally l1) over designs.
//! - [`proposal`]: predictive and intuitiveness scoring, proposal choice.
//! - [`session`]: the interactive loop, feedback sources, metrics, journal.
//! - [`baselines`]: active learning, sparse LR and small NN comparisons.
//! - [`experiment`]: multi-restart experiment harness and reports.

pub mod baselines;
pub mod concept;
pub mod data;
mod error;
pub mod experiment;
pub mod predictor;
pub mod proposal;
pub mod rng;
pub mod session;
pub mod truth;

pub use concept::{ConceptActivations, ConceptMatrix};
pub use data::{CountMatrix, Dataset, Split, SplitSpec};
pub use error::{Error, Result};
pub use predictor::{FitConfig, LinearPredictor};
pub use proposal::{ProposalScores, SimilarityGraph, VariantSpec};
pub use session::{Session, SessionConfig};
pub use truth::GroundTruthConcepts;
