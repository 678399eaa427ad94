//! Sparse count data, datasets and their splits, ingestion, and the
//! synthetic toy generator.

mod dataset;
mod io;
mod matrix;
pub mod toy;

pub use dataset::{class_balance, filter_features, Dataset, FeatureMap, Split, SplitRatios, SplitSpec};
pub use io::{load_dataset, write_dataset, COUNTS_FILE, FEATURES_FILE, LABELS_FILE};
pub use matrix::CountMatrix;
pub use toy::{generate_toy, ToyConcept, ToySpec};
