//! Comparison methods: an active-learning concept-classifier baseline
//! ([`al`]), sparse logistic regression on raw features ([`lr`]) and a
//! one-hidden-layer network ([`nn`]). All of them read standardized raw
//! features rather than concept activations.

pub mod al;
pub mod lr;
pub mod nn;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Split};
use crate::predictor::{decide, Standardizer};

pub use al::{run_al_baseline, AlConfig, AlResult};
pub use lr::{lr_penalty_grid, run_lr_baseline, LrResult};
pub use nn::{run_nn_baseline, Mlp, NnConfig, NnResult};

/// Dense raw features for every row, standardized with training-split
/// moments, plus the row indices of each split.
#[derive(Debug, Clone)]
pub struct Standardized {
    pub x: Array2<f64>,
    pub splits: [Vec<usize>; 3],
}

impl Standardized {
    pub fn new(d: &Dataset) -> Self {
        let all: Vec<usize> = (0..d.n_rows()).collect();
        let dense = d.x.dense_rows(&all);
        let splits = Split::ALL.map(|s| d.rows_in(s));
        let scaler = Standardizer::fit(dense.select(Axis(0), &splits[0]).view());
        Standardized {
            x: scaler.transform(dense.view()),
            splits,
        }
    }

    pub fn rows(&self, split: Split) -> &[usize] {
        &self.splits[split as usize]
    }

    pub fn select(&self, rows: &[usize]) -> Array2<f64> {
        self.x.select(Axis(0), rows)
    }
}

/// Downstream accuracy of a baseline on each split.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SplitAccuracy {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl SplitAccuracy {
    /// Scores per-row logits (indexed by dataset row) against labels.
    pub(crate) fn from_logits(logits: &[f64], y: &[u8], splits: &[Vec<usize>; 3]) -> Self {
        let acc = |rows: &[usize]| {
            if rows.is_empty() {
                return 0.0;
            }
            let ok = rows.iter().filter(|&&r| decide(logits[r]) == (y[r] == 1)).count();
            ok as f64 / rows.len() as f64
        };
        SplitAccuracy {
            train: acc(&splits[0]),
            valid: acc(&splits[1]),
            test: acc(&splits[2]),
        }
    }
}

pub(crate) fn labels_at(y: &[u8], rows: &[usize]) -> Vec<u8> {
    rows.iter().map(|&r| y[r]).collect()
}

pub(crate) fn row_logits(w: &[f64], b: f64, x: ArrayView2<f64>) -> Vec<f64> {
    x.axis_iter(Axis(0))
        .map(|row| b + row.iter().zip(w).map(|(v, w)| v * w).sum::<f64>())
        .collect()
}
