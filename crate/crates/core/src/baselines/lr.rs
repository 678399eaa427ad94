//! l1-penalized logistic regression on standardized raw features, with the
//! penalty chosen so the nonzero count lands closest to a target.

use serde::{Deserialize, Serialize};

use super::{labels_at, row_logits, SplitAccuracy, Standardized};
use crate::data::Dataset;
use crate::predictor::{fit, FitConfig, LinearPredictor};
use crate::{Error, Result};

/// Log-stepped penalties from 1e-4 to 1: steps of 1e-4 up to 1e-3, then
/// 1e-3 up to 1e-2, then 1e-2 up to 0.1, then 0.1 up to 1.
pub fn lr_penalty_grid() -> Vec<f64> {
    let mut grid = Vec::new();
    for decade in [1e-4, 1e-3, 1e-2, 1e-1] {
        let start = if decade == 1e-4 { 1 } else { 2 };
        for k in start..=10 {
            grid.push(decade * k as f64);
        }
    }
    grid
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrResult {
    pub predictor: LinearPredictor,
    pub l1_weight: f64,
    pub nonzeros: usize,
    /// `(penalty, nonzeros)` for every grid point, increasing penalty.
    pub sweep: Vec<(f64, usize)>,
    pub accuracy: SplitAccuracy,
}

/// Sweeps `penalties` from strongest to weakest with warm starts and keeps
/// the fit whose nonzero count is closest to `target_nonzeros`; ties go to
/// the smaller penalty.
pub fn run_lr_baseline_with(
    d: &Dataset,
    data: &Standardized,
    target_nonzeros: usize,
    penalties: &[f64],
    base: &FitConfig,
) -> Result<LrResult> {
    if target_nonzeros == 0 {
        return Err(Error::Spec("target nonzero count must be at least 1".into()));
    }
    if penalties.is_empty() {
        return Err(Error::Spec("penalty grid is empty".into()));
    }
    let train = data.rows(crate::Split::Train);
    let x = data.select(train);
    let y = labels_at(&d.y, train);
    let mut order: Vec<f64> = penalties.to_vec();
    order.sort_by(|a, b| b.total_cmp(a));

    let mut warm: Option<LinearPredictor> = None;
    let mut fits = Vec::with_capacity(order.len());
    for &l1 in &order {
        let cfg = FitConfig {
            l1_weight: l1,
            standardize: false,
            ..*base
        };
        let m = fit(x.view(), &y, &cfg, warm.as_ref())?;
        warm = Some(m.clone());
        fits.push((l1, m));
    }
    fits.reverse();

    let distance = |m: &LinearPredictor| m.nonzeros().abs_diff(target_nonzeros);
    let (l1, best) = fits
        .iter()
        .min_by(|a, b| distance(&a.1).cmp(&distance(&b.1)).then(a.0.total_cmp(&b.0)))
        .expect("grid is nonempty");
    let logits = row_logits(&best.weights, best.bias, data.x.view());
    Ok(LrResult {
        predictor: best.clone(),
        l1_weight: *l1,
        nonzeros: best.nonzeros(),
        sweep: fits.iter().map(|(l, m)| (*l, m.nonzeros())).collect(),
        accuracy: SplitAccuracy::from_logits(&logits, &d.y, &data.splits),
    })
}

pub fn run_lr_baseline(d: &Dataset, target_nonzeros: usize, base: &FitConfig) -> Result<LrResult> {
    run_lr_baseline_with(d, &Standardized::new(d), target_nonzeros, &lr_penalty_grid(), base)
}
