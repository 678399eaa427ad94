use std::collections::HashMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::CountMatrix;
use crate::rng;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.6,
            valid: 0.2,
            test: 0.2,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.valid, self.test];
        if parts.iter().any(|&r| !(0.0..=1.0).contains(&r)) {
            return Err(Error::Spec(format!("split ratios out of [0, 1]: {self:?}")));
        }
        let total: f64 = parts.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Spec(format!("split ratios sum to {total}, not 1")));
        }
        Ok(())
    }

    /// Split sizes for `n` rows by largest remainder, so they sum to `n`.
    pub fn sizes(&self, n: usize) -> [usize; 3] {
        let exact = [
            self.train * n as f64,
            self.valid * n as f64,
            self.test * n as f64,
        ];
        let mut sizes = exact.map(|e| e.floor() as usize);
        let mut left = n.saturating_sub(sizes.iter().sum());
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| {
            let ra = exact[a] - exact[a].floor();
            let rb = exact[b] - exact[b].floor();
            rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
        });
        for &k in order.iter().cycle() {
            if left == 0 {
                break;
            }
            sizes[k] += 1;
            left -= 1;
        }
        sizes
    }
}

/// Ratios plus the seed of the shuffle that assigns rows to splits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    #[serde(default)]
    pub ratios: SplitRatios,
    #[serde(default)]
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            ratios: SplitRatios::default(),
            seed: 0,
        }
    }
}

impl SplitSpec {
    /// Shuffles `0..n` with the seed and slices by ratio.
    pub fn assign(&self, n: usize) -> Vec<Split> {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng::seeded(self.seed));
        let [n_train, n_valid, _] = self.ratios.sizes(n);
        let mut split = vec![Split::Test; n];
        for (k, &r) in order.iter().enumerate() {
            split[r] = if k < n_train {
                Split::Train
            } else if k < n_train + n_valid {
                Split::Valid
            } else {
                Split::Test
            };
        }
        split
    }
}

/// Instances with count features, binary labels and a split tag per row.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub x: CountMatrix,
    pub y: Vec<u8>,
    pub feature_names: Vec<String>,
    pub split: Vec<Split>,
    pub split_spec: SplitSpec,
    name_index: HashMap<String, usize>,
}

impl Dataset {
    /// Assembles a dataset and assigns splits from `split_spec`.
    pub fn new(
        x: CountMatrix,
        y: Vec<u8>,
        feature_names: Vec<String>,
        split_spec: SplitSpec,
    ) -> Result<Self> {
        split_spec.ratios.validate()?;
        let split = split_spec.assign(x.n_rows());
        Self::with_split(x, y, feature_names, split, split_spec)
    }

    pub fn with_split(
        x: CountMatrix,
        y: Vec<u8>,
        feature_names: Vec<String>,
        split: Vec<Split>,
        split_spec: SplitSpec,
    ) -> Result<Self> {
        if y.len() != x.n_rows() {
            return Err(Error::Dimension(format!(
                "{} labels for {} rows",
                y.len(),
                x.n_rows()
            )));
        }
        if feature_names.len() != x.n_cols() {
            return Err(Error::Dimension(format!(
                "{} feature names for {} columns",
                feature_names.len(),
                x.n_cols()
            )));
        }
        if split.len() != x.n_rows() {
            return Err(Error::Dimension("split tags do not cover all rows".into()));
        }
        if let Some(bad) = y.iter().find(|&&v| v > 1) {
            return Err(Error::Format(format!("label {bad} is not binary")));
        }
        let mut name_index = HashMap::with_capacity(feature_names.len());
        for (i, name) in feature_names.iter().enumerate() {
            if name_index.insert(name.clone(), i).is_some() {
                return Err(Error::Format(format!("duplicate feature name {name:?}")));
            }
        }
        Ok(Dataset {
            x,
            y,
            feature_names,
            split,
            split_spec,
            name_index,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.x.n_rows()
    }

    pub fn n_features(&self) -> usize {
        self.x.n_cols()
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.name_index.get(name).copied()
    }

    pub fn rows_in(&self, split: Split) -> Vec<usize> {
        (0..self.n_rows()).filter(|&r| self.split[r] == split).collect()
    }

    pub fn labels_of(&self, rows: &[usize]) -> Vec<u8> {
        rows.iter().map(|&r| self.y[r]).collect()
    }

    pub fn class_counts(&self) -> [usize; 2] {
        let pos = self.y.iter().filter(|&&v| v == 1).count();
        [self.y.len() - pos, pos]
    }
}

/// Subsamples the majority class, without replacement, down to the
/// minority size, then re-derives the splits.
pub fn class_balance(d: &Dataset, seed: u64) -> Result<Dataset> {
    let [neg, pos] = d.class_counts();
    if neg == 0 || pos == 0 {
        return Err(Error::Invalid(
            "class balancing needs both classes present".into(),
        ));
    }
    let (majority, keep) = if pos > neg { (1u8, neg) } else { (0u8, pos) };
    let mut major_rows: Vec<usize> = (0..d.n_rows()).filter(|&r| d.y[r] == majority).collect();
    major_rows.shuffle(&mut rng::seeded(seed));
    major_rows.truncate(keep);
    let mut rows: Vec<usize> = (0..d.n_rows())
        .filter(|&r| d.y[r] != majority)
        .chain(major_rows)
        .collect();
    rows.sort_unstable();

    let x = d.x.select_rows(&rows);
    let y = d.labels_of(&rows);
    Dataset::new(x, y, d.feature_names.clone(), d.split_spec)
}

/// Old-to-new column map produced by [`filter_features`].
pub type FeatureMap = Vec<Option<usize>>;

/// Keeps features whose document frequency lies in `[min_frac, max_frac]`.
pub fn filter_features(d: &Dataset, min_frac: f64, max_frac: f64) -> Result<(Dataset, FeatureMap)> {
    if !(0.0 <= min_frac && min_frac <= max_frac && max_frac <= 1.0) {
        return Err(Error::Invalid(format!(
            "frequency window [{min_frac}, {max_frac}] is not within [0, 1]"
        )));
    }
    let n = d.n_rows().max(1) as f64;
    let kept: Vec<usize> = (0..d.n_features())
        .filter(|&c| {
            let df = d.x.doc_count(c) as f64 / n;
            df >= min_frac && df <= max_frac
        })
        .collect();
    if kept.is_empty() {
        return Err(Error::Invalid("every feature was filtered out".into()));
    }
    let mut map = vec![None; d.n_features()];
    for (new_c, &c) in kept.iter().enumerate() {
        map[c] = Some(new_c);
    }
    let x = d.x.select_cols(&kept);
    let names = kept.iter().map(|&c| d.feature_names[c].clone()).collect();
    let out = Dataset::with_split(x, d.y.clone(), names, d.split.clone(), d.split_spec)?;
    Ok((out, map))
}
