//! The transparent concept definition: a binary feature-concept matrix and
//! the concept activations it induces on count data.
//!
//! Concept `j` fires on an instance when the summed counts of its associated
//! features reach the concept's threshold, which is fixed at 1, so a concept
//! is the OR of its features. Activations keep the per-(instance, concept)
//! support sum so one association can be added or removed in time
//! proportional to the feature column's nonzeros.

use std::collections::BTreeSet;

use indexmap::IndexMap;
use ndarray::Array2;

use crate::data::CountMatrix;
use crate::{Error, Result};

/// Binary `D x C` association matrix stored as one feature set per concept.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConceptMatrix {
    n_features: usize,
    names: Vec<String>,
    sets: Vec<BTreeSet<usize>>,
}

impl ConceptMatrix {
    pub fn empty(n_features: usize, names: Vec<String>) -> Self {
        let sets = vec![BTreeSet::new(); names.len()];
        ConceptMatrix {
            n_features,
            names,
            sets,
        }
    }

    pub fn from_sets(n_features: usize, names: Vec<String>, sets: Vec<BTreeSet<usize>>) -> Result<Self> {
        if names.len() != sets.len() {
            return Err(Error::Dimension(format!(
                "{} concept names for {} feature sets",
                names.len(),
                sets.len()
            )));
        }
        if let Some(&i) = sets.iter().flatten().find(|&&i| i >= n_features) {
            return Err(Error::Bounds {
                what: "feature",
                index: i,
                bound: n_features,
            });
        }
        Ok(ConceptMatrix {
            n_features,
            names,
            sets,
        })
    }

    /// Builds from a row-major `D x C` 0/1 matrix.
    pub fn from_binary(n_features: usize, names: Vec<String>, bits: &[u8]) -> Result<Self> {
        let c = names.len();
        if bits.len() != n_features * c {
            return Err(Error::Dimension(format!(
                "{} entries for a {n_features}x{c} matrix",
                bits.len()
            )));
        }
        let mut sets = vec![BTreeSet::new(); c];
        for (k, &b) in bits.iter().enumerate() {
            match b {
                0 => {}
                1 => {
                    sets[k % c].insert(k / c);
                }
                other => return Err(Error::Format(format!("matrix entry {other} is not binary"))),
            }
        }
        Self::from_sets(n_features, names, sets)
    }

    pub fn to_binary(&self) -> Vec<u8> {
        let c = self.n_concepts();
        let mut bits = vec![0u8; self.n_features * c];
        for (j, set) in self.sets.iter().enumerate() {
            for &i in set {
                bits[i * c + j] = 1;
            }
        }
        bits
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_concepts(&self) -> usize {
        self.sets.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn features(&self, concept: usize) -> &BTreeSet<usize> {
        &self.sets[concept]
    }

    pub fn contains(&self, feature: usize, concept: usize) -> bool {
        self.sets[concept].contains(&feature)
    }

    pub fn n_associations(&self) -> usize {
        self.sets.iter().map(BTreeSet::len).sum()
    }

    fn check(&self, feature: usize, concept: usize) -> Result<()> {
        if feature >= self.n_features {
            return Err(Error::Bounds {
                what: "feature",
                index: feature,
                bound: self.n_features,
            });
        }
        if concept >= self.n_concepts() {
            return Err(Error::Bounds {
                what: "concept",
                index: concept,
                bound: self.n_concepts(),
            });
        }
        Ok(())
    }

    /// Concept name -> sorted feature-name list, as pretty JSON.
    pub fn to_json(&self, feature_names: &[String]) -> Result<String> {
        let map: IndexMap<&str, Vec<&str>> = self
            .names
            .iter()
            .zip(&self.sets)
            .map(|(name, set)| {
                let mut feats: Vec<&str> = set.iter().map(|&i| feature_names[i].as_str()).collect();
                feats.sort_unstable();
                (name.as_str(), feats)
            })
            .collect();
        Ok(serde_json::to_string_pretty(&map)?)
    }
}

/// Concept values for every instance plus the support sums behind them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConceptActivations {
    n_rows: usize,
    n_concepts: usize,
    /// Row-major `N x C` support sums `m[n][j] = sum_i A[i][j] * x[n][i]`.
    support: Vec<u64>,
    thresholds: Vec<u64>,
}

/// Computes activations of `a` on `x` from scratch.
pub fn evaluate_concepts(a: &ConceptMatrix, x: &CountMatrix) -> Result<ConceptActivations> {
    if a.n_features() != x.n_cols() {
        return Err(Error::Dimension(format!(
            "concept matrix has {} features, data has {} columns",
            a.n_features(),
            x.n_cols()
        )));
    }
    let c = a.n_concepts();
    let mut support = vec![0u64; x.n_rows() * c];
    for (j, set) in a.sets.iter().enumerate() {
        for &i in set {
            let (rows, vals) = x.col(i);
            for (&r, &v) in rows.iter().zip(vals) {
                support[r as usize * c + j] += v as u64;
            }
        }
    }
    Ok(ConceptActivations {
        n_rows: x.n_rows(),
        n_concepts: c,
        support,
        thresholds: vec![1; c],
    })
}

impl ConceptActivations {
    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_concepts(&self) -> usize {
        self.n_concepts
    }

    #[inline]
    pub fn support(&self, row: usize, concept: usize) -> u64 {
        self.support[row * self.n_concepts + concept]
    }

    #[inline]
    pub fn is_active(&self, row: usize, concept: usize) -> bool {
        self.support(row, concept) >= self.thresholds[concept]
    }

    /// Activation bits of one row.
    pub fn row(&self, row: usize) -> impl Iterator<Item = bool> + '_ {
        (0..self.n_concepts).map(move |j| self.is_active(row, j))
    }

    /// Number of the given rows on which `concept` fires.
    pub fn active_count(&self, concept: usize, rows: &[usize]) -> usize {
        rows.iter().filter(|&&r| self.is_active(r, concept)).count()
    }

    /// Dense 0/1 design matrix for the given rows.
    pub fn design(&self, rows: &[usize]) -> Array2<f64> {
        Array2::from_shape_fn((rows.len(), self.n_concepts), |(k, j)| {
            if self.is_active(rows[k], j) {
                1.0
            } else {
                0.0
            }
        })
    }

    fn check_shape(&self, a: &ConceptMatrix, x: &CountMatrix) -> Result<()> {
        if a.n_concepts() != self.n_concepts || x.n_rows() != self.n_rows || a.n_features() != x.n_cols() {
            return Err(Error::Dimension(
                "activations, concept matrix and data disagree in shape".into(),
            ));
        }
        Ok(())
    }

    /// Sets `A[feature][concept] = 1` and updates supports. Returns the rows
    /// whose activation of `concept` flipped from 0 to 1, increasing.
    pub fn add_association(
        &mut self,
        a: &mut ConceptMatrix,
        feature: usize,
        concept: usize,
        x: &CountMatrix,
    ) -> Result<Vec<usize>> {
        a.check(feature, concept)?;
        self.check_shape(a, x)?;
        if !a.sets[concept].insert(feature) {
            return Err(Error::Association {
                feature,
                concept,
                state: "already present",
            });
        }
        Ok(self.shift(feature, concept, x, true))
    }

    /// Exact inverse of [`add_association`](Self::add_association). Returns
    /// the rows whose activation flipped from 1 to 0.
    pub fn remove_association(
        &mut self,
        a: &mut ConceptMatrix,
        feature: usize,
        concept: usize,
        x: &CountMatrix,
    ) -> Result<Vec<usize>> {
        a.check(feature, concept)?;
        self.check_shape(a, x)?;
        if !a.sets[concept].remove(&feature) {
            return Err(Error::Association {
                feature,
                concept,
                state: "absent",
            });
        }
        Ok(self.shift(feature, concept, x, false))
    }

    fn shift(&mut self, feature: usize, concept: usize, x: &CountMatrix, add: bool) -> Vec<usize> {
        let threshold = self.thresholds[concept];
        let (rows, vals) = x.col(feature);
        let mut flipped = Vec::new();
        for (&r, &v) in rows.iter().zip(vals) {
            let slot = &mut self.support[r as usize * self.n_concepts + concept];
            let before = *slot >= threshold;
            if add {
                *slot += v as u64;
            } else {
                *slot -= v as u64;
            }
            if before != (*slot >= threshold) {
                flipped.push(r as usize);
            }
        }
        flipped
    }
}
