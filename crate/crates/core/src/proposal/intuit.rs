use std::collections::BTreeMap;

use super::SimilarityGraph;
use crate::{Error, Result};

/// Recorded accept (`true`) / reject (`false`) verdicts per concept.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IntuitLabels {
    per_concept: Vec<BTreeMap<usize, bool>>,
}

impl IntuitLabels {
    pub fn new(n_concepts: usize) -> Self {
        IntuitLabels {
            per_concept: vec![BTreeMap::new(); n_concepts],
        }
    }

    pub fn set(&mut self, feature: usize, concept: usize, accepted: bool) {
        self.per_concept[concept].insert(feature, accepted);
    }

    pub fn get(&self, feature: usize, concept: usize) -> Option<bool> {
        self.per_concept[concept].get(&feature).copied()
    }

    /// Labeled features of `concept`, increasing.
    pub fn for_concept(&self, concept: usize) -> &BTreeMap<usize, bool> {
        &self.per_concept[concept]
    }

    pub fn len(&self) -> usize {
        self.per_concept.iter().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Harmonic (label-propagation) estimate of the acceptance probability of
/// each candidate for `concept`: the similarity-weighted mean of the labels
/// of the concept's labeled features. Candidates with no similarity to any
/// labeled feature get 0.5.
pub fn score_intuit(
    graph: &SimilarityGraph,
    labels: &IntuitLabels,
    concept: usize,
    candidates: &[usize],
) -> Result<Vec<f64>> {
    let labeled = labels.for_concept(concept);
    if labeled.is_empty() {
        return Err(Error::Invalid(format!("concept {concept} has no labeled features")));
    }
    Ok(candidates
        .iter()
        .map(|&i| {
            let mut num = 0.0;
            let mut den = 0.0;
            for (&k, &accepted) in labeled {
                let s = graph.get(i, k);
                den += s;
                if accepted {
                    num += s;
                }
            }
            if den == 0.0 {
                0.5
            } else {
                num / den
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::CountMatrix;

    /// Columns over 10 rows: J(cand, a) = 3/5, J(cand, b) = 1/5, d disjoint.
    fn graph() -> SimilarityGraph {
        let mut dense = vec![0u32; 10 * 4];
        for r in 0..5 {
            dense[r * 4] = 1; // cand
        }
        for r in 0..3 {
            dense[r * 4 + 1] = 1; // a
        }
        dense[2] = 1; // b, row 0 only
        for r in 6..10 {
            dense[r * 4 + 3] = 1; // d
        }
        SimilarityGraph::build(&CountMatrix::from_dense(10, 4, &dense).unwrap(), false)
    }

    #[test]
    fn accepted_neighborhood_scores_one() {
        let g = graph();
        let mut l = IntuitLabels::new(1);
        l.set(1, 0, true);
        assert_eq!(score_intuit(&g, &l, 0, &[0]).unwrap(), vec![1.0]);
    }

    #[test]
    fn rejected_neighborhood_scores_zero() {
        let g = graph();
        let mut l = IntuitLabels::new(1);
        l.set(1, 0, false);
        l.set(2, 0, false);
        assert_eq!(score_intuit(&g, &l, 0, &[0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn weighted_mixture() {
        let g = graph();
        assert!((g.get(0, 1) - 0.6).abs() < 1e-15);
        let mut l = IntuitLabels::new(1);
        l.set(1, 0, true);
        l.set(2, 0, false);
        assert_eq!(g.get(0, 2), 0.2);
        let s = score_intuit(&g, &l, 0, &[0]).unwrap()[0];
        assert!((s - 0.75).abs() < 1e-15);
    }

    #[test]
    fn unconnected_candidate_gets_prior_and_empty_is_error() {
        let g = graph();
        let mut l = IntuitLabels::new(2);
        l.set(1, 0, true);
        assert_eq!(score_intuit(&g, &l, 0, &[3]).unwrap(), vec![0.5]);
        assert!(score_intuit(&g, &l, 1, &[0]).is_err());
    }
}
