//! Choosing the next feature to propose for a concept.
//!
//! Two scores rank the unexplored features of a concept. The predictive
//! score is the accuracy of the current predictor, without refitting, after
//! tentatively associating the feature with the concept. The intuitiveness
//! score propagates the user's earlier accept/reject verdicts over a
//! feature-similarity graph. A variant combines them: rank by one score,
//! keep the top `k`, and pick the best of those by the other.

mod intuit;
mod similarity;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use intuit::{score_intuit, IntuitLabels};
pub use similarity::SimilarityGraph;

use crate::concept::{ConceptActivations, ConceptMatrix};
use crate::data::CountMatrix;
use crate::predictor::{decide, LinearPredictor};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VariantSpec {
    Pred,
    Intuit,
    /// Shortlist the top `k`% of `D` by predictive score, pick by intuit.
    PredIntuit(u32),
    /// Shortlist the top `k`% of `D` by intuit score, pick by predictive.
    IntuitPred(u32),
}

impl Default for VariantSpec {
    fn default() -> Self {
        VariantSpec::PredIntuit(5)
    }
}

impl VariantSpec {
    /// Shortlist size `ceil(pct / 100 * D)` for combined modes.
    pub fn shortlist_len(&self, n_features: usize) -> Option<usize> {
        match *self {
            VariantSpec::PredIntuit(pct) | VariantSpec::IntuitPred(pct) => {
                Some(((pct as usize * n_features) + 99) / 100)
            }
            _ => None,
        }
    }

    pub fn mode(&self) -> &'static str {
        match self {
            VariantSpec::Pred => "pred",
            VariantSpec::Intuit => "intuit",
            VariantSpec::PredIntuit(_) => "pred-intuit",
            VariantSpec::IntuitPred(_) => "intuit-pred",
        }
    }

    pub fn k_pct(&self) -> Option<u32> {
        match *self {
            VariantSpec::PredIntuit(k) | VariantSpec::IntuitPred(k) => Some(k),
            _ => None,
        }
    }
}

impl fmt::Display for VariantSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.k_pct() {
            Some(k) => write!(f, "{}-{k}", self.mode()),
            None => f.write_str(self.mode()),
        }
    }
}

impl FromStr for VariantSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Spec(format!("unknown variant {s:?}"));
        match s {
            "pred" => return Ok(VariantSpec::Pred),
            "intuit" => return Ok(VariantSpec::Intuit),
            _ => {}
        }
        let (mode, k) = s.rsplit_once('-').ok_or_else(bad)?;
        let k: u32 = k.parse().map_err(|_| bad())?;
        if !(1..=100).contains(&k) {
            return Err(Error::Spec(format!("shortlist percentage {k} not in 1..=100")));
        }
        match mode {
            "pred-intuit" => Ok(VariantSpec::PredIntuit(k)),
            "intuit-pred" => Ok(VariantSpec::IntuitPred(k)),
            _ => Err(bad()),
        }
    }
}

impl Serialize for VariantSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for VariantSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Rows on which predictive scores are measured, with a membership mask.
#[derive(Debug, Clone)]
pub struct EvalSet {
    rows: Vec<usize>,
    mask: Vec<bool>,
}

impl EvalSet {
    pub fn new(n_rows: usize, rows: Vec<usize>) -> Self {
        let mut mask = vec![false; n_rows];
        for &r in &rows {
            mask[r] = true;
        }
        EvalSet { rows, mask }
    }

    pub fn rows(&self) -> &[usize] {
        &self.rows
    }

    pub fn contains(&self, row: usize) -> bool {
        self.mask[row]
    }
}

/// Read-only view of everything proposal scoring needs.
#[derive(Clone, Copy)]
pub struct Snapshot<'a> {
    pub x: &'a CountMatrix,
    pub y: &'a [u8],
    pub eval: &'a EvalSet,
    pub concepts: &'a ConceptMatrix,
    pub activations: &'a ConceptActivations,
    pub predictor: &'a LinearPredictor,
    pub graph: &'a SimilarityGraph,
    pub labels: &'a IntuitLabels,
    /// Unexplored features `u_j` per concept.
    pub unlabeled: &'a [BTreeSet<usize>],
}

impl Snapshot<'_> {
    fn row_correct(&self, act: &ConceptActivations, row: usize) -> bool {
        decide(self.predictor.logit_binary(act.row(row))) == (self.y[row] == 1)
    }

    /// Correct predictions of the current predictor on the evaluation rows.
    pub fn correct_count(&self) -> usize {
        self.eval
            .rows()
            .iter()
            .filter(|&&r| self.row_correct(self.activations, r))
            .count()
    }

    fn accuracy_of(&self, correct: usize) -> f64 {
        let n = self.eval.rows().len();
        if n == 0 {
            0.0
        } else {
            correct as f64 / n as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredScores {
    pub scores: Vec<f64>,
    /// Accuracy with no change to the concept matrix.
    pub dummy: f64,
}

/// Predictive score of each candidate for `concept`: accuracy of the
/// current predictor after tentatively adding the association, measured on
/// the evaluation rows. Candidates outside `u_j` score 0.
///
/// Each worker applies and rolls back associations on a private copy of
/// the activations, touching only the candidate column's nonzeros.
pub fn score_pred(snap: &Snapshot<'_>, concept: usize, candidates: &[usize]) -> Result<PredScores> {
    let base = snap.correct_count();
    let chunk = (candidates.len() / (4 * rayon::current_num_threads()).max(1)).max(16);
    let scores = candidates
        .par_chunks(chunk)
        .map(|part| -> Result<Vec<f64>> {
            let mut act = snap.activations.clone();
            let mut a = snap.concepts.clone();
            part.iter()
                .map(|&i| {
                    if !snap.unlabeled[concept].contains(&i) {
                        return Ok(0.0);
                    }
                    let flipped = act.add_association(&mut a, i, concept, snap.x)?;
                    let mut delta: isize = 0;
                    for &r in flipped.iter().filter(|&&r| snap.eval.contains(r)) {
                        let before = snap.row_correct(snap.activations, r);
                        let after = snap.row_correct(&act, r);
                        delta += after as isize - before as isize;
                    }
                    act.remove_association(&mut a, i, concept, snap.x)?;
                    Ok(snap.accuracy_of((base as isize + delta) as usize))
                })
                .collect()
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    Ok(PredScores {
        scores,
        dummy: snap.accuracy_of(base),
    })
}

/// Reference version of [`score_pred`]: re-evaluates all activations from
/// scratch and scores through the dense design path.
pub fn score_pred_exhaustive(snap: &Snapshot<'_>, concept: usize, candidates: &[usize]) -> Result<PredScores> {
    let rows = snap.eval.rows();
    let y: Vec<u8> = rows.iter().map(|&r| snap.y[r]).collect();
    let acc = |a: &ConceptMatrix| -> Result<f64> {
        let act = crate::concept::evaluate_concepts(a, snap.x)?;
        snap.predictor.accuracy(act.design(rows).view(), &y)
    };
    let scores = candidates
        .iter()
        .map(|&i| {
            if !snap.unlabeled[concept].contains(&i) {
                return Ok(0.0);
            }
            let mut sets: Vec<BTreeSet<usize>> =
                (0..snap.concepts.n_concepts()).map(|j| snap.concepts.features(j).clone()).collect();
            sets[concept].insert(i);
            acc(&ConceptMatrix::from_sets(snap.x.n_cols(), snap.concepts.names().to_vec(), sets)?)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PredScores {
        scores,
        dummy: acc(snap.concepts)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "feature")]
pub enum Choice {
    Feature(usize),
    /// Make no change and skip the user query.
    Dummy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProposalScores {
    pub concept: usize,
    pub variant: VariantSpec,
    /// The concept's unexplored features, increasing.
    pub candidates: Vec<usize>,
    pub score_pred: Vec<f64>,
    pub score_intuit: Vec<f64>,
    pub dummy_score: f64,
    pub shortlist: Vec<usize>,
    pub choice: Choice,
}

impl ProposalScores {
    fn position(&self, feature: usize) -> Option<usize> {
        self.candidates.binary_search(&feature).ok()
    }

    /// `(score_pred, score_intuit)` of the chosen feature.
    pub fn chosen_scores(&self) -> Option<(f64, f64)> {
        match self.choice {
            Choice::Feature(i) => self.position(i).map(|k| (self.score_pred[k], self.score_intuit[k])),
            Choice::Dummy => None,
        }
    }
}

/// Index (into `scores`) of the maximum among `among`; lowest index wins ties.
fn argmax(scores: &[f64], among: impl Iterator<Item = usize>) -> Option<usize> {
    let mut best: Option<usize> = None;
    for k in among {
        if best.is_none_or(|b| scores[k] > scores[b]) {
            best = Some(k);
        }
    }
    best
}

/// Positions of the `len` best scores, by score descending then index.
fn top_k(scores: &[f64], len: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(len);
    order.sort_unstable();
    order
}

/// Picks the next proposal for `concept` under `variant`.
///
/// Returns [`Choice::Dummy`] when no unexplored feature strictly improves
/// the predictive score over making no change.
pub fn propose(snap: &Snapshot<'_>, concept: usize, variant: VariantSpec) -> Result<ProposalScores> {
    let candidates: Vec<usize> = snap.unlabeled[concept].iter().copied().collect();
    let pred = score_pred(snap, concept, &candidates)?;
    let intuit = if candidates.is_empty() {
        Vec::new()
    } else {
        score_intuit(snap.graph, snap.labels, concept, &candidates)?
    };

    let best_pred = pred.scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut shortlist = Vec::new();
    let choice = if candidates.is_empty() || best_pred <= pred.dummy {
        Choice::Dummy
    } else {
        let all = 0..candidates.len();
        let k = match variant {
            VariantSpec::Pred => argmax(&pred.scores, all),
            VariantSpec::Intuit => argmax(&intuit, all),
            VariantSpec::PredIntuit(_) | VariantSpec::IntuitPred(_) => {
                let len = variant.shortlist_len(snap.concepts.n_features()).unwrap_or(1).max(1);
                let (rank, pick) = match variant {
                    VariantSpec::PredIntuit(_) => (&pred.scores, &intuit),
                    _ => (&intuit, &pred.scores),
                };
                let positions = top_k(rank, len);
                shortlist = positions.iter().map(|&k| candidates[k]).collect();
                argmax(pick, positions.into_iter())
            }
        };
        Choice::Feature(candidates[k.expect("candidates are nonempty")])
    };

    Ok(ProposalScores {
        concept,
        variant,
        candidates,
        score_pred: pred.scores,
        score_intuit: intuit,
        dummy_score: pred.dummy,
        shortlist,
        choice,
    })
}
