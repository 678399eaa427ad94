//! The interactive loop: seed each concept with one feature, then for each
//! concept in order make a fixed number of proposals. An accepted proposal
//! adds the association and refits the predictor; a rejected one is only
//! remembered as an intuit label. Either way the feature leaves the
//! concept's unexplored set, so no pair is proposed twice.
//!
//! [`Session`] is a step machine so a live user can drive it one decision
//! at a time; [`Session::run`] drives it to completion from a
//! [`FeedbackSource`].

pub mod feedback;
pub mod record;

use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use feedback::{FeedbackSource, Oracle, Scripted};
pub use record::{
    write_jsonl, write_metrics_csv, Decision, JournalEntry, MetricsRow, TraceRecord, METRICS_HEADER,
};

use crate::concept::{evaluate_concepts, ConceptActivations, ConceptMatrix};
use crate::data::{Dataset, Split};
use crate::predictor::{decide, fit, FitConfig, LinearPredictor};
use crate::proposal::{propose, Choice, EvalSet, IntuitLabels, ProposalScores, SimilarityGraph, Snapshot, VariantSpec};
use crate::truth::GroundTruthConcepts;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    pub proposals_per_concept: usize,
    pub variant: VariantSpec,
    pub fit: FitConfig,
    /// Split on which predictive scores are measured.
    pub score_split: Split,
    /// Use set Jaccard instead of count-weighted Jaccard.
    pub binarize_similarity: bool,
    /// Stop proposing for a concept at its first DUMMY instead of spending
    /// one slot per DUMMY.
    pub dummy_ends_concept: bool,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            proposals_per_concept: 10,
            variant: VariantSpec::default(),
            fit: FitConfig::default(),
            score_split: Split::Train,
            binarize_similarity: false,
            dummy_ends_concept: false,
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.proposals_per_concept == 0 {
            return Err(Error::Spec("proposals_per_concept must be at least 1".into()));
        }
        self.fit.validate()
    }
}

/// A proposal awaiting the user's verdict.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub step: usize,
    pub concept: usize,
    pub feature: usize,
    pub score_pred: f64,
    pub score_intuit: f64,
}

/// Fraction of `(instance, concept)` pairs in `rows` where the two
/// activation sets agree.
pub fn concept_accuracy(pred: &ConceptActivations, truth: &ConceptActivations, rows: &[usize]) -> f64 {
    let c = pred.n_concepts();
    if rows.is_empty() || c == 0 {
        return 0.0;
    }
    let agree: usize = rows
        .iter()
        .map(|&r| (0..c).filter(|&j| pred.is_active(r, j) == truth.is_active(r, j)).count())
        .sum();
    agree as f64 / (rows.len() * c) as f64
}

/// Positive activations per concept over `rows`.
pub fn coverage(act: &ConceptActivations, rows: &[usize]) -> Vec<usize> {
    (0..act.n_concepts()).map(|j| act.active_count(j, rows)).collect()
}

/// Downstream accuracy of `f` on `rows` given concept activations.
pub fn downstream_accuracy(f: &LinearPredictor, act: &ConceptActivations, y: &[u8], rows: &[usize]) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    let correct = rows
        .iter()
        .filter(|&&r| decide(f.logit_binary(act.row(r))) == (y[r] == 1))
        .count();
    correct as f64 / rows.len() as f64
}

#[derive(Debug, Clone)]
pub struct Session {
    data: Arc<Dataset>,
    graph: Arc<SimilarityGraph>,
    cfg: SessionConfig,
    seeds: Vec<usize>,
    concepts: ConceptMatrix,
    activations: ConceptActivations,
    predictor: LinearPredictor,
    labels: IntuitLabels,
    explored: Vec<BTreeSet<usize>>,
    unlabeled: Vec<BTreeSet<usize>>,
    eval: EvalSet,
    splits: [Vec<usize>; 3],
    truth: Option<ConceptActivations>,
    concept: usize,
    used: usize,
    pending: Option<(ProposalScores, f64)>,
    journal: Vec<JournalEntry>,
    trace: Vec<TraceRecord>,
    metrics: Vec<MetricsRow>,
    n_queries: usize,
}

impl Session {
    /// Seeds concept `j` with `seeds[j]` and fits the predictor once.
    ///
    /// Every seed is labeled accepted for its own concept and rejected for
    /// all others, and every seed starts explored for every concept.
    pub fn new(
        data: Arc<Dataset>,
        graph: Arc<SimilarityGraph>,
        names: Vec<String>,
        seeds: Vec<usize>,
        cfg: SessionConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let d = data.n_features();
        let c = names.len();
        if c == 0 {
            return Err(Error::Invalid("a session needs at least one concept".into()));
        }
        if seeds.len() != c {
            return Err(Error::Invalid(format!("{} seeds for {c} concepts", seeds.len())));
        }
        if graph.n_features() != d {
            return Err(Error::Dimension(format!(
                "similarity graph has {} features, dataset has {d}",
                graph.n_features()
            )));
        }
        let seed_set: BTreeSet<usize> = seeds.iter().copied().collect();
        if seed_set.len() != c {
            return Err(Error::Invalid("seed features must be distinct".into()));
        }
        for &s in &seeds {
            if s >= d {
                return Err(Error::Bounds {
                    what: "seed feature",
                    index: s,
                    bound: d,
                });
            }
            if data.x.doc_count(s) == 0 {
                return Err(Error::Invalid(format!(
                    "seed feature {:?} never occurs in the data",
                    data.feature_names[s]
                )));
            }
        }

        let sets = seeds.iter().map(|&s| BTreeSet::from([s])).collect();
        let concepts = ConceptMatrix::from_sets(d, names, sets)?;
        let activations = evaluate_concepts(&concepts, &data.x)?;
        let mut labels = IntuitLabels::new(c);
        for (j, &s) in seeds.iter().enumerate() {
            for jj in 0..c {
                labels.set(s, jj, jj == j);
            }
        }
        let explored = vec![seed_set.clone(); c];
        let unlabeled = vec![(0..d).filter(|i| !seed_set.contains(i)).collect(); c];
        let splits = Split::ALL.map(|s| data.rows_in(s));
        let score_rows = data.rows_in(cfg.score_split);
        let eval = EvalSet::new(data.n_rows(), score_rows);

        let mut session = Session {
            predictor: LinearPredictor::zeros(c),
            data,
            graph,
            cfg,
            seeds,
            concepts,
            activations,
            labels,
            explored,
            unlabeled,
            eval,
            splits,
            truth: None,
            concept: 0,
            used: 0,
            pending: None,
            journal: Vec::new(),
            trace: Vec::new(),
            metrics: Vec::new(),
            n_queries: 0,
        };
        session.refit(None)?;
        session.metrics.push(session.metrics_row(0, ""));
        Ok(session)
    }

    /// Starts a session named and measured against `truth`.
    pub fn with_truth(
        data: Arc<Dataset>,
        graph: Arc<SimilarityGraph>,
        truth: &GroundTruthConcepts,
        seeds: Vec<usize>,
        cfg: SessionConfig,
    ) -> Result<Self> {
        let mut s = Session::new(data, graph, truth.names(), seeds, cfg)?;
        s.attach_truth(truth)?;
        Ok(s)
    }

    /// Attaches ground truth for the concept-accuracy metric. Recomputes
    /// the metrics rows recorded so far.
    pub fn attach_truth(&mut self, truth: &GroundTruthConcepts) -> Result<()> {
        if truth.n_concepts() != self.concepts.n_concepts() {
            return Err(Error::Dimension(format!(
                "truth has {} concepts, session has {}",
                truth.n_concepts(),
                self.concepts.n_concepts()
            )));
        }
        let a = truth.concept_matrix(self.data.n_features())?;
        self.truth = Some(evaluate_concepts(&a, &self.data.x)?);
        if self.journal.is_empty() {
            self.metrics = vec![self.metrics_row(0, "")];
        }
        Ok(())
    }

    fn train(&self) -> &[usize] {
        &self.splits[0]
    }

    fn refit(&mut self, warm: Option<&LinearPredictor>) -> Result<()> {
        let rows = self.train();
        let design = self.activations.design(rows);
        let y = self.data.labels_of(rows);
        self.predictor = fit(design.view(), &y, &self.cfg.fit, warm)?;
        Ok(())
    }

    fn metrics_row(&self, step: usize, concept: &str) -> MetricsRow {
        let acc = |k: usize| downstream_accuracy(&self.predictor, &self.activations, &self.data.y, &self.splits[k]);
        let test = &self.splits[2];
        MetricsRow {
            step,
            concept: concept.to_string(),
            downstream_acc_train: acc(0),
            downstream_acc_valid: acc(1),
            downstream_acc_test: acc(2),
            concept_acc_test: self.truth.as_ref().map(|t| concept_accuracy(&self.activations, t, test)),
            coverage: coverage(&self.activations, test),
            n_accepted: self.n_accepted(),
        }
    }

    fn snapshot(&self) -> Snapshot<'_> {
        Snapshot {
            x: &self.data.x,
            y: &self.data.y,
            eval: &self.eval,
            concepts: &self.concepts,
            activations: &self.activations,
            predictor: &self.predictor,
            graph: &self.graph,
            labels: &self.labels,
            unlabeled: &self.unlabeled,
        }
    }

    pub fn is_finished(&self) -> bool {
        self.concept >= self.concepts.n_concepts()
    }

    /// Concept currently receiving proposals, if any remain.
    pub fn current_concept(&self) -> Option<usize> {
        (!self.is_finished()).then_some(self.concept)
    }

    /// Computes proposals until one needs a verdict. DUMMY proposals are
    /// journaled and skipped. Returns `None` when the session is finished.
    /// Calling it again before [`decide`](Self::decide) returns the same query.
    pub fn next_query(&mut self) -> Result<Option<Query>> {
        loop {
            if let Some((ps, _)) = &self.pending {
                return Ok(Some(self.query_of(ps)));
            }
            if self.is_finished() {
                return Ok(None);
            }
            let started = Instant::now();
            let ps = propose(&self.snapshot(), self.concept, self.cfg.variant)?;
            let elapsed_ms = started.elapsed().as_secs_f64() * 1e3;
            match ps.choice {
                Choice::Feature(_) => self.pending = Some((ps, elapsed_ms)),
                Choice::Dummy => self.record_dummies(ps, elapsed_ms),
            }
        }
    }

    fn query_of(&self, ps: &ProposalScores) -> Query {
        let (score_pred, score_intuit) = ps.chosen_scores().unwrap_or((0.0, 0.0));
        let Choice::Feature(feature) = ps.choice else {
            unreachable!("only feature proposals are pending")
        };
        Query {
            step: self.journal.len() + 1,
            concept: ps.concept,
            feature,
            score_pred,
            score_intuit,
        }
    }

    /// Records a DUMMY step. The state is unchanged afterwards, so every
    /// remaining slot of the concept would also be DUMMY; those are filled
    /// directly.
    fn record_dummies(&mut self, ps: ProposalScores, elapsed_ms: f64) {
        let slots = if self.cfg.dummy_ends_concept {
            1
        } else {
            self.cfg.proposals_per_concept - self.used
        };
        for k in 0..slots {
            self.push_step(&ps, Decision::Dummy, if k == 0 { elapsed_ms } else { 0.0 });
        }
        if self.cfg.dummy_ends_concept {
            self.concept += 1;
            self.used = 0;
        }
    }

    /// Applies the user's verdict on the pending proposal.
    pub fn decide(&mut self, accept: bool) -> Result<&JournalEntry> {
        let (ps, elapsed_ms) = self
            .pending
            .take()
            .ok_or_else(|| Error::Feedback("no proposal is awaiting a decision".into()))?;
        let Choice::Feature(i) = ps.choice else {
            unreachable!("only feature proposals are pending")
        };
        let j = ps.concept;
        if accept {
            let data = Arc::clone(&self.data);
            let x = &data.x;
            if let Err(e) = self.activations.add_association(&mut self.concepts, i, j, x) {
                self.pending = Some((ps, elapsed_ms));
                return Err(e);
            }
            let warm = self.predictor.clone();
            if let Err(e) = self.refit(Some(&warm)) {
                self.activations.remove_association(&mut self.concepts, i, j, x)?;
                self.predictor = warm;
                self.pending = Some((ps, elapsed_ms));
                return Err(e);
            }
        }
        self.labels.set(i, j, accept);
        self.explored[j].insert(i);
        self.unlabeled[j].remove(&i);
        self.n_queries += 1;
        let decision = if accept { Decision::Accept } else { Decision::Reject };
        self.push_step(&ps, decision, elapsed_ms);
        Ok(self.journal.last().expect("step was just recorded"))
    }

    fn push_step(&mut self, ps: &ProposalScores, decision: Decision, elapsed_ms: f64) {
        let step = self.journal.len() + 1;
        let j = ps.concept;
        let chosen = ps.chosen_scores();
        let concept_name = self.concepts.names()[j].clone();
        self.journal.push(JournalEntry {
            step,
            concept: j,
            concept_name: concept_name.clone(),
            variant: ps.variant,
            choice: ps.choice,
            feature_name: match ps.choice {
                Choice::Feature(i) => Some(self.data.feature_names[i].clone()),
                Choice::Dummy => None,
            },
            decision,
            score_pred: chosen.map(|c| c.0),
            score_intuit: chosen.map(|c| c.1),
            dummy_score: ps.dummy_score,
            shortlist: ps.shortlist.clone(),
            weights: self.predictor.weights.clone(),
            bias: self.predictor.bias,
            n_accepted: self.n_accepted(),
        });
        self.trace.push(TraceRecord {
            step,
            concept: j,
            variant: ps.variant,
            shortlist: ps.shortlist.clone(),
            chosen: ps.choice,
            score_pred: chosen.map(|c| c.0),
            score_intuit: chosen.map(|c| c.1),
            decision: Some(decision),
            elapsed_ms,
        });
        self.metrics.push(self.metrics_row(step, &concept_name));
        self.used += 1;
        if self.used >= self.cfg.proposals_per_concept {
            self.concept += 1;
            self.used = 0;
        }
    }

    /// Runs to completion, asking `feedback` for every non-DUMMY proposal.
    pub fn run(&mut self, feedback: &mut dyn FeedbackSource) -> Result<()> {
        while let Some(q) = self.next_query()? {
            let accept = feedback.answer(q.feature, q.concept)?;
            self.decide(accept)?;
        }
        Ok(())
    }

    /// Re-applies journaled decisions to a fresh session, checking that each
    /// step proposes the journaled feature.
    pub fn replay(&mut self, entries: &[JournalEntry]) -> Result<()> {
        for entry in entries {
            if entry.decision == Decision::Dummy {
                continue;
            }
            let q = self
                .next_query()?
                .ok_or_else(|| Error::Feedback(format!("journal step {} is past the end", entry.step)))?;
            if q.step != entry.step || Choice::Feature(q.feature) != entry.choice || q.concept != entry.concept {
                return Err(Error::Feedback(format!(
                    "journal step {} does not match the replayed proposal",
                    entry.step
                )));
            }
            self.decide(entry.decision == Decision::Accept)?;
        }
        Ok(())
    }

    /// Checks the state invariants: explored and unexplored sets partition
    /// the features for every concept, and every association carries an
    /// accepted intuit label.
    pub fn check_invariants(&self) -> Result<()> {
        let d = self.data.n_features();
        for j in 0..self.concepts.n_concepts() {
            let (l, u) = (&self.explored[j], &self.unlabeled[j]);
            if l.len() + u.len() != d || l.intersection(u).next().is_some() {
                return Err(Error::Invalid(format!("explored sets of concept {j} do not partition the features")));
            }
            if let Some(&i) = self.concepts.features(j).iter().find(|&&i| self.labels.get(i, j) != Some(true)) {
                return Err(Error::Invalid(format!(
                    "feature {i} is associated with concept {j} without an accepted label"
                )));
            }
        }
        Ok(())
    }

    pub fn n_accepted(&self) -> usize {
        self.concepts.n_associations() - self.seeds.len()
    }

    pub fn n_queries(&self) -> usize {
        self.n_queries
    }

    pub fn data(&self) -> &Arc<Dataset> {
        &self.data
    }

    pub fn config(&self) -> &SessionConfig {
        &self.cfg
    }

    pub fn seeds(&self) -> &[usize] {
        &self.seeds
    }

    pub fn concepts(&self) -> &ConceptMatrix {
        &self.concepts
    }

    pub fn activations(&self) -> &ConceptActivations {
        &self.activations
    }

    pub fn predictor(&self) -> &LinearPredictor {
        &self.predictor
    }

    pub fn labels(&self) -> &IntuitLabels {
        &self.labels
    }

    pub fn unlabeled(&self, concept: usize) -> &BTreeSet<usize> {
        &self.unlabeled[concept]
    }

    pub fn explored(&self, concept: usize) -> &BTreeSet<usize> {
        &self.explored[concept]
    }

    pub fn pending(&self) -> Option<&ProposalScores> {
        self.pending.as_ref().map(|p| &p.0)
    }

    pub fn journal(&self) -> &[JournalEntry] {
        &self.journal
    }

    pub fn trace(&self) -> &[TraceRecord] {
        &self.trace
    }

    pub fn metrics(&self) -> &[MetricsRow] {
        &self.metrics
    }

    pub fn latest_metrics(&self) -> &MetricsRow {
        self.metrics.last().expect("metrics start with the initial row")
    }

    pub fn concepts_json(&self) -> Result<String> {
        self.concepts.to_json(&self.data.feature_names)
    }
}
