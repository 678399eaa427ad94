//! Active-learning concept classifiers: one l1 logistic classifier per
//! concept over standardized raw features, trained on instance-level concept
//! labels queried from an oracle. The downstream predictor reads the concept
//! probabilities directly.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::seq::{IndexedRandom, SliceRandom};
use serde::{Deserialize, Serialize};

use super::{labels_at, SplitAccuracy, Standardized};
use crate::concept::{evaluate_concepts, ConceptActivations};
use crate::data::{Dataset, Split};
use crate::predictor::{decide, fit, sigmoid, FitConfig, LinearPredictor};
use crate::rng::{derive_seed, seeded};
use crate::session::record::MetricsRow;
use crate::truth::GroundTruthConcepts;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlConfig {
    /// Unlabeled instances sampled per round as query candidates.
    pub candidates: usize,
    /// l1 weights tried when matching the target feature count.
    pub l1_grid: Vec<f64>,
    /// Iteration cap for the trial refits that score each candidate.
    pub trial_iterations: usize,
    pub fit: FitConfig,
    pub seed: u64,
}

impl Default for AlConfig {
    fn default() -> Self {
        AlConfig {
            candidates: 100,
            l1_grid: (1..=10).map(|k| k as f64 / 100.0).collect(),
            trial_iterations: 3,
            fit: FitConfig::default(),
            seed: 0,
        }
    }
}

impl AlConfig {
    pub fn validate(&self) -> Result<()> {
        if self.candidates == 0 || self.trial_iterations == 0 {
            return Err(Error::Spec("candidate count and trial iterations must be positive".into()));
        }
        if self.l1_grid.is_empty() || self.l1_grid.iter().any(|l| !(*l > 0.0)) {
            return Err(Error::Spec("l1 grid must be nonempty and positive".into()));
        }
        self.fit.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlResult {
    pub l1_weight: f64,
    pub classifiers: Vec<LinearPredictor>,
    /// Downstream predictor over concept probabilities.
    pub predictor: LinearPredictor,
    /// `(concept, row)` for every oracle query, in order.
    pub queries: Vec<(usize, usize)>,
    /// Same schema as the session engine; one row before any query and one
    /// after each query.
    pub metrics: Vec<MetricsRow>,
    pub accuracy: SplitAccuracy,
}

impl AlResult {
    pub fn concept_accuracy_test(&self) -> f64 {
        self.metrics.last().and_then(|m| m.concept_acc_test).unwrap_or(0.0)
    }
}

/// Labeled instances of one concept. `x` and `labels` carry one scratch
/// slot past the pool for trial candidates.
struct Pool {
    rows: Vec<usize>,
    x: Array2<f64>,
    labels: Vec<u8>,
    labeled: Vec<bool>,
}

impl Pool {
    fn new(n_rows: usize, n_features: usize) -> Self {
        Pool {
            rows: Vec::new(),
            x: Array2::zeros((1, n_features)),
            labels: vec![0],
            labeled: vec![false; n_rows],
        }
    }

    fn stage(&mut self, data: &Standardized, row: usize, label: bool) {
        let n = self.rows.len();
        self.x.row_mut(n).assign(&data.x.row(row));
        self.labels[n] = u8::from(label);
    }

    fn push(&mut self, data: &Standardized, row: usize, label: bool) {
        self.stage(data, row, label);
        self.rows.push(row);
        self.labeled[row] = true;
        self.x
            .push_row(Array1::zeros(self.x.ncols()).view())
            .expect("row width matches");
        self.labels.push(0);
    }

    /// The pool, plus the staged candidate when `with_staged`.
    fn design(&self, with_staged: bool) -> (ArrayView2<'_, f64>, &[u8]) {
        let n = self.rows.len() + usize::from(with_staged);
        (self.x.slice(s![..n, ..]), &self.labels[..n])
    }
}

struct State<'a> {
    d: &'a Dataset,
    data: &'a Standardized,
    truth: ConceptActivations,
    names: Vec<String>,
    /// Concept probabilities for every dataset row.
    probs: Array2<f64>,
    classifiers: Vec<LinearPredictor>,
    f: LinearPredictor,
    cfg: &'a AlConfig,
    l1: f64,
}

impl State<'_> {
    fn fit_concept(
        &self,
        pool: &Pool,
        staged: bool,
        warm: Option<&LinearPredictor>,
        max_iter: usize,
    ) -> Result<LinearPredictor> {
        let cfg = FitConfig {
            l1_weight: self.l1,
            standardize: false,
            max_iter,
            ..self.cfg.fit
        };
        let (x, y) = pool.design(staged);
        fit(x, y, &cfg, warm)
    }

    fn column(&self, m: &LinearPredictor, x: ArrayView2<f64>) -> Array1<f64> {
        (x.dot(&Array1::from(m.weights.clone())) + m.bias).mapv(sigmoid)
    }

    fn refit_downstream(&mut self) -> Result<()> {
        let train = self.data.rows(Split::Train);
        let design = self.probs.select(Axis(0), train);
        let cfg = FitConfig {
            l1_weight: 0.0,
            standardize: false,
            ..self.cfg.fit
        };
        self.f = fit(design.view(), &labels_at(&self.d.y, train), &cfg, Some(&self.f))?;
        Ok(())
    }

    fn logits(&self) -> Vec<f64> {
        let w = Array1::from(self.f.weights.clone());
        (self.probs.dot(&w) + self.f.bias).to_vec()
    }

    fn metrics(&self, step: usize, concept: usize, n_queries: usize) -> MetricsRow {
        let acc = SplitAccuracy::from_logits(&self.logits(), &self.d.y, &self.data.splits);
        let test = self.data.rows(Split::Test);
        let c = self.names.len();
        let agree: usize = test
            .iter()
            .map(|&r| (0..c).filter(|&j| (self.probs[[r, j]] >= 0.5) == self.truth.is_active(r, j)).count())
            .sum();
        let concept_acc = if test.is_empty() { 0.0 } else { agree as f64 / (test.len() * c) as f64 };
        MetricsRow {
            step,
            concept: self.names[concept].clone(),
            downstream_acc_train: acc.train,
            downstream_acc_valid: acc.valid,
            downstream_acc_test: acc.test,
            concept_acc_test: Some(concept_acc),
            coverage: (0..c)
                .map(|j| test.iter().filter(|&&r| self.probs[[r, j]] >= 0.5).count())
                .collect(),
            n_accepted: n_queries,
        }
    }
}

/// Runs the baseline with `budget` oracle queries in total, spread evenly
/// over the concepts in order (earlier concepts take the remainder).
/// `target_features` is the feature count the l1 weight is tuned to match.
pub fn run_al_baseline(
    d: &Dataset,
    truth: &GroundTruthConcepts,
    seeds: &[usize],
    budget: usize,
    target_features: usize,
    cfg: &AlConfig,
) -> Result<AlResult> {
    run_al_baseline_with(d, &Standardized::new(d), truth, seeds, budget, target_features, cfg)
}

pub fn run_al_baseline_with(
    d: &Dataset,
    data: &Standardized,
    truth: &GroundTruthConcepts,
    seeds: &[usize],
    budget: usize,
    target_features: usize,
    cfg: &AlConfig,
) -> Result<AlResult> {
    cfg.validate()?;
    let c = truth.n_concepts();
    if seeds.len() != c {
        return Err(Error::Spec(format!("{} seeds for {c} concepts", seeds.len())));
    }
    truth.validate(d.n_features())?;
    if let Some(&s) = seeds.iter().find(|&&s| s >= d.n_features()) {
        return Err(Error::Bounds {
            what: "seed feature",
            index: s,
            bound: d.n_features(),
        });
    }
    let truth_act = evaluate_concepts(&truth.concept_matrix(d.n_features())?, &d.x)?;
    let train = data.rows(Split::Train).to_vec();
    let mut rng = seeded(derive_seed(cfg.seed, 0));

    // initial pools: seed-containing rows are positive, plus one negative
    let mut pools = Vec::with_capacity(c);
    for (j, &s) in seeds.iter().enumerate() {
        let mut pool = Pool::new(d.n_rows(), d.n_features());
        for &r in &train {
            if d.x.get(r, s) > 0 {
                pool.push(data, r, true);
            }
        }
        if pool.rows.is_empty() {
            return Err(Error::Invalid(format!("seed feature {s} never occurs in the training split")));
        }
        let negatives: Vec<usize> = train.iter().copied().filter(|&r| !truth_act.is_active(r, j)).collect();
        let &neg = negatives
            .choose(&mut rng)
            .ok_or_else(|| Error::Invalid(format!("concept {j} has no negative training instance")))?;
        pool.push(data, neg, false);
        pools.push(pool);
    }

    let mut state = State {
        d,
        data,
        truth: truth_act,
        names: truth.names(),
        probs: Array2::zeros((d.n_rows(), c)),
        classifiers: Vec::new(),
        f: LinearPredictor::zeros(c),
        cfg,
        l1: cfg.l1_grid[0],
    };

    // l1 weight whose initial classifiers come closest to the target
    // feature count; ties go to the smaller weight
    let mut best: Option<(usize, f64, Vec<LinearPredictor>)> = None;
    let mut grid = cfg.l1_grid.clone();
    grid.sort_by(f64::total_cmp);
    for &l1 in &grid {
        state.l1 = l1;
        let models = pools
            .iter()
            .map(|p| state.fit_concept(p, false, None, cfg.fit.max_iter))
            .collect::<Result<Vec<_>>>()?;
        let nonzeros: usize = models.iter().map(LinearPredictor::nonzeros).sum();
        let gap = nonzeros.abs_diff(target_features);
        if best.as_ref().is_none_or(|b| gap < b.0) {
            best = Some((gap, l1, models));
        }
    }
    let (_, l1, models) = best.expect("grid is nonempty");
    state.l1 = l1;
    for (j, m) in models.iter().enumerate() {
        let col = state.column(m, data.x.view());
        state.probs.column_mut(j).assign(&col);
    }
    state.classifiers = models;
    state.refit_downstream()?;

    let train_x = data.select(&train);
    let train_y = labels_at(&d.y, &train);
    let mut metrics = vec![state.metrics(0, 0, 0)];
    let mut queries = Vec::with_capacity(budget);
    for j in 0..c {
        let quota = budget / c + usize::from(j < budget % c);
        for _ in 0..quota {
            let mut candidates: Vec<usize> = train.iter().copied().filter(|&r| !pools[j].labeled[r]).collect();
            if candidates.is_empty() {
                break;
            }
            candidates.shuffle(&mut rng);
            candidates.truncate(cfg.candidates);
            candidates.sort_unstable();

            // train logits without concept j's contribution
            let wj = state.f.weights[j];
            let base: Vec<f64> = train
                .iter()
                .map(|&r| {
                    state.f.bias
                        + (0..c).filter(|&k| k != j).map(|k| state.f.weights[k] * state.probs[[r, k]]).sum::<f64>()
                })
                .collect();

            let mut best: Option<(usize, usize)> = None;
            for &cand in &candidates {
                let label = state.truth.is_active(cand, j);
                pools[j].stage(data, cand, label);
                let trial = state.fit_concept(&pools[j], true, Some(&state.classifiers[j]), cfg.trial_iterations)?;
                let col = state.column(&trial, train_x.view());
                let correct = base
                    .iter()
                    .zip(&col)
                    .zip(&train_y)
                    .filter(|((z, p), &t)| decide(**z + wj * **p) == (t == 1))
                    .count();
                if best.is_none_or(|b| correct > b.1) {
                    best = Some((cand, correct));
                }
            }
            let (row, _) = best.expect("candidates are nonempty");
            pools[j].push(data, row, state.truth.is_active(row, j));
            let m = state.fit_concept(&pools[j], false, Some(&state.classifiers[j]), cfg.fit.max_iter)?;
            let col = state.column(&m, data.x.view());
            state.probs.column_mut(j).assign(&col);
            state.classifiers[j] = m;
            state.refit_downstream()?;
            queries.push((j, row));
            metrics.push(state.metrics(queries.len(), j, queries.len()));
        }
    }

    let accuracy = SplitAccuracy::from_logits(&state.logits(), &d.y, &data.splits);
    Ok(AlResult {
        l1_weight: l1,
        classifiers: state.classifiers,
        predictor: state.f,
        queries,
        metrics,
        accuracy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::toy::{generate_toy, ToySpec};

    fn small() -> (Dataset, GroundTruthConcepts) {
        generate_toy(&ToySpec {
            n_instances: 600,
            seed: 3,
            ..ToySpec::default()
        })
        .unwrap()
    }

    #[test]
    fn zero_budget_fits_initial_pools_only() {
        let (d, truth) = small();
        let r = run_al_baseline(&d, &truth, &[0, 4, 8], 0, 12, &AlConfig::default()).unwrap();
        assert!(r.queries.is_empty());
        assert_eq!(r.metrics.len(), 1);
        assert_eq!(r.classifiers.len(), 3);
    }

    #[test]
    fn queries_respect_budget_and_never_repeat() {
        let (d, truth) = small();
        let cfg = AlConfig {
            candidates: 20,
            ..AlConfig::default()
        };
        let r = run_al_baseline(&d, &truth, &[0, 4, 8], 7, 12, &cfg).unwrap();
        assert_eq!(r.queries.len(), 7);
        let per: Vec<usize> = (0..3).map(|j| r.queries.iter().filter(|q| q.0 == j).count()).collect();
        assert_eq!(per, vec![3, 2, 2]);
        let seed_rows: Vec<usize> = d.rows_in(Split::Train);
        for (k, q) in r.queries.iter().enumerate() {
            assert!(!r.queries[..k].contains(q));
            assert!(seed_rows.contains(&q.1));
            // seed-containing rows start labeled, so are never queried
            assert_eq!(d.x.get(q.1, [0, 4, 8][q.0]), 0);
        }
        assert_eq!(r.metrics.len(), 8);
        let again = run_al_baseline(&d, &truth, &[0, 4, 8], 7, 12, &cfg).unwrap();
        assert_eq!(again, r);
    }

    #[test]
    fn separating_feature_gives_accurate_concept() {
        // one concept defined by a single feature
        let (d, _) = small();
        let truth = GroundTruthConcepts::new(
            vec![crate::truth::TruthConcept {
                name: "only".into(),
                features: vec![4],
                seeds: vec![4],
            }],
            d.n_features(),
        )
        .unwrap();
        let r = run_al_baseline(&d, &truth, &[4], 5, 1, &AlConfig::default()).unwrap();
        assert!(r.concept_accuracy_test() >= 0.97, "{}", r.concept_accuracy_test());
    }

    #[test]
    fn bad_inputs() {
        let (d, truth) = small();
        assert!(run_al_baseline(&d, &truth, &[0, 4], 3, 12, &AlConfig::default()).is_err());
        let cfg = AlConfig {
            l1_grid: vec![],
            ..AlConfig::default()
        };
        assert!(run_al_baseline(&d, &truth, &[0, 4, 8], 3, 12, &cfg).is_err());
    }
}
