//! Multi-restart experiments driven by a JSON config.
//!
//! Each restart samples one seed feature per concept and runs every listed
//! variant (and every enabled baseline) from those same seeds, so
//! comparisons are paired. Restart `r` draws all randomness from
//! `derive_seed(master_seed, r)`. Results are persisted per restart under
//! `<output_dir>/runs/` before any aggregation, and an interrupted run
//! resumes by reusing the restarts already on disk.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{self, AlConfig, NnConfig, Standardized};
use crate::concept::{evaluate_concepts, ConceptMatrix};
use crate::data::{class_balance, filter_features, generate_toy, load_dataset, Dataset, Split, SplitSpec, ToySpec};
use crate::predictor::{fit, FitConfig};
use crate::proposal::{SimilarityGraph, VariantSpec};
use crate::rng::{derive_seed, seeded};
use crate::session::{downstream_accuracy, write_jsonl, write_metrics_csv, Decision, MetricsRow, Oracle, Session, SessionConfig};
use crate::truth::GroundTruthConcepts;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetSource {
    /// Synthetic data. With `resample`, every restart draws a fresh dataset
    /// from the spec; otherwise all restarts share the spec's own seed.
    Toy {
        #[serde(default)]
        spec: ToySpec,
        #[serde(default = "yes")]
        resample: bool,
    },
    /// Count, label and feature-name files plus a truth file, with optional
    /// class balancing and document-frequency filtering.
    Files {
        counts: PathBuf,
        labels: PathBuf,
        features: PathBuf,
        truth: PathBuf,
        #[serde(default)]
        split: SplitSpec,
        #[serde(default)]
        balance: bool,
        #[serde(default)]
        min_doc_frac: Option<f64>,
        #[serde(default)]
        max_doc_frac: Option<f64>,
    },
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineToggles {
    pub al: bool,
    pub lr: bool,
    pub nn: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    #[serde(default = "default_variants")]
    pub variants: Vec<VariantSpec>,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default = "default_proposals")]
    pub proposals_per_concept: usize,
    /// Session options other than the variant and the proposal budget.
    #[serde(default)]
    pub session: SessionConfig,
    #[serde(default)]
    pub baselines: BaselineToggles,
    #[serde(default)]
    pub al: AlConfig,
    #[serde(default)]
    pub nn: NnConfig,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub master_seed: u64,
}

fn default_variants() -> Vec<VariantSpec> {
    vec![VariantSpec::Pred, VariantSpec::Intuit, VariantSpec::PredIntuit(5)]
}

fn default_restarts() -> usize {
    25
}

fn default_proposals() -> usize {
    10
}

impl ExperimentConfig {
    /// Parses a config file. Relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut cfg: ExperimentConfig = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.output_dir);
        if let DatasetSource::Files {
            counts,
            labels,
            features,
            truth,
            ..
        } = &mut cfg.dataset
        {
            for p in [counts, labels, features, truth] {
                resolve(p);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 {
            return Err(Error::Spec("restarts must be at least 1".into()));
        }
        if self.variants.is_empty() {
            return Err(Error::Spec("at least one variant is required".into()));
        }
        let distinct: BTreeSet<String> = self.variants.iter().map(|v| v.to_string()).collect();
        if distinct.len() != self.variants.len() {
            return Err(Error::Spec("variants must be distinct".into()));
        }
        self.session_config(self.variants[0]).validate()?;
        if self.baselines.al {
            self.al.validate()?;
        }
        if self.baselines.nn {
            self.nn.validate()?;
        }
        match &self.dataset {
            DatasetSource::Toy { spec, .. } => spec.validate(),
            DatasetSource::Files {
                counts,
                labels,
                features,
                truth,
                split,
                ..
            } => {
                for p in [counts, labels, features, truth] {
                    if !p.is_file() {
                        return Err(Error::Spec(format!("file {} does not exist", p.display())));
                    }
                }
                split.ratios.validate()
            }
        }
    }

    pub fn session_config(&self, variant: VariantSpec) -> SessionConfig {
        SessionConfig {
            variant,
            proposals_per_concept: self.proposals_per_concept,
            ..self.session
        }
    }

    pub fn restart_seed(&self, restart: usize) -> u64 {
        derive_seed(self.master_seed, restart as u64)
    }
}

/// Dataset, truth and similarity graph for one restart.
pub struct Problem {
    pub data: Arc<Dataset>,
    pub truth: GroundTruthConcepts,
    pub graph: Arc<SimilarityGraph>,
}

/// Builds problems, reusing the shared one when the dataset does not change
/// between restarts.
pub struct ProblemSource {
    cfg: ExperimentConfig,
    shared: Option<Arc<Problem>>,
}

impl ProblemSource {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        let shared = match &cfg.dataset {
            DatasetSource::Toy { resample: true, .. } => None,
            _ => Some(Arc::new(build_problem(cfg, 0)?)),
        };
        Ok(ProblemSource {
            cfg: cfg.clone(),
            shared,
        })
    }

    pub fn get(&self, restart: usize) -> Result<Arc<Problem>> {
        match &self.shared {
            Some(p) => Ok(Arc::clone(p)),
            None => build_problem(&self.cfg, restart).map(Arc::new),
        }
    }
}

fn build_problem(cfg: &ExperimentConfig, restart: usize) -> Result<Problem> {
    let (data, truth) = match &cfg.dataset {
        DatasetSource::Toy { spec, resample } => {
            let mut spec = spec.clone();
            if *resample {
                spec.seed = derive_seed(cfg.restart_seed(restart), 0);
            }
            generate_toy(&spec)?
        }
        DatasetSource::Files {
            counts,
            labels,
            features,
            truth,
            split,
            balance,
            min_doc_frac,
            max_doc_frac,
        } => {
            let mut d = load_dataset(counts, labels, features, *split)?;
            if *balance {
                d = class_balance(&d, derive_seed(cfg.master_seed, u64::MAX))?;
            }
            if min_doc_frac.is_some() || max_doc_frac.is_some() {
                d = filter_features(&d, min_doc_frac.unwrap_or(0.0), max_doc_frac.unwrap_or(1.0))?.0;
            }
            let t = GroundTruthConcepts::load(truth, &d)?;
            (d, t)
        }
    };
    let graph = SimilarityGraph::build(&data.x, cfg.session.binarize_similarity);
    Ok(Problem {
        data: Arc::new(data),
        truth,
        graph: Arc::new(graph),
    })
}

/// Final numbers of one method in one restart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRun {
    pub method: String,
    pub downstream_acc_test: f64,
    pub concept_acc_test: Option<f64>,
    /// Accepted proposals for sessions, oracle queries for AL.
    pub n_accepted: Option<usize>,
    pub n_queries: Option<usize>,
    pub n_dummy: Option<usize>,
    /// Steps at which an association lacked an accepted label.
    pub invariant_violations: usize,
    pub metrics: Vec<MetricsRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartRecord {
    pub restart: usize,
    pub seed: u64,
    pub seeds: Vec<usize>,
    pub seed_names: Vec<String>,
    pub runs: Vec<MethodRun>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl RestartRecord {
    pub fn is_complete(&self) -> bool {
        self.error.is_none()
    }
}

pub fn restart_dir(output_dir: &Path, restart: usize) -> PathBuf {
    output_dir.join("runs").join(format!("restart-{restart:03}"))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path.display().to_string(), e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Runs one variant to completion with the truth oracle, checking the state
/// invariants after every step.
pub fn run_variant(problem: &Problem, seeds: &[usize], cfg: SessionConfig) -> Result<(Session, usize)> {
    let mut s = Session::with_truth(
        Arc::clone(&problem.data),
        Arc::clone(&problem.graph),
        &problem.truth,
        seeds.to_vec(),
        cfg,
    )?;
    let mut oracle = Oracle::new(&problem.truth);
    let mut violations = usize::from(s.check_invariants().is_err());
    while let Some(q) = s.next_query()? {
        violations += usize::from(s.check_invariants().is_err());
        let accept = crate::session::FeedbackSource::answer(&mut oracle, q.feature, q.concept)?;
        s.decide(accept)?;
        violations += usize::from(s.check_invariants().is_err());
    }
    Ok((s, violations))
}

fn session_run(s: &Session, violations: usize) -> MethodRun {
    let last = s.latest_metrics();
    MethodRun {
        method: s.config().variant.to_string(),
        downstream_acc_test: last.downstream_acc_test,
        concept_acc_test: last.concept_acc_test,
        n_accepted: Some(s.n_accepted()),
        n_queries: Some(s.n_queries()),
        n_dummy: Some(s.journal().iter().filter(|e| e.decision == Decision::Dummy).count()),
        invariant_violations: violations,
        metrics: s.metrics().to_vec(),
    }
}

/// Runs every variant and enabled baseline for one restart and writes the
/// journals, metrics and record under the restart directory.
pub fn run_restart(cfg: &ExperimentConfig, problem: &Problem, restart: usize) -> Result<RestartRecord> {
    let seed = cfg.restart_seed(restart);
    let seeds = problem.truth.sample_seeds(&mut seeded(derive_seed(seed, 1)))?;
    let dir = restart_dir(&cfg.output_dir, restart);
    create_dir(&dir)?;
    let d = &problem.data;
    let mut runs = Vec::new();
    let mut first_associations = None;
    for &variant in &cfg.variants {
        let (s, violations) = run_variant(problem, &seeds, cfg.session_config(variant))?;
        first_associations.get_or_insert(s.concepts().n_associations());
        let mut journal = Vec::new();
        write_jsonl(s.journal(), &mut journal)?;
        write_file(&dir.join(format!("{variant}.journal.jsonl")), &journal)?;
        let mut metrics = Vec::new();
        write_metrics_csv(s.metrics(), &mut metrics)?;
        write_file(&dir.join(format!("{variant}.metrics.csv")), &metrics)?;
        write_file(&dir.join(format!("{variant}.concepts.json")), s.concepts_json()?.as_bytes())?;
        runs.push(session_run(&s, violations));
    }

    let enabled = cfg.baselines;
    if enabled.al || enabled.lr || enabled.nn {
        let standardized = Standardized::new(d);
        let c = problem.truth.n_concepts();
        if enabled.al {
            let al_cfg = AlConfig {
                seed: derive_seed(seed, 3),
                ..cfg.al.clone()
            };
            let budget = c * cfg.proposals_per_concept;
            let target = first_associations.unwrap_or(c);
            let r = baselines::al::run_al_baseline_with(d, &standardized, &problem.truth, &seeds, budget, target, &al_cfg)?;
            let mut metrics = Vec::new();
            write_metrics_csv(&r.metrics, &mut metrics)?;
            write_file(&dir.join("al.metrics.csv"), &metrics)?;
            runs.push(MethodRun {
                method: "al".into(),
                downstream_acc_test: r.accuracy.test,
                concept_acc_test: Some(r.concept_accuracy_test()),
                n_accepted: None,
                n_queries: Some(r.queries.len()),
                n_dummy: None,
                invariant_violations: 0,
                metrics: r.metrics,
            });
        }
        if enabled.lr {
            let r = baselines::lr::run_lr_baseline_with(
                d,
                &standardized,
                c,
                &baselines::lr_penalty_grid(),
                &cfg.session.fit,
            )?;
            runs.push(plain_run("lr", r.accuracy.test));
        }
        if enabled.nn {
            let nn_cfg = NnConfig {
                hidden: c,
                seed: derive_seed(seed, 4),
                ..cfg.nn.clone()
            };
            let r = baselines::nn::run_nn_baseline_with(d, &standardized, &nn_cfg)?;
            runs.push(plain_run("nn", r.accuracy.test));
        }
    }

    Ok(RestartRecord {
        restart,
        seed,
        seed_names: seeds.iter().map(|&s| d.feature_names[s].clone()).collect(),
        seeds,
        runs,
        error: None,
    })
}

fn plain_run(method: &str, test: f64) -> MethodRun {
    MethodRun {
        method: method.into(),
        downstream_acc_test: test,
        concept_acc_test: None,
        n_accepted: None,
        n_queries: None,
        n_dummy: None,
        invariant_violations: 0,
        metrics: Vec::new(),
    }
}

fn record_path(output_dir: &Path, restart: usize) -> PathBuf {
    restart_dir(output_dir, restart).join("record.json")
}

/// Loads every persisted restart record, sorted by restart index.
pub fn load_records(output_dir: &Path) -> Result<Vec<RestartRecord>> {
    let runs = output_dir.join("runs");
    let entries = fs::read_dir(&runs).map_err(|e| Error::io(runs.display().to_string(), e))?;
    let mut records = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(runs.display().to_string(), e))?;
        let path = entry.path().join("record.json");
        if path.is_file() {
            let text = fs::read_to_string(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
            records.push(serde_json::from_str::<RestartRecord>(&text)?);
        }
    }
    records.sort_by_key(|r| r.restart);
    Ok(records)
}

/// Runs (or resumes) every restart, then writes the report. Restarts that
/// fail are recorded with their error and left out of the aggregates.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RestartRecord>> {
    cfg.validate()?;
    create_dir(&cfg.output_dir)?;
    let cfg_path = cfg.output_dir.join("config.json");
    let cfg_text = serde_json::to_string_pretty(cfg)?;
    if cfg_path.is_file() {
        let previous = fs::read_to_string(&cfg_path).map_err(|e| Error::io(cfg_path.display().to_string(), e))?;
        if previous != cfg_text {
            return Err(Error::Spec(format!(
                "{} holds a run with a different configuration",
                cfg.output_dir.display()
            )));
        }
    } else {
        write_file(&cfg_path, cfg_text.as_bytes())?;
    }

    let problems = ProblemSource::new(cfg)?;
    let records: Vec<RestartRecord> = (0..cfg.restarts)
        .into_par_iter()
        .map(|r| -> Result<RestartRecord> {
            let path = record_path(&cfg.output_dir, r);
            if let Ok(text) = fs::read_to_string(&path) {
                if let Ok(rec) = serde_json::from_str::<RestartRecord>(&text) {
                    if rec.is_complete() {
                        log::info!("restart {r} already complete, reusing");
                        return Ok(rec);
                    }
                }
            }
            let rec = problems
                .get(r)
                .and_then(|p| run_restart(cfg, &p, r))
                .unwrap_or_else(|e| {
                    log::warn!("restart {r} failed: {e}");
                    RestartRecord {
                        restart: r,
                        seed: cfg.restart_seed(r),
                        seeds: Vec::new(),
                        seed_names: Vec::new(),
                        runs: Vec::new(),
                        error: Some(e.to_string()),
                    }
                });
            create_dir(&restart_dir(&cfg.output_dir, r))?;
            write_file(&path, serde_json::to_string_pretty(&rec)?.as_bytes())?;
            Ok(rec)
        })
        .collect::<Result<_>>()?;
    emit_report(&cfg.output_dir, &cfg.output_dir)?;
    Ok(records)
}

/// Test downstream accuracy of the random-feature curve at one `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManualPoint {
    pub n: usize,
    /// One value per restart, in restart order.
    pub downstream_acc_test: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManualCurve {
    pub points: Vec<ManualPoint>,
    /// The model that associates every truth feature, per restart.
    pub full_truth: Vec<f64>,
}

fn fit_and_score(d: &Dataset, a: &ConceptMatrix, fit_cfg: &FitConfig) -> Result<f64> {
    let act = evaluate_concepts(a, &d.x)?;
    let train = d.rows_in(Split::Train);
    let f = fit(act.design(&train).view(), &d.labels_of(&train), fit_cfg, None)?;
    Ok(downstream_accuracy(&f, &act, &d.y, &d.rows_in(Split::Test)))
}

/// The manual baseline: each concept starts from the restart's seed and
/// adds truth features in a random order, one more per step, until its
/// list runs out. `f` is refit from scratch at each `n`.
pub fn run_manual_baseline(cfg: &ExperimentConfig, max_n: usize) -> Result<ManualCurve> {
    cfg.validate()?;
    if max_n == 0 {
        return Err(Error::Spec("max_n must be at least 1".into()));
    }
    let problems = ProblemSource::new(cfg)?;
    let per_restart: Vec<(Vec<f64>, f64)> = (0..cfg.restarts)
        .into_par_iter()
        .map(|r| {
            let p = problems.get(r)?;
            let seed = cfg.restart_seed(r);
            let seeds = p.truth.sample_seeds(&mut seeded(derive_seed(seed, 1)))?;
            let mut rng = seeded(derive_seed(seed, 2));
            let orders: Vec<Vec<usize>> = p
                .truth
                .concepts
                .iter()
                .zip(&seeds)
                .map(|(c, &s)| {
                    let mut rest: Vec<usize> = c.features.iter().copied().filter(|&i| i != s).collect();
                    rest.shuffle(&mut rng);
                    std::iter::once(s).chain(rest).collect()
                })
                .collect();
            let names = p.truth.names();
            let d = p.data.n_features();
            let curve = (1..=max_n)
                .map(|n| {
                    let sets = orders.iter().map(|o| o.iter().take(n).copied().collect()).collect();
                    fit_and_score(&p.data, &ConceptMatrix::from_sets(d, names.clone(), sets)?, &cfg.session.fit)
                })
                .collect::<Result<Vec<_>>>()?;
            let full = fit_and_score(&p.data, &p.truth.concept_matrix(d)?, &cfg.session.fit)?;
            Ok((curve, full))
        })
        .collect::<Result<_>>()?;
    Ok(ManualCurve {
        points: (1..=max_n)
            .map(|n| ManualPoint {
                n,
                downstream_acc_test: per_restart.iter().map(|r| r.0[n - 1]).collect(),
            })
            .collect(),
        full_truth: per_restart.iter().map(|r| r.1).collect(),
    })
}

pub const MANUAL_FILE: &str = "manual.json";

pub fn save_manual(curve: &ManualCurve, output_dir: &Path) -> Result<()> {
    create_dir(output_dir)?;
    write_file(
        &output_dir.join(MANUAL_FILE),
        serde_json::to_string_pretty(curve)?.as_bytes(),
    )
}

/// Mean and standard error (sample standard deviation over `sqrt(n)`); the
/// error is 0 for a single value.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// The report files as strings, keyed by file name.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub files: BTreeMap<&'static str, String>,
    pub failed_restarts: usize,
}

fn fmt_opt((m, s): (f64, f64)) -> [String; 2] {
    if m.is_nan() {
        [String::new(), String::new()]
    } else {
        [format!("{m:.6}"), format!("{s:.6}")]
    }
}

fn csv_string(header: &[&str], rows: &[Vec<String>]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(|e| Error::Format(e.to_string()))?;
    for r in rows {
        w.write_record(r).map_err(|e| Error::Format(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
}

/// Aggregates completed restarts. Methods keep the order of their first
/// appearance.
pub fn build_report(records: &[RestartRecord], manual: Option<&ManualCurve>) -> Result<Report> {
    let done: Vec<&RestartRecord> = records.iter().filter(|r| r.is_complete()).collect();
    if done.is_empty() {
        return Err(Error::Invalid("no completed restart to report".into()));
    }
    let mut methods: Vec<&str> = Vec::new();
    for r in &done {
        for m in &r.runs {
            if !methods.contains(&m.method.as_str()) {
                methods.push(&m.method);
            }
        }
    }
    let runs_of = |method: &str| -> Vec<&MethodRun> {
        done.iter()
            .filter_map(|r| r.runs.iter().find(|m| m.method == method))
            .collect()
    };

    let mut table = Vec::new();
    let mut ablation = Vec::new();
    let mut coverage = Vec::new();
    let mut summary = String::new();
    writeln!(summary, "restarts completed: {} of {}", done.len(), records.len()).ok();
    writeln!(
        summary,
        "{:<16} {:>4}  {:>17}  {:>17}  {:>13}",
        "method", "n", "downstream (test)", "concept (test)", "accepted"
    )
    .ok();
    for method in &methods {
        let runs = runs_of(method);
        let down = mean_stderr(&runs.iter().map(|m| m.downstream_acc_test).collect::<Vec<_>>());
        let concept = mean_stderr(&runs.iter().filter_map(|m| m.concept_acc_test).collect::<Vec<_>>());
        let accepted = mean_stderr(&runs.iter().filter_map(|m| m.n_accepted.map(|v| v as f64)).collect::<Vec<_>>());
        let violations: usize = runs.iter().map(|m| m.invariant_violations).sum();
        let mut row = vec![method.to_string(), runs.len().to_string()];
        row.extend(fmt_opt(down));
        row.extend(fmt_opt(concept));
        row.extend(fmt_opt(accepted));
        row.push(violations.to_string());
        table.push(row);
        let pm = |(m, s): (f64, f64)| if m.is_nan() { "-".to_string() } else { format!("{m:.3} ± {s:.3}") };
        writeln!(
            summary,
            "{:<16} {:>4}  {:>17}  {:>17}  {:>13}",
            method,
            runs.len(),
            pm(down),
            pm(concept),
            if accepted.0.is_nan() { "-".to_string() } else { format!("{:.1} ± {:.1}", accepted.0, accepted.1) }
        )
        .ok();

        if let Ok(v) = method.parse::<VariantSpec>() {
            if let Some(k) = v.k_pct() {
                let mut row = vec![v.mode().to_string(), k.to_string(), runs.len().to_string()];
                row.extend(fmt_opt(down));
                row.extend(fmt_opt(concept));
                ablation.push(row);
            }
        }

        let max_step = runs.iter().flat_map(|m| m.metrics.iter().map(|r| r.step)).max();
        for step in 0..=max_step.unwrap_or(0) {
            let rows: Vec<&MetricsRow> = runs
                .iter()
                .filter_map(|m| m.metrics.iter().find(|r| r.step == step))
                .collect();
            let Some(first) = rows.first() else { continue };
            for j in 0..first.coverage.len() {
                let vals: Vec<f64> = rows.iter().filter_map(|r| r.coverage.get(j).map(|&c| c as f64)).collect();
                let mut row = vec![method.to_string(), step.to_string(), j.to_string(), vals.len().to_string()];
                row.extend(fmt_opt(mean_stderr(&vals)));
                coverage.push(row);
            }
        }
    }
    let failed = records.len() - done.len();
    if failed > 0 {
        writeln!(summary, "warning: {failed} restart(s) failed and are excluded").ok();
    }

    let mut files = BTreeMap::new();
    files.insert(
        "table1.csv",
        csv_string(
            &[
                "method",
                "n",
                "downstream_acc_test",
                "downstream_acc_test_se",
                "concept_acc_test",
                "concept_acc_test_se",
                "n_accepted",
                "n_accepted_se",
                "invariant_violations",
            ],
            &table,
        )?,
    );
    files.insert(
        "ablation.csv",
        csv_string(
            &[
                "mode",
                "k_pct",
                "n",
                "downstream_acc_test",
                "downstream_acc_test_se",
                "concept_acc_test",
                "concept_acc_test_se",
            ],
            &ablation,
        )?,
    );
    files.insert(
        "coverage.csv",
        csv_string(&["method", "step", "concept", "n", "coverage_test", "coverage_test_se"], &coverage)?,
    );
    if let Some(curve) = manual {
        let full = mean_stderr(&curve.full_truth);
        files.insert("manual_curve.csv", manual_curve_csv(curve)?);
        if let Some(last) = curve.points.last() {
            writeln!(
                summary,
                "manual baseline: n=1 {:.3}, n={} {:.3}, full truth {:.3}",
                mean_stderr(&curve.points[0].downstream_acc_test).0,
                last.n,
                mean_stderr(&last.downstream_acc_test).0,
                full.0
            )
            .ok();
        }
    }
    files.insert("summary.txt", summary);
    Ok(Report {
        files,
        failed_restarts: failed,
    })
}

pub fn manual_curve_csv(curve: &ManualCurve) -> Result<String> {
    let full = fmt_opt(mean_stderr(&curve.full_truth));
    let rows: Vec<Vec<String>> = curve
        .points
        .iter()
        .map(|p| {
            let mut row = vec![p.n.to_string(), p.downstream_acc_test.len().to_string()];
            row.extend(fmt_opt(mean_stderr(&p.downstream_acc_test)));
            row.extend(full.clone());
            row
        })
        .collect();
    csv_string(
        &[
            "n",
            "restarts",
            "downstream_acc_test",
            "downstream_acc_test_se",
            "full_truth_acc_test",
            "full_truth_acc_test_se",
        ],
        &rows,
    )
}

/// Reads the records (and the manual curve, if present) under `runs_dir`
/// and writes the report files into `out_dir`.
pub fn emit_report(runs_dir: &Path, out_dir: &Path) -> Result<Report> {
    let records = load_records(runs_dir)?;
    let manual_path = runs_dir.join(MANUAL_FILE);
    let manual = if manual_path.is_file() {
        let text = fs::read_to_string(&manual_path).map_err(|e| Error::io(manual_path.display().to_string(), e))?;
        Some(serde_json::from_str::<ManualCurve>(&text)?)
    } else {
        None
    };
    let report = build_report(&records, manual.as_ref())?;
    create_dir(out_dir)?;
    for (name, body) in &report.files {
        write_file(&out_dir.join(name), body.as_bytes())?;
    }
    Ok(report)
}

/// Writes a generated toy dataset and its truth file into `out`.
pub fn write_toy(spec: &ToySpec, out: &Path) -> Result<()> {
    let (d, truth) = generate_toy(spec)?;
    crate::data::write_dataset(&d, out)?;
    let path = out.join("truth.json");
    let mut w = BufWriter::new(fs::File::create(&path).map_err(|e| Error::io(path.display().to_string(), e))?);
    std::io::Write::write_all(&mut w, truth.to_json(&d.feature_names)?.as_bytes())
        .map_err(|e| Error::io(path.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(method: &str, down: f64, concept: Option<f64>, accepted: Option<usize>) -> MethodRun {
        MethodRun {
            method: method.into(),
            downstream_acc_test: down,
            concept_acc_test: concept,
            n_accepted: accepted,
            n_queries: None,
            n_dummy: None,
            invariant_violations: 0,
            metrics: Vec::new(),
        }
    }

    fn record(restart: usize, runs: Vec<MethodRun>) -> RestartRecord {
        RestartRecord {
            restart,
            seed: 0,
            seeds: vec![],
            seed_names: vec![],
            runs,
            error: None,
        }
    }

    #[test]
    fn stderr_reference() {
        assert_eq!(mean_stderr(&[0.7]), (0.7, 0.0));
        let (m, s) = mean_stderr(&[0.8, 0.9, 1.0]);
        assert!((m - 0.9).abs() < 1e-12);
        // sample sd 0.1, over sqrt(3)
        assert!((s - 0.1 / 3f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn table_aggregates_hand_rows() {
        let records: Vec<RestartRecord> = [(0.8, 0.5, 2), (0.9, 0.6, 4), (1.0, 0.7, 6)]
            .iter()
            .enumerate()
            .map(|(r, &(d, c, a))| record(r, vec![run("pred-intuit-5", d, Some(c), Some(a)), run("lr", d - 0.1, None, None)]))
            .collect();
        let rep = build_report(&records, None).unwrap();
        let table = &rep.files["table1.csv"];
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines[1], "pred-intuit-5,3,0.900000,0.057735,0.600000,0.057735,4.000000,1.154701,0");
        assert_eq!(lines[2], "lr,3,0.800000,0.057735,,,,,0");
        assert!(rep.files["ablation.csv"].lines().nth(1).unwrap().starts_with("pred-intuit,5,3,"));
    }

    #[test]
    fn single_run_reports_its_metrics() {
        let rep = build_report(&[record(0, vec![run("pred", 0.93, Some(0.91), Some(3))])], None).unwrap();
        assert_eq!(
            rep.files["table1.csv"].lines().nth(1).unwrap(),
            "pred,1,0.930000,0.000000,0.910000,0.000000,3.000000,0.000000,0"
        );
    }

    #[test]
    fn failed_restarts_are_excluded_and_counted() {
        let mut bad = record(1, vec![]);
        bad.error = Some("boom".into());
        let rep = build_report(&[record(0, vec![run("pred", 0.9, None, None)]), bad.clone()], None).unwrap();
        assert_eq!(rep.failed_restarts, 1);
        assert!(rep.files["summary.txt"].contains("1 restart(s) failed"));
        assert!(build_report(&[bad], None).is_err());
        assert!(build_report(&[], None).is_err());
    }

    #[test]
    fn config_defaults_and_rejections() {
        let cfg: ExperimentConfig =
            serde_json::from_str(r#"{"dataset": {"kind": "toy"}, "output_dir": "out"}"#).unwrap();
        assert_eq!(cfg.restarts, 25);
        assert_eq!(cfg.proposals_per_concept, 10);
        assert_eq!(cfg.variants.len(), 3);
        cfg.validate().unwrap();
        let zero = ExperimentConfig { restarts: 0, ..cfg.clone() };
        assert!(zero.validate().is_err());
        let missing = ExperimentConfig {
            dataset: DatasetSource::Files {
                counts: "/nonexistent/counts.csv".into(),
                labels: "/nonexistent/labels.csv".into(),
                features: "/nonexistent/features.txt".into(),
                truth: "/nonexistent/truth.json".into(),
                split: SplitSpec::default(),
                balance: false,
                min_doc_frac: None,
                max_doc_frac: None,
            },
            ..cfg
        };
        assert!(missing.validate().is_err());
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"dataset": {"kind": "toy"}, "output_dir": "o", "bogus": 1}"#).is_err());
    }
}
