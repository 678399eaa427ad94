use std::collections::HashMap;
use std::fs::File;
use std::path::Path;
use std::sync::{Arc, OnceLock, RwLock};
use std::time::Instant;

use conceptlearn::data::{generate_toy, ToySpec};
use conceptlearn::session::Query;
use conceptlearn::{Dataset, GroundTruthConcepts, Session, SessionConfig, SimilarityGraph, SplitSpec};
use serde::{Deserialize, Serialize};
use tokio::sync::Mutex;

use crate::error::ApiError;
use crate::store::{append_decision, DecisionRecord, SessionManifest, Store};

/// A registered dataset with its similarity graphs, built on first use.
pub struct DatasetEntry {
    pub data: Arc<Dataset>,
    pub truth: Option<GroundTruthConcepts>,
    /// Count-weighted and set Jaccard.
    graphs: [OnceLock<Arc<SimilarityGraph>>; 2],
}

impl DatasetEntry {
    fn new(data: Dataset, truth: Option<GroundTruthConcepts>) -> Self {
        DatasetEntry {
            data: Arc::new(data),
            truth,
            graphs: [OnceLock::new(), OnceLock::new()],
        }
    }

    pub fn graph(&self, binarize: bool) -> Arc<SimilarityGraph> {
        Arc::clone(self.graphs[usize::from(binarize)].get_or_init(|| Arc::new(SimilarityGraph::build(&self.data.x, binarize))))
    }
}

/// One live session. The surrounding mutex serializes every operation on it.
pub struct Live {
    pub id: String,
    pub dataset_id: String,
    pub session: Session,
    log: File,
    /// Idempotency key -> journal step it was applied at.
    keys: HashMap<String, usize>,
    /// Time spent computing the pending proposal.
    pub pending_ms: Option<f64>,
    /// Set when computing the next proposal failed.
    pub failure: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetRequest {
    Toy {
        #[serde(default)]
        spec: ToySpec,
    },
    Inline {
        counts_csv: String,
        labels_csv: String,
        features: Vec<String>,
        #[serde(default)]
        split: SplitSpec,
        /// Truth concepts in the `{name: {features, seeds}}` form.
        #[serde(default)]
        truth: Option<serde_json::Value>,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub dataset_id: String,
    /// Seed feature names, one per concept.
    pub seeds: Vec<String>,
    /// Concept names; defaults to the dataset's truth names when they have
    /// the same count, else `concept_0`, `concept_1`, ...
    #[serde(default)]
    pub concepts: Option<Vec<String>>,
    #[serde(default)]
    pub config: SessionConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Computing,
    AwaitingFeedback,
    /// A proposal is pending and it opens a new concept after the previous
    /// one used up its proposals.
    ConceptDone,
    Finished,
    Failed,
}

#[derive(Debug, Clone, Serialize)]
pub struct FeatureCount {
    pub name: String,
    pub count: u32,
}

#[derive(Debug, Clone, Serialize)]
pub struct Example {
    pub row: usize,
    pub label: u8,
    /// Highest-count features of the row.
    pub features: Vec<FeatureCount>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Pending {
    pub step: usize,
    pub feature: usize,
    pub feature_name: String,
    pub concept: usize,
    pub concept_name: String,
    pub score_pred: f64,
    pub score_intuit: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub elapsed_ms: Option<f64>,
    pub examples: Vec<Example>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Handle {
    pub id: String,
    pub dataset_id: String,
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub current_concept: Option<String>,
    /// Journal steps so far, DUMMY steps included.
    pub steps: usize,
    pub n_decisions: usize,
    pub n_accepted: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pending: Option<Pending>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// True when the request repeated an idempotency key already applied.
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub replayed: bool,
}

const EXAMPLES: usize = 5;
const EXAMPLE_FEATURES: usize = 8;

fn examples(d: &Dataset, feature: usize) -> Vec<Example> {
    d.x.col(feature)
        .0
        .iter()
        .take(EXAMPLES)
        .map(|&r| {
            let r = r as usize;
            let (cols, vals) = d.x.row(r);
            let mut top: Vec<(u32, u32)> = cols.iter().copied().zip(vals.iter().copied()).collect();
            top.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
            Example {
                row: r,
                label: d.y[r],
                features: top
                    .into_iter()
                    .take(EXAMPLE_FEATURES)
                    .map(|(c, count)| FeatureCount {
                        name: d.feature_names[c as usize].clone(),
                        count,
                    })
                    .collect(),
            }
        })
        .collect()
}

impl Live {
    pub fn computing_handle(id: &str, dataset_id: &str) -> Handle {
        Handle {
            id: id.to_string(),
            dataset_id: dataset_id.to_string(),
            status: Status::Computing,
            current_concept: None,
            steps: 0,
            n_decisions: 0,
            n_accepted: 0,
            pending: None,
            error: None,
            replayed: false,
        }
    }

    fn pending_query(&mut self) -> Option<Query> {
        // with a proposal pending this returns it without recomputing
        self.session.pending()?;
        self.session.next_query().ok().flatten()
    }

    pub fn handle(&mut self) -> Handle {
        let q = self.pending_query();
        let s = &self.session;
        let names = s.concepts().names();
        let status = match (&q, &self.failure) {
            (_, Some(_)) => Status::Failed,
            (Some(q), None) => match s.journal().last() {
                Some(e) if e.concept != q.concept => Status::ConceptDone,
                _ => Status::AwaitingFeedback,
            },
            (None, None) if s.is_finished() => Status::Finished,
            (None, None) => Status::Computing,
        };
        Handle {
            id: self.id.clone(),
            dataset_id: self.dataset_id.clone(),
            status,
            current_concept: s.current_concept().map(|j| names[j].clone()),
            steps: s.journal().len(),
            n_decisions: s.n_queries(),
            n_accepted: s.n_accepted(),
            pending: q.map(|q| Pending {
                step: q.step,
                feature: q.feature,
                feature_name: s.data().feature_names[q.feature].clone(),
                concept: q.concept,
                concept_name: names[q.concept].clone(),
                score_pred: q.score_pred,
                score_intuit: q.score_intuit,
                elapsed_ms: self.pending_ms,
                examples: examples(s.data(), q.feature),
            }),
            error: self.failure.clone(),
            replayed: false,
        }
    }

    /// Computes the next proposal if none is pending.
    pub fn advance(&mut self) {
        if self.session.pending().is_some() || self.session.is_finished() || self.failure.is_some() {
            return;
        }
        let start = Instant::now();
        match self.session.next_query() {
            Ok(_) => self.pending_ms = Some(start.elapsed().as_secs_f64() * 1e3),
            Err(e) => {
                log::error!("session {}: computing a proposal failed: {e}", self.id);
                self.failure = Some(e.to_string());
            }
        }
    }

    /// Applies a decision. It is on disk before this returns, and a repeated
    /// idempotency key is answered without applying anything.
    pub fn decide(&mut self, accept: bool, key: Option<String>, step: Option<usize>) -> Result<Handle, ApiError> {
        if let Some(k) = &key {
            if self.keys.contains_key(k) {
                let mut h = self.handle();
                h.replayed = true;
                return Ok(h);
            }
        }
        let Some(q) = self.pending_query() else {
            return Err(ApiError::conflict(
                "not_awaiting",
                "the session has no proposal awaiting a decision",
            ));
        };
        if let Some(step) = step {
            if step != q.step {
                return Err(ApiError::conflict(
                    "stale_step",
                    format!("decision is for step {step}, the pending proposal is step {}", q.step),
                ));
            }
        }
        self.session.decide(accept)?;
        let record = DecisionRecord {
            step: q.step,
            concept: q.concept,
            feature: q.feature,
            accept,
            key: key.clone(),
        };
        append_decision(&mut self.log, &record).map_err(|e| {
            // the decision is applied in memory but not durable
            self.failure = Some(format!("decision log write failed: {e}"));
            ApiError::internal(format!("could not persist the decision: {e}"))
        })?;
        if let Some(k) = key {
            self.keys.insert(k, q.step);
        }
        self.pending_ms = None;
        self.advance();
        Ok(self.handle())
    }
}

#[derive(Default)]
struct Registry {
    datasets: HashMap<String, Arc<DatasetEntry>>,
    sessions: HashMap<String, (String, Arc<Mutex<Live>>)>,
    next_dataset: u64,
    next_session: u64,
}

/// Shared service state. Cheap to clone.
#[derive(Clone)]
pub struct AppState {
    store: Store,
    registry: Arc<RwLock<Registry>>,
}

fn id_number(id: &str) -> u64 {
    id.rsplit('-').next().and_then(|n| n.parse().ok()).unwrap_or(0)
}

fn resolve_seeds(d: &Dataset, names: &[String]) -> Result<Vec<usize>, ApiError> {
    let mut out = Vec::with_capacity(names.len());
    for (k, name) in names.iter().enumerate() {
        let i = d.feature_index(name).ok_or_else(|| {
            ApiError::bad_request("unknown_feature", format!("no feature named {name:?}")).with_field(format!("seeds[{k}]"))
        })?;
        if out.contains(&i) {
            return Err(ApiError::bad_request("duplicate_seed", format!("seed {name:?} is used twice"))
                .with_field(format!("seeds[{k}]")));
        }
        if d.x.doc_count(i) == 0 {
            return Err(ApiError::bad_request("empty_seed", format!("seed {name:?} never occurs in the data"))
                .with_field(format!("seeds[{k}]")));
        }
        out.push(i);
    }
    Ok(out)
}

/// Replays persisted decisions onto a fresh session, checking that each one
/// matches the proposal the engine makes at that step.
fn rebuild(
    id: &str,
    entry: &DatasetEntry,
    m: &SessionManifest,
    records: &[DecisionRecord],
    store: &Store,
) -> anyhow::Result<Live> {
    let seeds = resolve_seeds(&entry.data, &m.seeds).map_err(|e| anyhow::anyhow!(e.message))?;
    let mut session = Session::new(
        Arc::clone(&entry.data),
        entry.graph(m.config.binarize_similarity),
        m.concepts.clone(),
        seeds,
        m.config,
    )?;
    if let Some(t) = &entry.truth {
        if t.names() == m.concepts {
            session.attach_truth(t)?;
        }
    }
    let mut keys = HashMap::new();
    for r in records {
        let q = session
            .next_query()?
            .ok_or_else(|| anyhow::anyhow!("session {id}: decision at step {} is past the end", r.step))?;
        anyhow::ensure!(
            (q.step, q.concept, q.feature) == (r.step, r.concept, r.feature),
            "session {id}: logged decision at step {} does not match the replayed proposal",
            r.step
        );
        session.decide(r.accept)?;
        if let Some(k) = &r.key {
            keys.insert(k.clone(), r.step);
        }
    }
    Ok(Live {
        id: id.to_string(),
        dataset_id: m.dataset_id.clone(),
        session,
        log: store.decision_log(id)?,
        keys,
        pending_ms: None,
        failure: None,
    })
}

impl AppState {
    /// Opens the state directory and restores every dataset and session in
    /// it. Sessions come back with their next proposal computed.
    pub fn open(dir: &Path) -> anyhow::Result<Self> {
        let store = Store::open(dir)?;
        let mut reg = Registry::default();
        for id in store.dataset_ids()? {
            match store.load_dataset(&id) {
                Ok((d, t)) => {
                    reg.next_dataset = reg.next_dataset.max(id_number(&id));
                    reg.datasets.insert(id, Arc::new(DatasetEntry::new(d, t)));
                }
                Err(e) => log::warn!("skipping dataset {id}: {e:#}"),
            }
        }
        for id in store.session_ids()? {
            reg.next_session = reg.next_session.max(id_number(&id));
            let (m, records) = store.load_session(&id)?;
            let entry = reg
                .datasets
                .get(&m.dataset_id)
                .ok_or_else(|| anyhow::anyhow!("session {id} references missing dataset {}", m.dataset_id))?;
            let mut live = rebuild(&id, entry, &m, &records, &store)?;
            live.advance();
            reg.sessions.insert(id, (m.dataset_id.clone(), Arc::new(Mutex::new(live))));
        }
        Ok(AppState {
            store,
            registry: Arc::new(RwLock::new(reg)),
        })
    }

    pub fn dataset(&self, id: &str) -> Result<Arc<DatasetEntry>, ApiError> {
        let reg = self.registry.read().expect("registry lock");
        reg.datasets.get(id).cloned().ok_or_else(|| ApiError::not_found("dataset", id))
    }

    pub fn session(&self, id: &str) -> Result<(String, Arc<Mutex<Live>>), ApiError> {
        let reg = self.registry.read().expect("registry lock");
        reg.sessions.get(id).cloned().ok_or_else(|| ApiError::not_found("session", id))
    }

    /// Blocking: parses, validates and persists a dataset.
    pub fn register_dataset(&self, req: DatasetRequest) -> Result<(String, Arc<DatasetEntry>), ApiError> {
        let id = {
            let mut reg = self.registry.write().expect("registry lock");
            reg.next_dataset += 1;
            format!("ds-{}", reg.next_dataset)
        };
        let result = self.build_dataset(&id, req);
        let entry = match result {
            Ok(entry) => Arc::new(entry),
            Err(e) => {
                self.store.remove_dataset(&id);
                return Err(e);
            }
        };
        let mut reg = self.registry.write().expect("registry lock");
        reg.datasets.insert(id.clone(), Arc::clone(&entry));
        Ok((id, entry))
    }

    fn build_dataset(&self, id: &str, req: DatasetRequest) -> Result<DatasetEntry, ApiError> {
        let internal = |e: anyhow::Error| ApiError::internal(format!("{e:#}"));
        match req {
            DatasetRequest::Toy { spec } => {
                let (d, truth) = generate_toy(&spec)?;
                self.store.save_dataset(id, &d, Some(&truth)).map_err(internal)?;
                Ok(DatasetEntry::new(d, Some(truth)))
            }
            DatasetRequest::Inline {
                counts_csv,
                labels_csv,
                features,
                split,
                truth,
            } => {
                split.ratios.validate().map_err(|e| ApiError::from(e).with_field("split"))?;
                self.store
                    .stage_inline(id, &counts_csv, &labels_csv, &features)
                    .map_err(internal)?;
                let dir = self.store.dataset_dir(id);
                let d = conceptlearn::data::load_dataset(
                    &dir.join(conceptlearn::data::COUNTS_FILE),
                    &dir.join(conceptlearn::data::LABELS_FILE),
                    &dir.join(conceptlearn::data::FEATURES_FILE),
                    split,
                )
                .map_err(|e| ApiError::bad_request("invalid_dataset", e.to_string()))?;
                let truth = match truth {
                    Some(v) => Some(
                        GroundTruthConcepts::from_json(&v.to_string(), &d)
                            .map_err(|e| ApiError::bad_request("invalid_truth", e.to_string()).with_field("truth"))?,
                    ),
                    None => None,
                };
                self.store.save_dataset(id, &d, truth.as_ref()).map_err(internal)?;
                Ok(DatasetEntry::new(d, truth))
            }
        }
    }

    /// Blocking: validates the request, seeds and fits the session, and
    /// persists its manifest. The first proposal is not computed here.
    pub fn create_session(&self, req: CreateSession) -> Result<(String, Arc<Mutex<Live>>), ApiError> {
        let entry = self.dataset(&req.dataset_id)?;
        req.config.validate().map_err(|e| ApiError::from(e).with_field("config"))?;
        if req.seeds.is_empty() {
            return Err(ApiError::bad_request("no_seeds", "at least one seed is required").with_field("seeds"));
        }
        let seeds = resolve_seeds(&entry.data, &req.seeds)?;
        let concepts = match req.concepts {
            Some(c) if c.len() != seeds.len() => {
                return Err(ApiError::bad_request(
                    "concept_count",
                    format!("{} concept names for {} seeds", c.len(), seeds.len()),
                )
                .with_field("concepts"))
            }
            Some(c) => c,
            None => match &entry.truth {
                Some(t) if t.n_concepts() == seeds.len() => t.names(),
                _ => (0..seeds.len()).map(|j| format!("concept_{j}")).collect(),
            },
        };
        let manifest = SessionManifest {
            dataset_id: req.dataset_id.clone(),
            concepts,
            seeds: req.seeds,
            config: req.config,
        };
        let id = {
            let mut reg = self.registry.write().expect("registry lock");
            reg.next_session += 1;
            format!("s-{}", reg.next_session)
        };
        let live = rebuild(&id, &entry, &manifest, &[], &self.store);
        let live = match live {
            Ok(l) => l,
            Err(e) => {
                self.store.remove_session(&id);
                return Err(match e.downcast::<conceptlearn::Error>() {
                    Ok(e) => ApiError::from(e).with_field("seeds"),
                    Err(e) => ApiError::internal(format!("{e:#}")),
                })
            }
        };
        if let Err(e) = self.store.save_session(&id, &manifest) {
            self.store.remove_session(&id);
            return Err(ApiError::internal(format!("{e:#}")));
        }
        let slot = Arc::new(Mutex::new(live));
        let mut reg = self.registry.write().expect("registry lock");
        reg.sessions.insert(id.clone(), (req.dataset_id, Arc::clone(&slot)));
        Ok((id, slot))
    }
}
