use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::proposal::{Choice, VariantSpec};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Accept,
    Reject,
    /// No candidate improved accuracy; no query was made.
    Dummy,
}

/// One completed proposal step. Contains no timing data, so equal inputs
/// give byte-identical journals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JournalEntry {
    pub step: usize,
    pub concept: usize,
    pub concept_name: String,
    pub variant: VariantSpec,
    pub choice: Choice,
    pub feature_name: Option<String>,
    pub decision: Decision,
    pub score_pred: Option<f64>,
    pub score_intuit: Option<f64>,
    pub dummy_score: f64,
    pub shortlist: Vec<usize>,
    /// Predictor after the step (refit only on accept).
    pub weights: Vec<f64>,
    pub bias: f64,
    pub n_accepted: usize,
}

/// Per-proposal timing trace; kept apart from the journal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: usize,
    pub concept: usize,
    pub variant: VariantSpec,
    pub shortlist: Vec<usize>,
    pub chosen: Choice,
    pub score_pred: Option<f64>,
    pub score_intuit: Option<f64>,
    pub decision: Option<Decision>,
    pub elapsed_ms: f64,
}

/// Metrics snapshot taken after initialization (step 0) and after every step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: usize,
    pub concept: String,
    pub downstream_acc_train: f64,
    pub downstream_acc_valid: f64,
    pub downstream_acc_test: f64,
    /// Absent when no ground truth is attached.
    pub concept_acc_test: Option<f64>,
    /// Positive activations per concept on the test split.
    pub coverage: Vec<usize>,
    pub n_accepted: usize,
}

pub const METRICS_HEADER: [&str; 8] = [
    "step",
    "concept",
    "downstream_acc_train",
    "downstream_acc_valid",
    "downstream_acc_test",
    "concept_acc_test",
    "coverage_per_concept",
    "n_accepted",
];

impl MetricsRow {
    pub fn csv_record(&self) -> [String; 8] {
        [
            self.step.to_string(),
            self.concept.clone(),
            self.downstream_acc_train.to_string(),
            self.downstream_acc_valid.to_string(),
            self.downstream_acc_test.to_string(),
            self.concept_acc_test.map(|v| v.to_string()).unwrap_or_default(),
            self.coverage.iter().map(usize::to_string).collect::<Vec<_>>().join(";"),
            self.n_accepted.to_string(),
        ]
    }
}

pub fn write_metrics_csv<W: Write>(rows: &[MetricsRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Format(format!("writing metrics: {e}"));
    w.write_record(METRICS_HEADER).map_err(csv_err)?;
    for row in rows {
        w.write_record(row.csv_record()).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io("writing metrics", e))
}

/// Serializes items as JSON lines.
pub fn write_jsonl<T: Serialize, W: Write>(items: &[T], mut out: W) -> Result<()> {
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n").map_err(|e| Error::io("writing json lines", e))?;
    }
    Ok(())
}
