//! On-disk layout under the state directory:
//!
//! ```text
//! datasets/<id>/counts.csv, labels.csv, features.txt, manifest.json[, truth.json]
//! sessions/<id>/session.json, decisions.jsonl
//! ```
//!
//! `decisions.jsonl` holds one line per user decision, flushed to disk
//! before the decision is acknowledged. Sessions are rebuilt at startup by
//! replaying those lines.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use conceptlearn::data::{load_dataset, write_dataset, COUNTS_FILE, FEATURES_FILE, LABELS_FILE};
use conceptlearn::{Dataset, GroundTruthConcepts, SessionConfig, SplitSpec};
use serde::{Deserialize, Serialize};

pub const TRUTH_FILE: &str = "truth.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub split: SplitSpec,
    pub has_truth: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionManifest {
    pub dataset_id: String,
    pub concepts: Vec<String>,
    /// Seed feature names, one per concept.
    pub seeds: Vec<String>,
    pub config: SessionConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub step: usize,
    pub concept: usize,
    pub feature: usize,
    pub accept: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, text)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> anyhow::Result<T> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

/// Subdirectory names of `dir`, sorted.
fn children(dir: &Path) -> anyhow::Result<Vec<String>> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut ids = Vec::new();
    for e in fs::read_dir(dir)? {
        let e = e?;
        if e.file_type()?.is_dir() {
            ids.push(e.file_name().to_string_lossy().into_owned());
        }
    }
    ids.sort();
    Ok(ids)
}

impl Store {
    pub fn open(root: &Path) -> anyhow::Result<Self> {
        fs::create_dir_all(root.join("datasets"))?;
        fs::create_dir_all(root.join("sessions"))?;
        Ok(Store {
            root: root.to_path_buf(),
        })
    }

    pub fn dataset_dir(&self, id: &str) -> PathBuf {
        self.root.join("datasets").join(id)
    }

    pub fn session_dir(&self, id: &str) -> PathBuf {
        self.root.join("sessions").join(id)
    }

    pub fn dataset_ids(&self) -> anyhow::Result<Vec<String>> {
        children(&self.root.join("datasets"))
    }

    pub fn session_ids(&self) -> anyhow::Result<Vec<String>> {
        children(&self.root.join("sessions"))
    }

    /// Writes raw CSV inputs into the dataset directory so they can be
    /// parsed by the regular loader.
    pub fn stage_inline(&self, id: &str, counts: &str, labels: &str, features: &[String]) -> anyhow::Result<()> {
        let dir = self.dataset_dir(id);
        fs::create_dir_all(&dir)?;
        fs::write(dir.join(COUNTS_FILE), counts)?;
        fs::write(dir.join(LABELS_FILE), labels)?;
        let mut names = features.join("\n");
        names.push('\n');
        fs::write(dir.join(FEATURES_FILE), names)?;
        Ok(())
    }

    pub fn save_dataset(&self, id: &str, d: &Dataset, truth: Option<&GroundTruthConcepts>) -> anyhow::Result<()> {
        let dir = self.dataset_dir(id);
        write_dataset(d, &dir)?;
        if let Some(t) = truth {
            fs::write(dir.join(TRUTH_FILE), t.to_json(&d.feature_names)?)?;
        }
        self.save_manifest(id, d.split_spec, truth.is_some())
    }

    pub fn save_manifest(&self, id: &str, split: SplitSpec, has_truth: bool) -> anyhow::Result<()> {
        write_json(&self.dataset_dir(id).join("manifest.json"), &DatasetManifest { split, has_truth })
    }

    pub fn load_dataset(&self, id: &str) -> anyhow::Result<(Dataset, Option<GroundTruthConcepts>)> {
        let dir = self.dataset_dir(id);
        let m: DatasetManifest = read_json(&dir.join("manifest.json"))?;
        let d = load_dataset(&dir.join(COUNTS_FILE), &dir.join(LABELS_FILE), &dir.join(FEATURES_FILE), m.split)?;
        let truth = if m.has_truth {
            Some(GroundTruthConcepts::load(&dir.join(TRUTH_FILE), &d)?)
        } else {
            None
        };
        Ok((d, truth))
    }

    pub fn remove_dataset(&self, id: &str) {
        let _ = fs::remove_dir_all(self.dataset_dir(id));
    }

    pub fn remove_session(&self, id: &str) {
        let _ = fs::remove_dir_all(self.session_dir(id));
    }

    pub fn save_session(&self, id: &str, m: &SessionManifest) -> anyhow::Result<()> {
        let dir = self.session_dir(id);
        fs::create_dir_all(&dir)?;
        write_json(&dir.join("session.json"), m)
    }

    pub fn load_session(&self, id: &str) -> anyhow::Result<(SessionManifest, Vec<DecisionRecord>)> {
        let dir = self.session_dir(id);
        let m = read_json(&dir.join("session.json"))?;
        let path = dir.join("decisions.jsonl");
        let mut records = Vec::new();
        if path.is_file() {
            let text = fs::read_to_string(&path)?;
            let mut valid = 0;
            for line in text.split_inclusive('\n') {
                let parsed = line
                    .ends_with('\n')
                    .then(|| serde_json::from_str::<DecisionRecord>(line.trim_end()).ok())
                    .flatten();
                match parsed {
                    Some(r) => {
                        records.push(r);
                        valid += line.len();
                    }
                    None => {
                        // a torn final line from a crash mid-write was never acknowledged
                        log::warn!("session {id}: dropping unreadable decision log tail");
                        OpenOptions::new().write(true).open(&path)?.set_len(valid as u64)?;
                        break;
                    }
                }
            }
        }
        Ok((m, records))
    }

    pub fn decision_log(&self, id: &str) -> anyhow::Result<File> {
        let dir = self.session_dir(id);
        fs::create_dir_all(&dir)?;
        Ok(OpenOptions::new().create(true).append(true).open(dir.join("decisions.jsonl"))?)
    }
}

/// Appends one decision and waits for it to reach the disk.
pub fn append_decision(log: &mut File, record: &DecisionRecord) -> std::io::Result<()> {
    let mut line = serde_json::to_string(record).map_err(std::io::Error::other)?;
    line.push('\n');
    log.write_all(line.as_bytes())?;
    log.sync_data()
}
