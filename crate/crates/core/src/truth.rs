//! Ground-truth concept definitions used by the simulated user and by the
//! concept-accuracy metric.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use rand::seq::IndexedRandom;
use serde::{Deserialize, Serialize};

use crate::concept::ConceptMatrix;
use crate::{Dataset, Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TruthConcept {
    pub name: String,
    /// Every feature associated with the concept, increasing.
    pub features: Vec<usize>,
    /// Features a restart may pick as the concept's seed.
    pub seeds: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruthConcepts {
    pub concepts: Vec<TruthConcept>,
}

/// On-disk form: concept name -> feature names plus permissible seeds.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct TruthEntry {
    features: Vec<String>,
    #[serde(default)]
    seeds: Vec<String>,
}

impl GroundTruthConcepts {
    pub fn new(concepts: Vec<TruthConcept>, n_features: usize) -> Result<Self> {
        let mut out = GroundTruthConcepts { concepts };
        for c in &mut out.concepts {
            c.features.sort_unstable();
            c.features.dedup();
            c.seeds.sort_unstable();
            c.seeds.dedup();
        }
        out.validate(n_features)?;
        Ok(out)
    }

    pub fn validate(&self, n_features: usize) -> Result<()> {
        for c in &self.concepts {
            if let Some(&i) = c.features.iter().chain(&c.seeds).find(|&&i| i >= n_features) {
                return Err(Error::Bounds {
                    what: "truth feature",
                    index: i,
                    bound: n_features,
                });
            }
            if let Some(s) = c.seeds.iter().find(|s| c.features.binary_search(s).is_err()) {
                return Err(Error::Spec(format!(
                    "seed {s} of concept {:?} is not in its feature list",
                    c.name
                )));
            }
        }
        Ok(())
    }

    pub fn n_concepts(&self) -> usize {
        self.concepts.len()
    }

    pub fn names(&self) -> Vec<String> {
        self.concepts.iter().map(|c| c.name.clone()).collect()
    }

    pub fn contains(&self, concept: usize, feature: usize) -> bool {
        self.concepts[concept].features.binary_search(&feature).is_ok()
    }

    /// The concept matrix that associates every truth feature.
    pub fn concept_matrix(&self, n_features: usize) -> Result<ConceptMatrix> {
        let sets = self
            .concepts
            .iter()
            .map(|c| c.features.iter().copied().collect::<BTreeSet<_>>())
            .collect();
        ConceptMatrix::from_sets(n_features, self.names(), sets)
    }

    /// Draws one seed-eligible feature per concept, uniformly.
    pub fn sample_seeds<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<usize>> {
        self.concepts
            .iter()
            .map(|c| {
                c.seeds.choose(rng).copied().ok_or_else(|| {
                    Error::Spec(format!("concept {:?} has no seed-eligible feature", c.name))
                })
            })
            .collect()
    }

    pub fn to_json(&self, feature_names: &[String]) -> Result<String> {
        let map: IndexMap<&str, TruthEntry> = self
            .concepts
            .iter()
            .map(|c| {
                let names = |ix: &[usize]| ix.iter().map(|&i| feature_names[i].clone()).collect();
                (
                    c.name.as_str(),
                    TruthEntry {
                        features: names(&c.features),
                        seeds: names(&c.seeds),
                    },
                )
            })
            .collect();
        Ok(serde_json::to_string_pretty(&map)?)
    }

    /// Parses the JSON form, resolving names against the dataset. An empty
    /// or missing `seeds` list makes every feature seed-eligible.
    pub fn from_json(text: &str, dataset: &Dataset) -> Result<Self> {
        let map: IndexMap<String, TruthEntry> = serde_json::from_str(text)?;
        let resolve = |concept: &str, names: &[String]| -> Result<Vec<usize>> {
            names
                .iter()
                .map(|n| {
                    dataset.feature_index(n).ok_or_else(|| {
                        Error::Spec(format!("concept {concept:?} names unknown feature {n:?}"))
                    })
                })
                .collect()
        };
        let mut concepts = Vec::with_capacity(map.len());
        for (name, entry) in &map {
            let features = resolve(name, &entry.features)?;
            let seeds = if entry.seeds.is_empty() {
                features.clone()
            } else {
                resolve(name, &entry.seeds)?
            };
            concepts.push(TruthConcept {
                name: name.clone(),
                features,
                seeds,
            });
        }
        GroundTruthConcepts::new(concepts, dataset.n_features())
    }

    pub fn load(path: &Path, dataset: &Dataset) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_json(&text, dataset)
    }
}
