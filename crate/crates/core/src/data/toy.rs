//! Synthetic toy data: concepts made of disjoint groups of correlated binary
//! features, plus independent noise features, with labels drawn from a
//! logistic model over the concepts.
//!
//! Each group draws one Bernoulli(`p_on`) base variable per instance; every
//! feature of the group copies the base and is flipped independently with
//! probability `p_flip`.

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{CountMatrix, Dataset, SplitSpec};
use crate::predictor::sigmoid;
use crate::rng;
use crate::truth::{GroundTruthConcepts, TruthConcept};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyConcept {
    pub name: String,
    /// Correlated feature groups; each inner list holds feature indices.
    pub groups: Vec<Vec<usize>>,
    /// Weight of the concept in the label model.
    pub weight: f64,
    /// Seed-eligible features; every concept feature when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<usize>>,
}

/// What the label model reads concept values from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelSource {
    /// OR over the concept's generated (noisy) features.
    #[default]
    Features,
    /// OR over the concept's group base variables, before flips.
    Base,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToySpec {
    pub n_instances: usize,
    pub p_on: f64,
    pub p_flip: f64,
    /// Total feature count; indices not used by any group are noise features.
    pub n_features: usize,
    /// Activation probability of each noise feature.
    pub p_noise: f64,
    pub concepts: Vec<ToyConcept>,
    pub bias: f64,
    pub label_source: LabelSource,
    pub split: SplitSpec,
    pub seed: u64,
}

/// The default layout has three concepts of two groups of two features each,
/// followed by 48 noise features. Labels follow `b OR (a AND c)` with large
/// weights, so `a` and `c` play interchangeable roles in the prediction.
impl Default for ToySpec {
    fn default() -> Self {
        let concept = |name: &str, first: usize, weight: f64| ToyConcept {
            name: name.into(),
            groups: vec![vec![first, first + 1], vec![first + 2, first + 3]],
            weight,
            seeds: None,
        };
        ToySpec {
            n_instances: 10_000,
            p_on: 0.25,
            p_flip: 0.05,
            n_features: 60,
            p_noise: 0.25,
            concepts: vec![
                concept("concept_a", 0, 10.0),
                concept("concept_b", 4, 20.0),
                concept("concept_c", 8, 10.0),
            ],
            bias: -15.0,
            label_source: LabelSource::Features,
            split: SplitSpec::default(),
            seed: 0,
        }
    }
}

impl ToySpec {
    pub fn validate(&self) -> Result<()> {
        for (what, p) in [("p_on", self.p_on), ("p_flip", self.p_flip), ("p_noise", self.p_noise)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Spec(format!("{what} = {p} is not a probability")));
            }
        }
        if self.concepts.is_empty() {
            return Err(Error::Spec("toy layout has no concepts".into()));
        }
        let mut seen = BTreeSet::new();
        for c in &self.concepts {
            if c.groups.is_empty() || c.groups.iter().any(Vec::is_empty) {
                return Err(Error::Spec(format!("concept {:?} has an empty group", c.name)));
            }
            for &i in c.groups.iter().flatten() {
                if i >= self.n_features {
                    return Err(Error::Spec(format!(
                        "feature {i} of concept {:?} exceeds n_features = {}",
                        c.name, self.n_features
                    )));
                }
                if !seen.insert(i) {
                    return Err(Error::Spec(format!("feature {i} appears in more than one group")));
                }
            }
            if let Some(seeds) = &c.seeds {
                if seeds.is_empty() || seeds.iter().any(|s| !c.groups.iter().flatten().any(|f| f == s)) {
                    return Err(Error::Spec(format!(
                        "seeds of concept {:?} must be a nonempty subset of its features",
                        c.name
                    )));
                }
            }
        }
        self.split.ratios.validate()
    }

    fn feature_names(&self) -> Vec<String> {
        let mut names: Vec<String> = (0..self.n_features).map(|i| format!("noise_{i}")).collect();
        for c in &self.concepts {
            for (g, group) in c.groups.iter().enumerate() {
                for (k, &i) in group.iter().enumerate() {
                    names[i] = format!("{}_g{g}_{k}", c.name);
                }
            }
        }
        names
    }
}

/// Generates the toy dataset and the ground-truth feature lists per concept.
pub fn generate_toy(spec: &ToySpec) -> Result<(Dataset, GroundTruthConcepts)> {
    spec.validate()?;
    let mut rng = rng::seeded(spec.seed);
    let mut in_group = vec![false; spec.n_features];
    for &i in spec.concepts.iter().flat_map(|c| c.groups.iter().flatten()) {
        in_group[i] = true;
    }
    let noise: Vec<usize> = (0..spec.n_features).filter(|&i| !in_group[i]).collect();

    let mut triplets = Vec::new();
    let mut y = Vec::with_capacity(spec.n_instances);
    for n in 0..spec.n_instances {
        let mut logit = spec.bias;
        for c in &spec.concepts {
            let mut base_on = false;
            let mut feature_on = false;
            for group in &c.groups {
                let base = rng.random_bool(spec.p_on);
                base_on |= base;
                for &i in group {
                    let on = base ^ rng.random_bool(spec.p_flip);
                    if on {
                        feature_on = true;
                        triplets.push((n, i, 1));
                    }
                }
            }
            let active = match spec.label_source {
                LabelSource::Features => feature_on,
                LabelSource::Base => base_on,
            };
            if active {
                logit += c.weight;
            }
        }
        for &i in &noise {
            if rng.random_bool(spec.p_noise) {
                triplets.push((n, i, 1));
            }
        }
        y.push(u8::from(rng.random_bool(sigmoid(logit))));
    }

    let x = CountMatrix::from_triplets(spec.n_instances, spec.n_features, triplets)?;
    let dataset = Dataset::new(x, y, spec.feature_names(), spec.split)?;
    let truth = spec
        .concepts
        .iter()
        .map(|c| {
            let features: Vec<usize> = c.groups.iter().flatten().copied().collect();
            TruthConcept {
                name: c.name.clone(),
                seeds: c.seeds.clone().unwrap_or_else(|| features.clone()),
                features,
            }
        })
        .collect();
    let truth = GroundTruthConcepts::new(truth, spec.n_features)?;
    Ok((dataset, truth))
}
