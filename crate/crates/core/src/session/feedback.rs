use rand::Rng as _;

use crate::rng::{seeded, Rng};
use crate::truth::GroundTruthConcepts;
use crate::Result;

/// Answers accept/reject for a proposed (feature, concept) pair.
pub trait FeedbackSource {
    fn answer(&mut self, feature: usize, concept: usize) -> Result<bool>;
}

/// Simulated user: accepts exactly the features on the concept's truth list.
/// With `flip_prob > 0` each answer is inverted independently.
pub struct Oracle<'a> {
    truth: &'a GroundTruthConcepts,
    flip_prob: f64,
    rng: Rng,
}

impl<'a> Oracle<'a> {
    pub fn new(truth: &'a GroundTruthConcepts) -> Self {
        Oracle {
            truth,
            flip_prob: 0.0,
            rng: seeded(0),
        }
    }

    pub fn noisy(truth: &'a GroundTruthConcepts, flip_prob: f64, seed: u64) -> Self {
        Oracle {
            truth,
            flip_prob,
            rng: seeded(seed),
        }
    }
}

impl FeedbackSource for Oracle<'_> {
    fn answer(&mut self, feature: usize, concept: usize) -> Result<bool> {
        let truthful = self.truth.contains(concept, feature);
        if self.flip_prob > 0.0 && self.rng.random_bool(self.flip_prob) {
            Ok(!truthful)
        } else {
            Ok(truthful)
        }
    }
}

/// Replays a fixed answer script, e.g. a journal's decisions.
pub struct Scripted<I>(pub I);

impl<I: Iterator<Item = bool>> FeedbackSource for Scripted<I> {
    fn answer(&mut self, _feature: usize, _concept: usize) -> Result<bool> {
        self.0
            .next()
            .ok_or_else(|| crate::Error::Feedback("answer script exhausted".into()))
    }
}

impl<F: FnMut(usize, usize) -> bool> FeedbackSource for F {
    fn answer(&mut self, feature: usize, concept: usize) -> Result<bool> {
        Ok(self(feature, concept))
    }
}
