use std::collections::BTreeSet;
use std::sync::Arc;

use conceptlearn::concept::evaluate_concepts;
use conceptlearn::data::{generate_toy, Dataset, SplitRatios, SplitSpec, ToySpec};
use conceptlearn::proposal::Choice;
use conceptlearn::rng::seeded;
use conceptlearn::session::{
    concept_accuracy, coverage, write_jsonl, Decision, Oracle, Scripted, Session, SessionConfig,
};
use conceptlearn::truth::TruthConcept;
use conceptlearn::{ConceptMatrix, CountMatrix, Error, GroundTruthConcepts, SimilarityGraph, VariantSpec};

fn toy(n: usize, seed: u64) -> (Arc<Dataset>, Arc<SimilarityGraph>, GroundTruthConcepts) {
    let spec = ToySpec {
        n_instances: n,
        seed,
        ..ToySpec::default()
    };
    let (d, truth) = generate_toy(&spec).unwrap();
    let g = SimilarityGraph::build(&d.x, false);
    (Arc::new(d), Arc::new(g), truth)
}

fn small() -> (Arc<Dataset>, Arc<SimilarityGraph>) {
    // 8 rows, 4 features; labels follow feature 0 or feature 1
    let dense = [
        1, 0, 0, 1, //
        0, 1, 1, 0, //
        0, 0, 1, 0, //
        0, 0, 0, 1, //
        1, 1, 0, 0, //
        0, 1, 0, 1, //
        0, 0, 1, 1, //
        1, 0, 1, 0,
    ];
    let x = CountMatrix::from_dense(8, 4, &dense).unwrap();
    let y = vec![1, 1, 0, 0, 1, 1, 0, 1];
    let names = (0..4).map(|i| format!("f{i}")).collect();
    let split = SplitSpec {
        ratios: SplitRatios {
            train: 1.0,
            valid: 0.0,
            test: 0.0,
        },
        seed: 0,
    };
    let d = Dataset::new(x, y, names, split).unwrap();
    let g = SimilarityGraph::build(&d.x, false);
    (Arc::new(d), Arc::new(g))
}

fn names(c: usize) -> Vec<String> {
    (0..c).map(|j| format!("c{j}")).collect()
}

#[test]
fn initialization_labels_every_seed_for_every_concept() {
    let (d, g) = small();
    let s = Session::new(d, g, names(2), vec![0, 2], SessionConfig::default()).unwrap();
    for j in 0..2 {
        assert_eq!(s.explored(j), &BTreeSet::from([0, 2]));
        assert_eq!(s.unlabeled(j), &BTreeSet::from([1, 3]));
    }
    assert_eq!(s.labels().len(), 4);
    assert_eq!(s.labels().get(0, 0), Some(true));
    assert_eq!(s.labels().get(0, 1), Some(false));
    assert_eq!(s.labels().get(2, 1), Some(true));
    assert_eq!(s.concepts().n_associations(), 2);
    s.check_invariants().unwrap();
}

#[test]
fn bad_seeds_are_rejected() {
    let (d, g) = small();
    let cfg = SessionConfig::default();
    let dup = Session::new(d.clone(), g.clone(), names(2), vec![1, 1], cfg);
    assert!(matches!(dup, Err(Error::Invalid(_))));
    let count = Session::new(d.clone(), g.clone(), names(2), vec![1], cfg);
    assert!(matches!(count, Err(Error::Invalid(_))));

    // a feature that never occurs
    let x = CountMatrix::from_dense(4, 3, &[1, 0, 0, 0, 1, 0, 1, 0, 0, 0, 1, 0]).unwrap();
    let d0 = Dataset::new(x, vec![1, 0, 1, 0], names(3), SplitSpec::default()).unwrap();
    let g0 = SimilarityGraph::build(&d0.x, false);
    let zero = Session::new(Arc::new(d0), Arc::new(g0), names(1), vec![2], cfg);
    assert!(matches!(zero, Err(Error::Invalid(_))));
}

#[test]
fn reject_everything_keeps_seed_model() {
    let (d, g, truth) = toy(2000, 3);
    let seeds = truth.sample_seeds(&mut seeded(1)).unwrap();
    let cfg = SessionConfig {
        proposals_per_concept: 4,
        ..SessionConfig::default()
    };
    let mut s = Session::with_truth(d, g, &truth, seeds.clone(), cfg).unwrap();
    let before = s.predictor().clone();
    s.run(&mut |_, _| false).unwrap();
    assert_eq!(s.n_accepted(), 0);
    for (j, &seed) in seeds.iter().enumerate() {
        assert_eq!(s.concepts().features(j), &BTreeSet::from([seed]));
    }
    assert_eq!(s.predictor(), &before);
    assert_eq!(s.journal().len(), 3 * 4);
    s.check_invariants().unwrap();
}

#[test]
fn accept_everything_fills_budget_except_dummies() {
    let (d, g, truth) = toy(2000, 4);
    let seeds = truth.sample_seeds(&mut seeded(2)).unwrap();
    let cfg = SessionConfig {
        proposals_per_concept: 3,
        ..SessionConfig::default()
    };
    let mut s = Session::with_truth(d, g, &truth, seeds, cfg).unwrap();
    s.run(&mut |_, _| true).unwrap();
    for j in 0..3 {
        let real = s
            .journal()
            .iter()
            .filter(|e| e.concept == j && e.decision != Decision::Dummy)
            .count();
        assert_eq!(s.concepts().features(j).len(), 1 + real);
        for &i in s.concepts().features(j) {
            assert_eq!(s.labels().get(i, j), Some(true));
        }
    }
    s.check_invariants().unwrap();
}

#[test]
fn seeded_toy_model_beats_chance() {
    let (d, g, truth) = toy(5000, 5);
    let seeds = truth.sample_seeds(&mut seeded(3)).unwrap();
    let s = Session::with_truth(d, g, &truth, seeds, SessionConfig::default()).unwrap();
    let m = &s.metrics()[0];
    assert_eq!(m.step, 0);
    assert!(m.downstream_acc_train > 0.5, "{m:?}");
}

#[test]
fn oracle_run_keeps_invariants_budget_and_no_repeats() {
    let (d, g, truth) = toy(3000, 6);
    let seeds = truth.sample_seeds(&mut seeded(4)).unwrap();
    let cfg = SessionConfig {
        proposals_per_concept: 4,
        ..SessionConfig::default()
    };
    let mut s = Session::with_truth(d, g, &truth, seeds, cfg).unwrap();
    let mut seen = BTreeSet::new();
    let mut prev_concept_acc = s.metrics()[0].concept_acc_test.unwrap();
    let mut oracle = Oracle::new(&truth);
    while let Some(q) = s.next_query().unwrap() {
        assert!(seen.insert((q.feature, q.concept)), "pair proposed twice");
        assert_eq!(s.next_query().unwrap(), Some(q), "pending query is stable");
        let accept = conceptlearn::session::FeedbackSource::answer(&mut oracle, q.feature, q.concept).unwrap();
        s.decide(accept).unwrap();
        s.check_invariants().unwrap();
        // truth sets are disjoint, so accepting truth features never hurts
        let acc = s.latest_metrics().concept_acc_test.unwrap();
        assert!(acc >= prev_concept_acc);
        prev_concept_acc = acc;
    }
    assert!(s.decide(true).is_err());
    let dummies = s.journal().iter().filter(|e| e.decision == Decision::Dummy).count();
    assert_eq!(s.journal().len(), 3 * 4);
    assert_eq!(s.n_queries(), 3 * 4 - dummies);
    assert_eq!(s.metrics().len(), s.journal().len() + 1);
}

#[test]
fn runs_are_deterministic_and_replayable() {
    let (d, g, truth) = toy(3000, 7);
    let seeds = truth.sample_seeds(&mut seeded(5)).unwrap();
    let cfg = SessionConfig {
        proposals_per_concept: 4,
        variant: VariantSpec::PredIntuit(10),
        ..SessionConfig::default()
    };
    let journal = |s: &Session| {
        let mut buf = Vec::new();
        write_jsonl(s.journal(), &mut buf).unwrap();
        buf
    };
    let mut a = Session::with_truth(d.clone(), g.clone(), &truth, seeds.clone(), cfg).unwrap();
    a.run(&mut Oracle::new(&truth)).unwrap();
    let mut b = Session::with_truth(d.clone(), g.clone(), &truth, seeds.clone(), cfg).unwrap();
    b.run(&mut Oracle::new(&truth)).unwrap();
    assert_eq!(journal(&a), journal(&b));

    let mut c = Session::with_truth(d.clone(), g.clone(), &truth, seeds.clone(), cfg).unwrap();
    c.replay(a.journal()).unwrap();
    assert!(c.is_finished() || c.next_query().unwrap().is_none());
    assert_eq!(c.concepts(), a.concepts());
    assert_eq!(c.predictor(), a.predictor());
    assert_eq!(journal(&c), journal(&a));

    // scripted answers reproduce the same run
    let answers: Vec<bool> = a
        .journal()
        .iter()
        .filter(|e| e.decision != Decision::Dummy)
        .map(|e| e.decision == Decision::Accept)
        .collect();
    let mut e = Session::with_truth(d, g, &truth, seeds, cfg).unwrap();
    e.run(&mut Scripted(answers.into_iter())).unwrap();
    assert_eq!(journal(&e), journal(&a));
}

#[test]
fn dummy_can_end_a_concept() {
    let (d, g, truth) = toy(2000, 8);
    let seeds = truth.sample_seeds(&mut seeded(6)).unwrap();
    let cfg = SessionConfig {
        proposals_per_concept: 6,
        dummy_ends_concept: true,
        ..SessionConfig::default()
    };
    let mut s = Session::with_truth(d, g, &truth, seeds, cfg).unwrap();
    s.run(&mut Oracle::new(&truth)).unwrap();
    for j in 0..3 {
        let steps: Vec<_> = s.journal().iter().filter(|e| e.concept == j).collect();
        let dummies = steps.iter().filter(|e| e.choice == Choice::Dummy).count();
        assert!(dummies <= 1);
        if dummies == 1 {
            assert_eq!(steps.last().unwrap().choice, Choice::Dummy);
        }
    }
}

#[test]
fn concept_accuracy_and_coverage_hand_case() {
    // 4 rows, 3 features
    let x = CountMatrix::from_dense(4, 3, &[1, 0, 0, 0, 1, 0, 0, 0, 1, 1, 1, 0]).unwrap();
    let pred = ConceptMatrix::from_sets(3, names(2), vec![BTreeSet::from([0]), BTreeSet::from([2])]).unwrap();
    let truth = ConceptMatrix::from_sets(3, names(2), vec![BTreeSet::from([0, 1]), BTreeSet::from([2])]).unwrap();
    let (p, t) = (evaluate_concepts(&pred, &x).unwrap(), evaluate_concepts(&truth, &x).unwrap());
    let rows = [0, 1, 2, 3];
    // only (row 1, concept 0) disagrees: 7 of 8 pairs
    assert_eq!(concept_accuracy(&p, &t, &rows), 7.0 / 8.0);
    assert_eq!(concept_accuracy(&t, &t, &rows), 1.0);
    assert_eq!(coverage(&p, &rows), vec![2, 1]);
    assert_eq!(coverage(&t, &rows), vec![3, 1]);

    let empty = evaluate_concepts(&ConceptMatrix::empty(3, names(1)), &x).unwrap();
    let all = evaluate_concepts(
        &ConceptMatrix::from_sets(3, names(1), vec![BTreeSet::from([0, 1, 2])]).unwrap(),
        &x,
    )
    .unwrap();
    assert_eq!(concept_accuracy(&empty, &all, &rows), 0.0);
    assert_eq!(coverage(&empty, &rows), vec![0]);
}

#[test]
fn seed_sampling() {
    let single = GroundTruthConcepts::new(
        vec![TruthConcept {
            name: "a".into(),
            features: vec![0, 1],
            seeds: vec![1],
        }],
        2,
    )
    .unwrap();
    let mut rng = seeded(9);
    assert!((0..20).all(|_| single.sample_seeds(&mut rng).unwrap() == vec![1]));

    let two = GroundTruthConcepts::new(
        vec![TruthConcept {
            name: "a".into(),
            features: vec![0, 1, 2],
            seeds: vec![0, 2],
        }],
        3,
    )
    .unwrap();
    let draws: BTreeSet<usize> = (0..100).map(|_| two.sample_seeds(&mut rng).unwrap()[0]).collect();
    assert_eq!(draws, BTreeSet::from([0, 2]));
}
