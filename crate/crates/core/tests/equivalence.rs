use camsynth::data::{Arm, Cell, Column, CovariateSchema, MixedDataset};
use camsynth::equivalence::{auc_mann_whitney, cv_classifier_auc, ClassifierConfig, EquivalenceConfig};
use camsynth::rng::{rng_from_seed, std_normal};
use proptest::prelude::*;
use rand::Rng;

fn schema() -> CovariateSchema {
    CovariateSchema::new(vec![Column::continuous("a"), Column::continuous("b"), Column::categorical("g", 3)]).unwrap()
}

fn arm<R: Rng>(arm: Arm, n: usize, shift: f64, rng: &mut R) -> MixedDataset {
    let rows = (0..n)
        .map(|_| {
            let a = if rng.random_bool(0.05) { Cell::Missing } else { Cell::Value(shift + std_normal(rng)) };
            vec![a, Cell::Value(std_normal(rng)), Cell::Level(rng.random_range(0..3))]
        })
        .collect();
    MixedDataset::new(arm, schema(), rows, None, "sim").unwrap()
}

fn trees() -> ClassifierConfig {
    ClassifierConfig::ExtraTrees { n_trees: 100, min_leaf: 5, max_features: None }
}

#[test]
fn exchangeable_arms_give_chance_auc() {
    let mut inside = 0;
    let reps = 40;
    for seed in 0..reps {
        let mut rng = rng_from_seed(1000 + seed);
        let t = arm(Arm::Treatment, 150, 0.0, &mut rng);
        let c = arm(Arm::Rwd, 150, 0.0, &mut rng);
        let r = cv_classifier_auc(&t, &c, &EquivalenceConfig::default(), seed).unwrap();
        if r.auc > 0.4 && r.auc < 0.6 {
            inside += 1;
        }
    }
    assert!(inside as f64 >= 0.95 * reps as f64, "{inside}/{reps}");
}

#[test]
fn disjoint_supports_are_separated() {
    let mut rng = rng_from_seed(5);
    let t = arm(Arm::Treatment, 80, 6.0, &mut rng);
    let c = arm(Arm::Rwd, 80, -6.0, &mut rng);
    for classifier in [ClassifierConfig::default(), trees()] {
        let r = cv_classifier_auc(&t, &c, &EquivalenceConfig { classifier, ..Default::default() }, 1).unwrap();
        assert!(r.auc > 0.95, "{}: {}", r.classifier, r.auc);
        assert!(!r.pass);
        assert_eq!(r.folds.len(), 5);
        assert_eq!(r.scores.len(), 160);
    }
}

#[test]
fn report_is_reproducible() {
    let mut rng = rng_from_seed(6);
    let t = arm(Arm::Treatment, 40, 0.5, &mut rng);
    let c = arm(Arm::Rwd, 60, 0.0, &mut rng);
    let cfg = EquivalenceConfig { classifier: trees(), ..Default::default() };
    assert_eq!(cv_classifier_auc(&t, &c, &cfg, 3).unwrap(), cv_classifier_auc(&t, &c, &cfg, 3).unwrap());
    assert!(cv_classifier_auc(&t, &c, &EquivalenceConfig { folds: 1, ..Default::default() }, 3).is_err());
}

fn brute_force_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li && !lj {
                den += 1.0;
                num += if scores[i] > scores[j] {
                    1.0
                } else if scores[i] == scores[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    num / den
}

proptest! {
    #[test]
    fn auc_matches_pair_enumeration(pairs in prop::collection::vec((0u8..6, any::<bool>()), 2..60)) {
        let scores: Vec<f64> = pairs.iter().map(|p| p.0 as f64 / 5.0).collect();
        let labels: Vec<bool> = pairs.iter().map(|p| p.1).collect();
        prop_assume!(labels.contains(&true) && labels.contains(&false));
        let auc = auc_mann_whitney(&scores, &labels).unwrap();
        prop_assert!((auc - brute_force_auc(&scores, &labels)).abs() < 1e-12);
        let flipped: Vec<bool> = labels.iter().map(|l| !l).collect();
        prop_assert!((auc + auc_mann_whitney(&scores, &flipped).unwrap() - 1.0).abs() < 1e-12);
    }
}
