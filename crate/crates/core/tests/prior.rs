mod common;

use std::collections::BTreeMap;

use ditto_core::{compute_prior, Error, LanguagePrior, Rng};
use proptest::prelude::*;

use common::scores;

fn table(src: f64, targets: &[f64]) -> BTreeMap<String, f64> {
    let mut s: BTreeMap<String, f64> = targets.iter().enumerate().map(|(i, &z)| (format!("t{i:02}"), z)).collect();
    s.insert("src".into(), src);
    s
}

#[test]
fn deficits_shift_mass_to_the_weakest_target() {
    // Deltas 0, 10, 30: mean 40/3, sigma sqrt(1400/9 ≈ 155.56) ≈ 12.472.
    let p = compute_prior(&scores(&[("src", 90.0), ("a", 90.0), ("b", 80.0), ("c", 60.0)]), "src").unwrap();
    let sigma = (((0.0f64 - 40.0 / 3.0).powi(2) + (10.0f64 - 40.0 / 3.0).powi(2) + (30.0f64 - 40.0 / 3.0).powi(2)) / 3.0).sqrt();
    let total = 40.0 + 3.0 * sigma;
    for (t, d) in [("a", 0.0), ("b", 10.0), ("c", 30.0)] {
        assert!((p.prob(t) - (d + sigma) / total).abs() < 1e-12, "{t}");
    }
    assert_eq!(p.prob("src"), 0.0);
}

#[test]
fn targets_above_the_source_count_as_zero_deficit() {
    let p = compute_prior(&scores(&[("src", 50.0), ("a", 70.0), ("b", 60.0)]), "src").unwrap();
    assert_eq!(p.prob("a"), 0.5);
    assert_eq!(p.prob("b"), 0.5);
}

#[test]
fn invalid_inputs_are_rejected() {
    assert!(matches!(compute_prior(&scores(&[("a", 50.0)]), "src"), Err(Error::Input(_))));
    assert!(matches!(compute_prior(&scores(&[("src", 50.0)]), "src"), Err(Error::Input(_))));
    assert!(matches!(compute_prior(&scores(&[("src", 50.0), ("a", 101.0)]), "src"), Err(Error::Input(_))));
    assert!(matches!(compute_prior(&scores(&[("src", 50.0), ("a", f64::NAN)]), "src"), Err(Error::Input(_))));
    assert!(LanguagePrior::new(scores(&[("a", 0.5), ("b", 0.4)])).is_err());
    assert!(LanguagePrior::new(scores(&[("a", 1.5), ("b", -0.5)])).is_err());
    assert!(LanguagePrior::uniform::<&str>(&[]).is_err());
}

#[test]
fn zero_probability_targets_are_never_drawn() {
    let p = LanguagePrior::new(scores(&[("a", 0.0), ("b", 0.25), ("c", 0.0), ("d", 0.75)])).unwrap();
    let mut rng = Rng::new(11);
    let mut counts = BTreeMap::new();
    for _ in 0..20_000 {
        *counts.entry(p.sample(&mut rng).to_string()).or_insert(0usize) += 1;
    }
    assert_eq!(counts.keys().collect::<Vec<_>>(), ["b", "d"]);
    assert!((counts["b"] as f64 / 20_000.0 - 0.25).abs() < 0.02);
}

proptest! {
    #[test]
    fn prior_is_a_distribution(src in 0.0f64..=100.0, targets in prop::collection::vec(0.0f64..=100.0, 1..12)) {
        let p = compute_prior(&table(src, &targets), "src").unwrap();
        prop_assert_eq!(p.len(), targets.len());
        let total: f64 = p.iter().map(|(_, q)| q).sum();
        prop_assert!((total - 1.0).abs() <= 1e-9);
        prop_assert!(p.iter().all(|(_, q)| q >= 0.0));
    }

    #[test]
    fn larger_deficit_never_gets_less_mass(src in 0.0f64..=100.0, targets in prop::collection::vec(0.0f64..=100.0, 2..12)) {
        let p = compute_prior(&table(src, &targets), "src").unwrap();
        for (i, &zi) in targets.iter().enumerate() {
            for (j, &zj) in targets.iter().enumerate() {
                let (di, dj) = ((src - zi).max(0.0), (src - zj).max(0.0));
                if di > dj {
                    let (pi, pj) = (p.prob(&format!("t{i:02}")), p.prob(&format!("t{j:02}")));
                    prop_assert!(pi >= pj);
                }
            }
        }
    }

    #[test]
    fn equal_deficits_give_the_uniform_prior(src in 0.0f64..=100.0, n in 1usize..10, above in 0.0f64..=1.0) {
        let z = (src + above * (100.0 - src)).min(100.0);
        let p = compute_prior(&table(src, &vec![z; n]), "src").unwrap();
        for (_, q) in p.iter() {
            prop_assert!((q - 1.0 / n as f64).abs() <= 1e-12);
        }
    }

    #[test]
    fn sampling_only_returns_known_targets(seed in 0u64..500, targets in prop::collection::vec(0.0f64..=100.0, 1..8)) {
        let p = compute_prior(&table(70.0, &targets), "src").unwrap();
        let mut rng = Rng::new(seed);
        for _ in 0..50 {
            let t = p.sample(&mut rng).to_string();
            prop_assert!(p.prob(&t) > 0.0);
        }
    }
}
