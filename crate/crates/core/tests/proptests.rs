use camsynth::baselines::km_estimate;
use camsynth::effect::quantile;
use camsynth::equivalence::auc_mann_whitney;
use camsynth::kernels::ContStat;
use camsynth::simgen::hr_transform;
use camsynth::special::{ln_gamma, ln_rising};
use camsynth::student_t::StudentT;
use camsynth::weights::ImportanceWeightSet;
use proptest::prelude::*;

proptest! {
    #[test]
    fn weights_normalize(raw in prop::collection::vec(0.0f64..10.0, 1..50)) {
        prop_assume!(raw.iter().any(|&w| w > 0.0));
        let set = ImportanceWeightSet::from_weights(raw).unwrap();
        prop_assert!((set.w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let ess = set.diagnostics(1).ess;
        prop_assert!(ess >= 1.0 - 1e-9 && ess <= set.w.len() as f64 + 1e-9);
    }

    #[test]
    fn auc_flips_with_score_sign(scores in prop::collection::vec(-5.0f64..5.0, 4..40), seed in 0u64..1000) {
        let labels: Vec<bool> = (0..scores.len()).map(|i| (i as u64 * 7 + seed) % 3 == 0).collect();
        prop_assume!(labels.contains(&true) && labels.contains(&false));
        let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
        let a = auc_mann_whitney(&scores, &labels).unwrap();
        let b = auc_mann_whitney(&neg, &labels).unwrap();
        prop_assert!((a + b - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cont_stat_add_remove(xs in prop::collection::vec(-100.0f64..100.0, 1..30), extra in -100.0f64..100.0) {
        let base = ContStat::from_values(&xs);
        let mut s = base;
        s.add(extra);
        s.remove(extra);
        prop_assert_eq!(s.n, base.n);
        prop_assert!((s.sum - base.sum).abs() < 1e-9);
        prop_assert!((s.sumsq - base.sumsq).abs() < 1e-6 * base.sumsq.max(1.0));
        let mut empty = ContStat::from_values(&xs);
        for &x in &xs {
            empty.remove(x);
        }
        prop_assert_eq!(empty, ContStat::empty());
    }

    #[test]
    fn quantile_is_monotone(xs in prop::collection::vec(-1e3f64..1e3, 1..60), a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(quantile(&xs, lo) <= quantile(&xs, hi));
        let min = xs.iter().copied().fold(f64::INFINITY, f64::min);
        let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert_eq!(quantile(&xs, 0.0), min);
        prop_assert_eq!(quantile(&xs, 1.0), max);
    }

    #[test]
    fn ln_rising_matches_gamma_ratio(x in 0.01f64..500.0, n in 0usize..400) {
        let direct = ln_gamma(x + n as f64) - ln_gamma(x);
        prop_assert!((ln_rising(x, n) - direct).abs() < 1e-9 * direct.abs().max(1.0));
    }

    #[test]
    fn km_is_non_increasing(pairs in prop::collection::vec((1u32..50, any::<bool>()), 1..60)) {
        let t: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
        let e: Vec<bool> = pairs.iter().map(|p| p.1).collect();
        let km = km_estimate(&t, &e).unwrap();
        prop_assert!(km.survival.windows(2).all(|w| w[1] <= w[0]));
        prop_assert!(km.survival.iter().all(|&s| (0.0..=1.0).contains(&s)));
    }

    #[test]
    fn hr_transform_round_trips(t in prop::collection::vec(0.01f64..1e4, 1..30), hr in 0.05f64..1.0) {
        let s = hr_transform(&t, hr).unwrap();
        for (a, b) in t.iter().zip(&s) {
            prop_assert!((b * hr - a).abs() < 1e-12 * a);
            prop_assert!(b >= a);
        }
    }

    #[test]
    fn t_quantile_inverts_cdf(df in 0.5f64..200.0, loc in -5.0f64..5.0, scale in 0.1f64..10.0, p in 1e-4f64..(1.0 - 1e-4)) {
        let t = StudentT::new(df, loc, scale).unwrap();
        let q = t.quantile(p);
        prop_assert!((t.cdf(q) - p).abs() < 1e-8, "df={} p={} cdf={}", df, p, t.cdf(q));
    }
}
