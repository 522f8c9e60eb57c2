use camsynth::baselines::ols;
use camsynth::data::{Arm, Cell};
use camsynth::rng::rng_from_seed;
use camsynth::simgen::{
    encode_numeric, gen_cam, gen_multi_historical, gen_outcomes, gen_registry, gen_selection, generate, hr_transform, numeric_dim, RegistrySpec, ScenarioKind,
    ScenarioSpec, SelectionMode,
};
use rand::Rng;

#[test]
fn cam_imbalance_matches_design() {
    let spec = ScenarioSpec { n1: 200, n2: Some(14_000), p: 6, ..Default::default() };
    let sim = gen_cam(&spec, &mut rng_from_seed(3)).unwrap();
    let c2 = &sim.diagnostics.components[1];
    let share = c2.iter().filter(|&&c| c == 0).count() as f64 / c2.len() as f64;
    let se = (1.0f64 / 7.0 * 6.0 / 7.0 / c2.len() as f64).sqrt();
    assert!((share - 1.0 / 7.0).abs() < 3.0 * se, "{share}");

    // Binary columns: Bernoulli(0.85) in the trial, the 1:6 mixture of 0.85 and 0.65 in the RWD.
    let rate = |rows: &[Vec<Cell>], j: usize| rows.iter().filter(|r| r[j] == Cell::Level(1)).count() as f64 / rows.len() as f64;
    let mix = 0.85 / 7.0 + 0.65 * 6.0 / 7.0;
    let r2 = rate(&sim.study.rwd.rows, 4);
    assert!((r2 - mix).abs() < 3.0 * (mix * (1.0 - mix) / c2.len() as f64).sqrt(), "{r2}");
    assert!(sim.study.treatment.rows.iter().all(|r| r.len() == 6));
}

#[test]
fn ols_recovers_effect_and_coefficients() {
    let sim = gen_cam(&ScenarioSpec { n1: 400, p: 6, ..Default::default() }, &mut rng_from_seed(4)).unwrap();
    let dim = numeric_dim(sim.study.schema());
    let beta: Vec<f64> = (0..dim).map(|j| 0.5 - 0.2 * j as f64).collect();
    let study = gen_outcomes(&sim.study, 1.7, Some(&beta), 0.8, &mut rng_from_seed(5)).unwrap();
    let mut x = Vec::new();
    let mut y = Vec::new();
    for arm in Arm::BOTH {
        let ds = study.arm(arm);
        for (row, o) in ds.rows.iter().zip(ds.outcomes.as_ref().unwrap()) {
            let mut r = vec![1.0, (arm == Arm::Treatment) as u8 as f64];
            r.extend(encode_numeric(&ds.schema, row));
            x.push(r);
            y.push(o.y);
        }
    }
    let names: Vec<String> = (0..dim + 2).map(|j| format!("v{j}")).collect();
    let fit = ols(&x, &y, &names).unwrap();
    assert!(fit.coef[0].abs() < 3.0 * fit.se[0]);
    assert!((fit.coef[1] - 1.7).abs() < 3.0 * fit.se[1]);
    for j in 0..dim {
        assert!((fit.coef[j + 2] - beta[j]).abs() < 3.5 * fit.se[j + 2], "beta {j}");
    }
    assert!(gen_outcomes(&sim.study, 0.0, Some(&[1.0]), 1.0, &mut rng_from_seed(0)).is_err());
}

#[test]
fn multi_historical_sources_miss_one_atom_each() {
    let spec = ScenarioSpec { kind: ScenarioKind::MultiHistorical, n1: 100, p: 10, k: 4, ..Default::default() };
    let sim = gen_multi_historical(&spec, &mut rng_from_seed(6)).unwrap();
    let rwd = &sim.study.rwd;
    assert_eq!(rwd.len(), 600);
    let comps = &sim.diagnostics.components[1];
    for (prov, &c) in rwd.provenance.iter().zip(comps) {
        match prov.source.as_str() {
            "source_a" => assert_ne!(c, 3),
            "source_b" => assert_ne!(c, 0),
            other => panic!("{other}"),
        }
    }
    // Atom 3 puts mass 2 on coordinate 8, so source A rows average zero there.
    let mean8 = |src: &str| {
        let v: Vec<f64> = rwd.rows.iter().zip(&rwd.provenance).filter(|(_, p)| p.source == src).filter_map(|(r, _)| r[8].value()).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    assert!(mean8("source_a").abs() < 0.15);
    assert!(mean8("source_b") > 0.3);
    let w2 = &sim.diagnostics.weights[1];
    assert!((w2.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!(gen_multi_historical(&ScenarioSpec { k: 2, ..spec }, &mut rng_from_seed(6)).is_err());
}

#[test]
fn exponential_rate_ratio_after_hr_transform() {
    let mut rng = rng_from_seed(7);
    let n = 100_000;
    let rate = 0.02;
    let t: Vec<f64> = (0..n).map(|_| -(1.0 - rng.random::<f64>()).ln() / rate).collect();
    let s = hr_transform(&t, 0.6).unwrap();
    // Exponential MLE is n / Σt in each arm.
    let mle = |x: &[f64]| x.len() as f64 / x.iter().sum::<f64>();
    let ratio = mle(&s) / mle(&t);
    assert!((ratio - 0.6).abs() < 1e-12);
    let fresh: Vec<f64> = (0..n).map(|_| -(1.0 - rng.random::<f64>()).ln() / rate).collect();
    let r2 = mle(&s) / mle(&fresh);
    assert!((r2 - 0.6).abs() < 3.0 * 0.6 * (2.0 / n as f64).sqrt());
    assert!(hr_transform(&t, 1.5).is_err());
}

#[test]
fn registry_has_censoring_and_missingness() {
    let reg = gen_registry(&RegistrySpec { size: 3000, ..Default::default() }, &mut rng_from_seed(8)).unwrap();
    let ys = reg.outcomes.as_ref().unwrap();
    let censored = ys.iter().filter(|o| !o.is_observed()).count() as f64 / ys.len() as f64;
    assert!(censored > 0.02 && censored < 0.6, "{censored}");
    let missing = reg.missing_count() as f64 / (3000.0 * reg.schema.len() as f64);
    assert!((missing - 0.03).abs() < 0.005, "{missing}");
    assert!(ys.iter().all(|o| o.y.is_finite()));
}

#[test]
fn selection_splits_the_registry() {
    let mut rng = rng_from_seed(9);
    let reg = gen_registry(&RegistrySpec::default(), &mut rng).unwrap();
    for mode in [SelectionMode::Interaction, SelectionMode::Oracle] {
        let sim = gen_selection(&reg, mode, 49, None, &mut rng).unwrap();
        assert_eq!(sim.study.treatment.len(), 49);
        assert_eq!(sim.study.rwd.len(), 339 - 49);
        let mut rows: Vec<usize> = sim.study.treatment.provenance.iter().chain(&sim.study.rwd.provenance).map(|p| p.row).collect();
        rows.sort_unstable();
        assert_eq!(rows, (0..339).collect::<Vec<_>>());
        let with_n2 = gen_selection(&reg, mode, 49, Some(500), &mut rng).unwrap();
        assert_eq!(with_n2.study.rwd.len(), 500);
    }
    assert!(gen_selection(&reg, SelectionMode::Oracle, 339, None, &mut rng).is_err());
}

#[test]
fn every_scenario_generates() {
    for kind in [ScenarioKind::Cam, ScenarioKind::Mix, ScenarioKind::MultiHistorical, ScenarioKind::Interaction, ScenarioKind::Oracle] {
        let spec = ScenarioSpec { kind, n1: 30, p: 10, seed: 12, ..Default::default() };
        let sim = generate(&spec).unwrap();
        assert_eq!(sim.study.treatment.len(), 30);
        assert!(sim.study.has_outcomes());
        assert_eq!(sim.study, generate(&spec).unwrap().study);
    }
}
