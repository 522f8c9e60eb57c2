use camsynth::analysis::prepare;
use camsynth::rng::rng_from_seed;
use camsynth::sampler::{run_chain, ChainConfig, GibbsState};
use camsynth::simgen::{generate, ScenarioSpec};
use camsynth::weights::{compute_weights, resample_uniform, ImportanceWeightSet};

fn draw(c2: Vec<usize>, pi1: Vec<f64>) -> GibbsState {
    let k = pi1.len();
    let mut n2 = vec![0; k];
    for &c in &c2 {
        n2[c] += 1;
    }
    GibbsState {
        c: [vec![], c2],
        y_latent: [vec![], vec![]],
        mu: [vec![0.0; k], vec![0.0; k]],
        sigma2: [vec![1.0; k], vec![1.0; k]],
        pi: [pi1, vec![1.0 / k as f64; k]],
        alpha: [1.0, 1.0],
        mu0: 0.0,
        b0: 1.0,
        n: [vec![0; k], n2],
    }
}

#[test]
fn single_draw_hand_oracle() {
    let d = draw(vec![0, 0, 0, 0, 1], vec![0.8, 0.2]);
    let w = compute_weights(&[d], &[]).unwrap();
    // Unnormalized 0.8/4 = 0.2 for each cluster-0 row and 0.2/1 for the lone row; total 1.0.
    for i in 0..4 {
        assert!((w.w[i] - 0.2).abs() < 1e-15);
    }
    assert!((w.w[4] - 0.2).abs() < 1e-15);

    let d = draw(vec![0, 0, 1], vec![0.5, 0.5]);
    let w = compute_weights(&[d], &[]).unwrap();
    assert!((w.w[0] - 0.25).abs() < 1e-15 && (w.w[2] - 0.5).abs() < 1e-15);
}

#[test]
fn averaging_over_draws() {
    let a = draw(vec![0, 0, 1], vec![1.0, 0.0]);
    let b = draw(vec![0, 1, 1], vec![0.0, 1.0]);
    let w = compute_weights(&[a, b], &[]).unwrap();
    // Row sums: (0.5 + 0, 0.5 + 0.5, 0 + 0.5) over a total of 2.
    let expect = [0.25, 0.5, 0.25];
    for (x, e) in w.w.iter().zip(expect) {
        assert!((x - e).abs() < 1e-15);
    }
    assert_eq!(w.draws, 2);
}

#[test]
fn single_cluster_gives_uniform_weights() {
    let draws = vec![draw(vec![0; 6], vec![1.0, 0.0, 0.0]); 3];
    let w = compute_weights(&draws, &[]).unwrap();
    assert!(w.w.iter().all(|&x| (x - 1.0 / 6.0).abs() < 1e-15));
    assert!((w.diagnostics(6).ess - 6.0).abs() < 1e-12);
}

#[test]
fn ess_closed_forms() {
    assert!((ImportanceWeightSet::from_weights(vec![1.0; 10]).unwrap().diagnostics(5).ess - 10.0).abs() < 1e-12);
    let point = ImportanceWeightSet::from_weights(vec![0.0, 0.0, 3.0]).unwrap();
    assert_eq!(point.diagnostics(1).ess, 1.0);
    let two = ImportanceWeightSet::from_weights(vec![0.5, 0.5, 0.0, 0.0]).unwrap();
    let d = two.diagnostics(3);
    assert!((d.ess - 2.0).abs() < 1e-12);
    assert!(d.low_ess);
}

#[test]
fn point_mass_resamples_one_row() {
    let mut w = vec![0.0; 10];
    w[7] = 1.0;
    let set = ImportanceWeightSet::from_weights(w).unwrap();
    let idx = set.resample_indices(500, &mut rng_from_seed(1)).unwrap();
    assert!(idx.iter().all(|&i| i == 7));
    assert!(set.resample_indices(0, &mut rng_from_seed(1)).is_err());
}

#[test]
fn uniform_resampling_frequencies() {
    let n = 100_000;
    let set = ImportanceWeightSet::from_weights(vec![1.0; 10]).unwrap();
    let idx = set.resample_indices(n, &mut rng_from_seed(2)).unwrap();
    let se = (0.1f64 * 0.9 / n as f64).sqrt();
    for r in 0..10 {
        let f = idx.iter().filter(|&&i| i == r).count() as f64 / n as f64;
        assert!((f - 0.1).abs() < 3.0 * se, "row {r}: {f}");
    }
    let u = resample_uniform(10, n, &mut rng_from_seed(3));
    let f0 = u.iter().filter(|&&i| i == 0).count() as f64 / n as f64;
    assert!((f0 - 0.1).abs() < 3.0 * se);
}

#[test]
fn resampled_mean_matches_weighted_mean() {
    let g: Vec<f64> = (0..12).map(|i| (i as f64 * 0.7).sin() * 3.0).collect();
    let set = ImportanceWeightSet::from_weights((0..12).map(|i| 1.0 + (i % 4) as f64).collect()).unwrap();
    let target = set.weighted_mean(|i| g[i]);
    let var = set.weighted_mean(|i| (g[i] - target).powi(2));
    let mut rng = rng_from_seed(4);
    let reps = 10_000;
    let size = 5;
    let mut acc = 0.0;
    for _ in 0..reps {
        let idx = set.resample_indices(size, &mut rng).unwrap();
        acc += idx.iter().map(|&i| g[i]).sum::<f64>() / size as f64;
    }
    let mean = acc / reps as f64;
    let se = (var / size as f64 / reps as f64).sqrt();
    assert!((mean - target).abs() < 3.0 * se);
}

#[test]
fn chain_weights_are_reproducible_and_normalized() {
    let sim = generate(&ScenarioSpec { n1: 30, seed: 5, ..Default::default() }).unwrap();
    let study = prepare(&sim.study, true).without_outcomes();
    let cfg = ChainConfig { iters: 400, burn_in: 100, thin: 5, seed: 17, ..Default::default() };
    let a = compute_weights(&run_chain(&study, &cfg).unwrap().draws, &study.rwd.provenance).unwrap();
    let b = compute_weights(&run_chain(&study, &cfg).unwrap().draws, &study.rwd.provenance).unwrap();
    assert_eq!(a, b);
    assert!((a.w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!(a.w.iter().all(|&x| x > 0.0));
    assert_eq!(a.provenance, study.rwd.provenance);
}
