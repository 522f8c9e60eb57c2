//! End-to-end acceptance checks. Each test prints one `C<n> PASS|FAIL` line to stderr (bypassing
//! the harness capture) before asserting.

use std::io::Write;
use std::time::Instant;

use camsynth::analysis::{run_pipeline, run_power, Method, PipelineConfig};
use camsynth::baselines::{km_estimate, logrank_test};
use camsynth::data::{Arm, Cell, CensoredOutcome, Column, CovariateSchema, MixedDataset, OutcomeMode, StudyData};
use camsynth::effect::quantile;
use camsynth::equivalence::EquivalenceConfig;
use camsynth::gof::{compute_u, ks_uniform};
use camsynth::kernels::{cont_predictive, ContStat, NigHyper};
use camsynth::rng::{derive_seed, rng_from_seed, std_normal, ChainRng};
use camsynth::sampler::{alpha_log_post, hyper_log_post, run_chain, ChainConfig, ResponseHyper, Sampler};
use camsynth::simgen::{gen_registry, gen_selection, hr_transform_dataset, RegistrySpec, ScenarioKind, ScenarioSpec, SelectionMode};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma};

fn verdict(id: &str, ok: bool, detail: String) {
    let line = format!("{id} {} {detail}\n", if ok { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(ok, "{id}: {detail}");
}

fn study_from(x1: Vec<Vec<Cell>>, x2: Vec<Vec<Cell>>, schema: &CovariateSchema, y1: Option<Vec<CensoredOutcome>>, y2: Option<Vec<CensoredOutcome>>) -> StudyData {
    StudyData::new(
        MixedDataset::new(Arm::Treatment, schema.clone(), x1, y1, "trial").unwrap(),
        MixedDataset::new(Arm::Rwd, schema.clone(), x2, y2, "rwd").unwrap(),
    )
    .unwrap()
}

fn inv_gamma<R: Rng>(a: f64, b: f64, rng: &mut R) -> f64 {
    b / Gamma::new(a, 1.0).unwrap().sample(rng)
}

/// Simpson quadrature of the NIG predictive over log σ², with μ integrated in closed form.
fn quadrature_predictive(x: f64, post: &NigHyper<f64>) -> f64 {
    let (lo, hi, m) = (-25.0f64, 12.0f64, 40_000usize);
    let h = (hi - lo) / m as f64;
    let ln_norm = post.a * post.b.ln() - camsynth::special::ln_gamma(post.a);
    let f = |tau: f64| {
        let s2 = tau.exp();
        let v = s2 * (1.0 + 1.0 / post.kappa);
        (ln_norm - post.a * tau - post.b / s2 - 0.5 * (2.0 * std::f64::consts::PI * v).ln() - (x - post.mu).powi(2) / (2.0 * v)).exp()
    };
    let mut acc = f(lo) + f(hi);
    for i in 1..m {
        acc += f(lo + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    acc * h / 3.0
}

#[test]
fn c1_conjugacy_oracle() {
    let start = Instant::now();
    let schema = CovariateSchema::new(vec![Column::continuous("x")]).unwrap();
    let y1 = [1.2, 0.8, 1.5, 2.0];
    let y2 = [3.1, 2.9, 3.4, 2.2, 2.7, 3.0];
    let obs = |y: &[f64]| Some(y.iter().map(|&v| CensoredOutcome::observed(v)).collect());
    let rows = |n: usize| vec![vec![Cell::Missing]; n];
    let study = study_from(rows(4), rows(6), &schema, obs(&y1), obs(&y2));
    let cfg = ChainConfig { k: 3, iters: 10, burn_in: 1, ..Default::default() };
    let mut rng = rng_from_seed(101);
    let mut s = Sampler::new(&study, &cfg, &mut rng).unwrap();
    s.set_labels(vec![0, 0, 1, 1], vec![0, 0, 0, 1, 1, 1]).unwrap();
    let (mu0, b0) = (2.0, 3.0);
    s.set_hyper(mu0, b0, [1.0, 1.0]);
    let r = ResponseHyper::default();
    // (arm, cluster, members)
    let cells: [(usize, usize, Vec<f64>); 4] = [(0, 0, y1[..2].to_vec()), (0, 1, y1[2..].to_vec()), (1, 0, y2[..3].to_vec()), (1, 1, y2[3..].to_vec())];
    let m = 10_000;
    let mut acc = vec![(0.0, 0.0); cells.len()];
    for _ in 0..m {
        s.step4_update_params_weights(&mut rng);
        for (a, (arm, j, _)) in acc.iter_mut().zip(&cells) {
            a.0 += s.state().mu[*arm][*j];
            a.1 += s.state().sigma2[*arm][*j];
        }
    }
    let mut worst: f64 = 0.0;
    for ((_, _, ys), (am, as2)) in cells.iter().zip(&acc) {
        let n = ys.len() as f64;
        let sum: f64 = ys.iter().sum();
        let ss: f64 = ys.iter().map(|v| v * v).sum();
        let kn = r.kappa0 + n;
        let mn = (r.kappa0 * mu0 + sum) / kn;
        let an = r.a0 + n / 2.0;
        let bn = b0 + 0.5 * (ss + r.kappa0 * mu0 * mu0 - kn * mn * mn);
        let e_s2 = bn / (an - 1.0);
        let se_s2 = e_s2 / (an - 2.0).sqrt() / (m as f64).sqrt();
        let se_mu = (bn / (an - 1.0) / kn).sqrt() / (m as f64).sqrt();
        worst = worst.max((am / m as f64 - mn).abs() / se_mu).max((as2 / m as f64 - e_s2).abs() / se_s2);
    }

    let hyper = NigHyper::new(0.0f64, 1.0, 10.0, 1.0).unwrap();
    let cases: [(&[f64], f64); 4] = [(&[1.0, 1.0, 1.0], 1.0), (&[1.0, 1.0, 1.0], -0.7), (&[], 0.3), (&[0.2, -1.4, 2.5, 0.9], 3.1)];
    let quad_err = cases
        .iter()
        .map(|(members, x)| {
            let st = ContStat::from_values(members);
            (cont_predictive(*x, &st, &hyper) - quadrature_predictive(*x, &hyper.posterior(&st))).abs()
        })
        .fold(0.0, f64::max);
    let secs = start.elapsed().as_secs_f64();
    verdict("C1", worst < 3.0 && quad_err < 1e-8 && secs < 60.0, format!("max |z| {worst:.2}, quadrature error {quad_err:.1e}, {secs:.1}s"));
}

/// Data drawn from the model family: common covariate atoms, arm-specific NIG response atoms.
fn self_consistent_study(n1: usize, n2: usize, rng: &mut ChainRng) -> StudyData {
    let atoms = 4;
    let (q, b) = (3, 2);
    let mut cols: Vec<Column> = (0..q).map(|j| Column::continuous(format!("x{j}"))).collect();
    cols.extend((0..b).map(|j| Column::categorical(format!("b{j}"), 2)));
    let schema = CovariateSchema::new(cols).unwrap();
    let dir = |rng: &mut ChainRng| {
        let g: Vec<f64> = (0..atoms).map(|_| Gamma::new(1.0, 1.0).unwrap().sample(rng)).collect();
        let s: f64 = g.iter().sum();
        g.into_iter().map(|v| v / s).collect::<Vec<f64>>()
    };
    let pi = [dir(rng), dir(rng)];
    let cont: Vec<Vec<(f64, f64)>> = (0..atoms).map(|_| (0..q).map(|_| (2.0 * std_normal(rng), 0.3)).collect()).collect();
    let bin: Vec<Vec<f64>> = (0..atoms).map(|_| (0..b).map(|_| rng.random::<f64>()).collect()).collect();
    let (a0, b0, mu0) = (10.0, 5.0, 0.0);
    let resp: Vec<Vec<(f64, f64)>> = (0..2)
        .map(|_| {
            (0..atoms)
                .map(|_| {
                    let s2 = inv_gamma(a0, b0, rng);
                    (mu0 + s2.sqrt() * std_normal(rng), s2)
                })
                .collect()
        })
        .collect();
    let pick = |p: &[f64], rng: &mut ChainRng| {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        p.iter().position(|&w| {
            acc += w;
            u < acc
        })
        .unwrap_or(p.len() - 1)
    };
    let arm = |s: usize, n: usize, rng: &mut ChainRng| {
        let mut xs = Vec::with_capacity(n);
        let mut ys = Vec::with_capacity(n);
        for _ in 0..n {
            let c = pick(&pi[s], rng);
            let mut row: Vec<Cell> = cont[c].iter().map(|&(m, v)| Cell::Value(m + v.sqrt() * std_normal(rng))).collect();
            row.extend(bin[c].iter().map(|&p| Cell::Level(rng.random_bool(p) as u32)));
            xs.push(row);
            let (m, v) = resp[s][c];
            ys.push(CensoredOutcome::observed(m + v.sqrt() * std_normal(rng)));
        }
        (xs, ys)
    };
    let (x1, y1) = arm(0, n1, rng);
    let (x2, y2) = arm(1, n2, rng);
    study_from(x1, x2, &schema, Some(y1), Some(y2))
}

#[test]
fn c2_posterior_u_statistics_are_uniform() {
    let reps = 50;
    let mut passed = 0;
    let mut pvals = Vec::new();
    for r in 0..reps {
        let mut rng = rng_from_seed(derive_seed(2, "c2-data", r));
        let study = self_consistent_study(50, 150, &mut rng).standardized();
        let cfg = ChainConfig { iters: 2000, burn_in: 1000, thin: 10, seed: derive_seed(2, "c2-chain", r), ..Default::default() };
        let chain = run_chain(&study, &cfg).unwrap();
        let u = compute_u(chain.draws.last().unwrap(), &study, &mut rng).unwrap();
        let p = ks_uniform(&u).unwrap().p_value;
        pvals.push(p);
        if p > 0.01 {
            passed += 1;
        }
    }
    let share = passed as f64 / reps as f64;
    verdict("C2", share >= 0.95, format!("KS p > 0.01 in {passed}/{reps} replicates, median p {:.3}", quantile(&pvals, 0.5)));
}

#[test]
fn c3_importance_resampling_beats_random() {
    let reps = 50;
    let cfg = PipelineConfig {
        chain: ChainConfig { iters: 2000, burn_in: 500, thin: 5, ..Default::default() },
        mode: OutcomeMode::None,
        compare_random: true,
        equivalence: EquivalenceConfig::default(),
        ..Default::default()
    };
    let mut is_auc = Vec::new();
    let mut below = 0;
    for r in 0..reps {
        let spec = ScenarioSpec { kind: ScenarioKind::Cam, n1: 100, p: 10, seed: derive_seed(3, "c3", r), ..Default::default() };
        let sim = camsynth::simgen::generate(&spec).unwrap();
        let out = run_pipeline(&sim.study, &cfg, derive_seed(3, "c3-pipeline", r)).unwrap();
        let a = out.equivalence.unwrap().auc;
        let b = out.random_equivalence.unwrap().auc;
        is_auc.push(a);
        if a < b {
            below += 1;
        }
    }
    let med = quantile(&is_auc, 0.5);
    let share = below as f64 / reps as f64;
    verdict("C3", med < 0.65 && share >= 0.9, format!("median IS AUC {med:.3}, IS below random in {below}/{reps}"));
}

#[test]
fn c4_power_in_cam_cell() {
    let reps = 50;
    let cell = ScenarioSpec { kind: ScenarioKind::Cam, n1: 50, p: 10, delta: 3.0, ..Default::default() };
    let cfg = PipelineConfig { chain: ChainConfig { iters: 2000, burn_in: 500, thin: 5, ..Default::default() }, ..Default::default() };
    let out = run_power(&cell, reps, reps, &cfg, &[Method::CaPpmx, Method::IsLm], 4).unwrap();
    let band = 3.0 * (0.05f64 * 0.95 / reps as f64).sqrt();
    let mut ok = true;
    let mut detail = Vec::new();
    for row in &out.rows {
        let need = if row.method == Method::CaPpmx { 0.85 } else { 0.95 };
        ok &= row.power >= need && (row.null_rejection - 0.05).abs() <= band;
        detail.push(format!("{} power {:.2} null {:.3}", row.method.label(), row.power, row.null_rejection));
    }
    verdict("C4", ok && out.rows.len() == 2, detail.join(", "));
}

#[test]
fn c5_survival_pipeline() {
    let reps = 20;
    let cfg = PipelineConfig {
        chain: ChainConfig { iters: 2000, burn_in: 500, thin: 5, ..Default::default() },
        mode: OutcomeMode::Survival,
        validate: false,
        grid_points: 50,
        ..Default::default()
    };
    let (mut p0, mut p1, mut logrank0) = (Vec::new(), Vec::new(), Vec::new());
    for r in 0..reps {
        let mut rng = rng_from_seed(derive_seed(5, "c5", r));
        let reg = gen_registry(&RegistrySpec::default(), &mut rng).unwrap();
        let h0 = gen_selection(&reg, SelectionMode::Interaction, 49, None, &mut rng).unwrap().study;
        let mut h1 = h0.clone();
        h1.treatment = hr_transform_dataset(&h0.treatment, 0.6).unwrap();
        let out0 = run_pipeline(&h0, &cfg, derive_seed(5, "c5-h0", r)).unwrap();
        let out1 = run_pipeline(&h1, &cfg, derive_seed(5, "c5-h1", r)).unwrap();
        p0.push(out0.effect.unwrap().prob_hr_below.unwrap());
        p1.push(out1.effect.unwrap().prob_hr_below.unwrap());
        logrank0.push(out0.is_km.unwrap().logrank.p_value);
    }
    let (m0, m1) = (quantile(&p0, 0.5), quantile(&p1, 0.5));
    let ks = ks_uniform(&logrank0).unwrap().p_value;
    verdict("C5", m0 <= 0.25 && m1 >= 0.8 && ks > 0.01, format!("median P(HR<0.6) H0 {m0:.3}, H1 {m1:.3}; logrank KS p {ks:.3}"));
}

#[test]
fn c6_sampler_correctness() {
    let schema = CovariateSchema::new(vec![Column::continuous("a"), Column::categorical("g", 2)]).unwrap();
    let mut rng = rng_from_seed(6);
    let mut make = |n: usize| {
        let x: Vec<Vec<Cell>> = (0..n)
            .map(|i| {
                let g = i % 2;
                let a = if i % 7 == 3 { Cell::Missing } else { Cell::Value(if g == 0 { -1.5 } else { 1.5 } + 0.4 * std_normal(&mut rng)) };
                vec![a, Cell::Level(g as u32)]
            })
            .collect();
        let y: Vec<CensoredOutcome> = (0..n)
            .map(|i| {
                let v = (i % 2) as f64 + std_normal(&mut rng);
                if i % 5 == 0 { CensoredOutcome::right_censored(v - 0.5) } else { CensoredOutcome::observed(v) }
            })
            .collect();
        (x, y)
    };
    let (x1, y1) = make(10);
    let (x2, y2) = make(25);
    let study = study_from(x1, x2, &schema, Some(y1), Some(y2));
    let cfg = ChainConfig { k: 6, iters: 100_000, burn_in: 1000, thin: 500, audit_every: 1, rebuild_every: 1000, seed: 66, ..Default::default() };
    // The chain aborts with an error on the first failed audit.
    let stress = run_chain(&study, &cfg);
    let audits = stress.as_ref().map(|c| c.diagnostics.counters.audits).unwrap_or(0);
    let stress_ok = stress.is_ok() && audits == 100_000 && stress.as_ref().unwrap().draws.iter().all(|d| d.check_invariants().is_ok());

    let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1e-3);
    let h = 1e-5;
    let r = ResponseHyper::default();
    let mut worst: f64 = 0.0;
    let mut g = [0.0; 2];
    let mut scratch = [0.0; 2];
    for _ in 0..20 {
        let stats: Vec<ContStat<f64>> = (0..rng.random_range(1..5))
            .map(|_| ContStat::from_values(&(0..rng.random_range(1..12)).map(|_| 3.0 + 1.5 * std_normal(&mut rng)).collect::<Vec<_>>()))
            .collect();
        let (mu0, bt) = (3.0 + std_normal(&mut rng), 1.5 + 0.5 * std_normal(&mut rng));
        hyper_log_post(mu0, bt, &stats, &r, 3.0, &mut g);
        let fd_mu = (hyper_log_post(mu0 + h, bt, &stats, &r, 3.0, &mut scratch) - hyper_log_post(mu0 - h, bt, &stats, &r, 3.0, &mut scratch)) / (2.0 * h);
        let fd_b = (hyper_log_post(mu0, bt + h, &stats, &r, 3.0, &mut scratch) - hyper_log_post(mu0, bt - h, &stats, &r, 3.0, &mut scratch)) / (2.0 * h);
        worst = worst.max(rel(g[0], fd_mu)).max(rel(g[1], fd_b));

        let counts: Vec<usize> = (0..rng.random_range(1..8)).map(|_| rng.random_range(1..60)).collect();
        let total = counts.iter().sum();
        let kdim = rng.random_range(counts.len()..=15) as f64;
        let u = 2.0 * std_normal(&mut rng);
        let mut ga = [0.0];
        let mut sa = [0.0];
        alpha_log_post(u, &counts, total, kdim, r.mu_alpha, r.s2_alpha, &mut ga);
        let fd = (alpha_log_post(u + h, &counts, total, kdim, r.mu_alpha, r.s2_alpha, &mut sa) - alpha_log_post(u - h, &counts, total, kdim, r.mu_alpha, r.s2_alpha, &mut sa)) / (2.0 * h);
        worst = worst.max(rel(ga[0], fd));
    }

    let short = ChainConfig { iters: 400, burn_in: 100, thin: 3, audit_every: 100, ..cfg };
    let a = serde_json::to_vec(&run_chain(&study, &short).unwrap()).unwrap();
    let b = serde_json::to_vec(&run_chain(&study, &short).unwrap()).unwrap();
    let identical = a == b;
    verdict(
        "C6",
        stress_ok && worst < 1e-4 && identical,
        format!("{audits} audited sweeps clean: {stress_ok}; worst gradient rel. error {worst:.1e}; identical chains: {identical}"),
    );
}

#[test]
fn c7_classical_baselines() {
    let mut ok = true;
    let eq = |a: f64, b: f64| (a - b).abs() < 1e-15;
    let km = km_estimate(&[1.0f64, 2.0, 3.0], &[true, false, true]).unwrap();
    ok &= eq(km.at(1.0), 2.0 / 3.0) && eq(km.at(2.5), 2.0 / 3.0) && km.at(3.0) == 0.0;
    let all = km_estimate(&[1.0f64, 2.0, 3.0], &[true; 3]).unwrap();
    ok &= all.survival.iter().zip([2.0 / 3.0, 1.0 / 3.0, 0.0]).all(|(&a, b)| eq(a, b));
    let none = km_estimate(&[1.0f64, 2.0, 3.0], &[false; 3]).unwrap();
    ok &= none.survival.iter().all(|&s| s == 1.0);
    let same = logrank_test(&[true, true, true, false, false, false], &[3.0f64, 5.0, 8.0, 3.0, 5.0, 8.0], &[true; 6]).unwrap();
    ok &= same.statistic.abs() < 1e-14 && (same.p_value - 1.0).abs() < 1e-12;
    let hand = ok;

    let mut rng = rng_from_seed(7);
    let mut worst: f64 = 0.0;
    for hr in [1.0, 1.0, 0.8, 0.6, 0.5, 1.5, 0.7, 1.0] {
        let n = 40;
        let mut group: Vec<bool> = (0..n).map(|i| i < n / 2).collect();
        let (mut times, mut event) = (Vec::new(), Vec::new());
        for &g in &group {
            let t: f64 = -rng.random::<f64>().ln() / if g { hr } else { 1.0 };
            let c: f64 = rng.random_range(0.5..4.0);
            times.push(t.min(c));
            event.push(t <= c);
        }
        let obs = logrank_test(&group, &times, &event).unwrap();
        let b = 20_000;
        let mut exceed = 0;
        for _ in 0..b {
            group.shuffle(&mut rng);
            if logrank_test(&group, &times, &event).unwrap().statistic >= obs.statistic - 1e-12 {
                exceed += 1;
            }
        }
        worst = worst.max((exceed as f64 / b as f64 - obs.p_value).abs());
    }
    verdict("C7", hand && worst < 0.02, format!("hand examples exact: {hand}; worst permutation gap {worst:.4}"));
}

#[test]
fn c8_multi_historical_power_grows_with_n1() {
    let cfg = PipelineConfig { chain: ChainConfig { iters: 1500, burn_in: 500, thin: 5, ..Default::default() }, ..Default::default() };
    let mut power = Vec::new();
    for n1 in [50, 100, 150] {
        let cell = ScenarioSpec { kind: ScenarioKind::MultiHistorical, n1, p: 10, k: 4, delta: 3.0, ..Default::default() };
        let out = run_power(&cell, 40, 30, &cfg, &[Method::CaPpmx], derive_seed(8, "c8", n1 as u64)).unwrap();
        power.push(out.rows[0].power);
    }
    let monotone = power.windows(2).all(|w| w[1] >= w[0]);
    verdict("C8", monotone && power.iter().all(|p| p.is_finite()), format!("CA-PPMx power at n1 = 50, 100, 150: {power:?}"));
}
