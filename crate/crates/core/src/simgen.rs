//! Simulation truths: CAM and MIX covariate mixtures, selection out of a registry,
//! linear outcomes, multiple historical sources and hazard-ratio time scaling.

use rand::seq::index::sample as sample_without_replacement;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{merge_historical, Arm, Cell, CensoredOutcome, Column, ColumnKind, CovariateSchema, DataError, MixedDataset, StudyData};
use crate::rng::{rng_from_seed, std_normal};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Spec(String),
    #[error("not enough rows: need {need}, have {have}")]
    InsufficientRows { need: usize, have: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Cam,
    Mix,
    Interaction,
    Oracle,
    MultiHistorical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    pub n1: usize,
    /// RWD size; 6·n1 for CAM/MIX, 3·n1 per source for multiple sources, and the
    /// unselected remainder of the registry for the selection scenarios.
    pub n2: Option<usize>,
    pub p: usize,
    pub delta: f64,
    /// Outcome coefficients on the numeric encoding; all ones when absent.
    pub beta: Option<Vec<f64>>,
    pub sigma_tilde: f64,
    /// Mixture size for MIX and multiple sources.
    pub k: usize,
    pub sigma2: f64,
    pub registry_size: usize,
    pub seed: u64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            kind: ScenarioKind::Cam,
            n1: 50,
            n2: None,
            p: 10,
            delta: 0.0,
            beta: None,
            sigma_tilde: 1.0,
            k: 4,
            sigma2: 0.5,
            registry_size: 339,
            seed: 0,
        }
    }
}

impl ScenarioSpec {
    pub fn n2(&self) -> usize {
        self.n2.unwrap_or(match self.kind {
            ScenarioKind::MultiHistorical => 3 * self.n1,
            _ => 6 * self.n1,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimDiagnostics {
    /// True mixture component of every row, per arm (empty when not applicable).
    pub components: [Vec<usize>; 2],
    /// Rows whose selection score was negative and got probability zero.
    pub clamped: usize,
    /// Coefficient redraws needed to make selection feasible.
    pub redraws: usize,
    pub weights: [Vec<f64>; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulated {
    pub study: StudyData,
    pub diagnostics: SimDiagnostics,
}

fn gauss<R: Rng + ?Sized>(mean: f64, var: f64, rng: &mut R) -> f64 {
    mean + var.sqrt() * std_normal(rng)
}

fn categorical<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random::<f64>() * p.iter().sum::<f64>();
    let mut acc = 0.0;
    for (j, &w) in p.iter().enumerate() {
        acc += w;
        if u < acc {
            return j;
        }
    }
    p.len() - 1
}

fn continuous_schema(p: usize) -> CovariateSchema {
    CovariateSchema::new((1..=p).map(|j| Column::continuous(format!("x{j}"))).collect()).expect("distinct names")
}

/// First p−3 columns continuous, last three binary; the RWD is a two-component mixture
/// whose rare component matches the trial population.
pub fn gen_cam<R: Rng + ?Sized>(spec: &ScenarioSpec, rng: &mut R) -> Result<Simulated, SimError> {
    if spec.p < 4 {
        return Err(SimError::Spec(format!("CAM needs p >= 4, got {}", spec.p)));
    }
    let q = spec.p - 3;
    let mut cols: Vec<Column> = (1..=q).map(|j| Column::continuous(format!("x{j}"))).collect();
    cols.extend((1..=3).map(|j| Column::categorical(format!("b{j}"), 2)));
    let schema = CovariateSchema::new(cols)?;
    let mu1: Vec<f64> = (0..q).map(|_| gauss(1.0, spec.sigma2, rng)).collect();
    let rho = [0.85, 0.65];
    let pi = [1.0 / 7.0, 6.0 / 7.0];
    let row = |comp: usize, rng: &mut R| -> Vec<Cell> {
        let mut r: Vec<Cell> = (0..q).map(|j| Cell::Value(gauss(if comp == 0 { mu1[j] } else { 0.0 }, spec.sigma2, rng))).collect();
        r.extend((0..3).map(|_| Cell::Level(rng.random_bool(rho[comp]) as u32)));
        r
    };
    let c1 = vec![0; spec.n1];
    let c2: Vec<usize> = (0..spec.n2()).map(|_| categorical(&pi, rng)).collect();
    let x1 = c1.iter().map(|&c| row(c, rng)).collect();
    let x2 = c2.iter().map(|&c| row(c, rng)).collect();
    let study = StudyData::new(
        MixedDataset::new(Arm::Treatment, schema.clone(), x1, None, "treatment")?,
        MixedDataset::new(Arm::Rwd, schema, x2, None, "rwd")?,
    )?;
    Ok(Simulated { study, diagnostics: SimDiagnostics { components: [c1, c2], weights: [vec![1.0, 0.0], pi.to_vec()], ..Default::default() } })
}

/// Shared atom j (0-based, j < k−1): value 2 at coordinates 2j+2 and 2j+3 (0-based).
fn shared_atom(j: usize, p: usize) -> Vec<f64> {
    let mut m = vec![0.0; p];
    m[2 * j + 2] = 2.0;
    m[2 * j + 3] = 2.0;
    m
}

fn srswor_weights<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Vec<f64> {
    let w: Vec<f64> = sample_without_replacement(rng, 7, k).into_iter().map(|i| (i + 1) as f64).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

/// Atoms for MIX: arm-specific last atom, shared others.
pub fn mix_atoms(k: usize, p: usize) -> Result<[Vec<Vec<f64>>; 2], SimError> {
    if k < 2 || p < 2 * k + 2 {
        return Err(SimError::Spec(format!("MIX layout needs k >= 2 and p >= 2k+2, got k={k}, p={p}")));
    }
    let shared: Vec<Vec<f64>> = (0..k - 1).map(|j| shared_atom(j, p)).collect();
    let mut a1 = shared.clone();
    let mut last1 = vec![0.0; p];
    for c in [0, 2, 4] {
        last1[c] = 1.5;
    }
    a1.push(last1);
    let mut a2 = shared;
    a2.push(shared_atom(k - 1, p));
    Ok([a1, a2])
}

fn mixture_rows<R: Rng + ?Sized>(atoms: &[Vec<f64>], pi: &[f64], n: usize, var: f64, rng: &mut R) -> (Vec<Vec<Cell>>, Vec<usize>) {
    let labels: Vec<usize> = (0..n).map(|_| categorical(pi, rng)).collect();
    let rows = labels.iter().map(|&c| atoms[c].iter().map(|&m| Cell::Value(gauss(m, var, rng))).collect()).collect();
    (rows, labels)
}

pub fn gen_mix<R: Rng + ?Sized>(spec: &ScenarioSpec, rng: &mut R) -> Result<Simulated, SimError> {
    let atoms = mix_atoms(spec.k, spec.p)?;
    let schema = continuous_schema(spec.p);
    let w1 = srswor_weights(spec.k, rng);
    let w2 = srswor_weights(spec.k, rng);
    let (x1, c1) = mixture_rows(&atoms[0], &w1, spec.n1, spec.sigma2, rng);
    let (x2, c2) = mixture_rows(&atoms[1], &w2, spec.n2(), spec.sigma2, rng);
    let study = StudyData::new(
        MixedDataset::new(Arm::Treatment, schema.clone(), x1, None, "treatment")?,
        MixedDataset::new(Arm::Rwd, schema, x2, None, "rwd")?,
    )?;
    Ok(Simulated { study, diagnostics: SimDiagnostics { components: [c1, c2], weights: [w1, w2], ..Default::default() } })
}

/// Trial arm on all k atoms; source A on atoms 1..k−1, source B on atoms 2..k, merged as the RWD.
pub fn gen_multi_historical<R: Rng + ?Sized>(spec: &ScenarioSpec, rng: &mut R) -> Result<Simulated, SimError> {
    let k = spec.k;
    if k < 3 || spec.p < 2 * k + 2 {
        return Err(SimError::Spec(format!("multiple sources need k >= 3 and p >= 2k+2, got k={k}, p={}", spec.p)));
    }
    let atoms: Vec<Vec<f64>> = (0..k).map(|j| shared_atom(j, spec.p)).collect();
    let schema = continuous_schema(spec.p);
    let n_src = spec.n2();
    let w1 = srswor_weights(k, rng);
    let wa = srswor_weights(k - 1, rng);
    let wb = srswor_weights(k - 1, rng);
    let (x1, c1) = mixture_rows(&atoms, &w1, spec.n1, spec.sigma2, rng);
    let (xa, ca) = mixture_rows(&atoms[..k - 1], &wa, n_src, spec.sigma2, rng);
    let (xb, cb) = mixture_rows(&atoms[1..], &wb, n_src, spec.sigma2, rng);
    let a = MixedDataset::new(Arm::Rwd, schema.clone(), xa, None, "source_a")?;
    let b = MixedDataset::new(Arm::Rwd, schema.clone(), xb, None, "source_b")?;
    let rwd = merge_historical(&[a, b])?;
    let mut c2 = ca;
    c2.extend(cb.into_iter().map(|c| c + 1));
    let mut w2 = vec![0.0; k];
    for j in 0..k - 1 {
        w2[j] += 0.5 * wa[j];
        w2[j + 1] += 0.5 * wb[j];
    }
    let study = StudyData::new(MixedDataset::new(Arm::Treatment, schema, x1, None, "treatment")?, rwd)?;
    Ok(Simulated { study, diagnostics: SimDiagnostics { components: [c1, c2], weights: [w1, w2], ..Default::default() } })
}

/// Numeric encoding used by the outcome model: continuous as is, binary as 0/1, other
/// categoricals one-hot without the first level; missing cells encode as zeros.
pub fn encode_numeric(schema: &CovariateSchema, row: &[Cell]) -> Vec<f64> {
    let mut out = Vec::new();
    for (col, cell) in schema.columns().iter().zip(row) {
        match col.kind {
            ColumnKind::Continuous => out.push(if let Cell::Value(v) = cell { *v } else { 0.0 }),
            ColumnKind::Categorical { num_levels: 2 } => out.push(if let Cell::Level(l) = cell { *l as f64 } else { 0.0 }),
            ColumnKind::Categorical { num_levels } => {
                for lvl in 1..num_levels {
                    out.push((*cell == Cell::Level(lvl)) as u32 as f64);
                }
            }
        }
    }
    out
}

pub fn numeric_dim(schema: &CovariateSchema) -> usize {
    schema
        .columns()
        .iter()
        .map(|c| match c.kind {
            ColumnKind::Continuous | ColumnKind::Categorical { num_levels: 2 } => 1,
            ColumnKind::Categorical { num_levels } => num_levels as usize - 1,
        })
        .sum()
}

/// y = δ·[trial] + xᵀβ + ε with ε ~ N(0, σ̃²), written into both arms as observed outcomes.
pub fn gen_outcomes<R: Rng + ?Sized>(study: &StudyData, delta: f64, beta: Option<&[f64]>, sigma_tilde: f64, rng: &mut R) -> Result<StudyData, SimError> {
    let dim = numeric_dim(study.schema());
    let ones = vec![1.0; dim];
    let beta = beta.unwrap_or(&ones);
    if beta.len() != dim {
        return Err(SimError::Dimension(format!("beta has {} entries, encoding has {dim}", beta.len())));
    }
    let mut out = study.clone();
    for (ds, shift) in [(&mut out.treatment, delta), (&mut out.rwd, 0.0)] {
        let ys = ds
            .rows
            .iter()
            .map(|r| {
                let lin: f64 = encode_numeric(&ds.schema, r).iter().zip(beta).map(|(x, b)| x * b).sum();
                CensoredOutcome::observed(shift + lin + sigma_tilde * std_normal(rng))
            })
            .collect();
        ds.outcomes = Some(ys);
    }
    Ok(out)
}

const REGISTRY_COLUMNS: [(&str, u32); 11] = [
    ("age", 2),
    ("kps", 3),
    ("rt_dose", 2),
    ("soc", 2),
    ("ct", 2),
    ("mgmt", 3),
    ("atrx", 2),
    ("gender", 2),
    ("eor", 3),
    ("grade", 2),
    ("surgery_reason", 2),
];

/// Level probabilities of the registry covariates for each of three latent patient profiles.
fn registry_profiles() -> [[&'static [f64]; 11]; 3] {
    [
        [&[0.7, 0.3], &[0.1, 0.3, 0.6], &[0.2, 0.8], &[0.15, 0.85], &[0.6, 0.4], &[0.4, 0.4, 0.2], &[0.8, 0.2], &[0.45, 0.55], &[0.6, 0.3, 0.1], &[0.9, 0.1], &[0.85, 0.15]],
        [&[0.3, 0.7], &[0.3, 0.5, 0.2], &[0.4, 0.6], &[0.35, 0.65], &[0.85, 0.15], &[0.3, 0.5, 0.2], &[0.9, 0.1], &[0.4, 0.6], &[0.35, 0.5, 0.15], &[0.95, 0.05], &[0.7, 0.3]],
        [&[0.15, 0.85], &[0.6, 0.3, 0.1], &[0.7, 0.3], &[0.7, 0.3], &[0.95, 0.05], &[0.2, 0.5, 0.3], &[0.95, 0.05], &[0.35, 0.65], &[0.2, 0.4, 0.4], &[0.97, 0.03], &[0.4, 0.6]],
    ]
}

/// Effects on log overall survival (weeks) per covariate level.
fn registry_log_effects(row: &[Cell]) -> f64 {
    let lvl = |j: usize| if let Cell::Level(l) = row[j] { Some(l) } else { None };
    let mut eta = 0.0;
    if lvl(0) == Some(1) {
        eta -= 0.25;
    }
    eta += match lvl(1) {
        Some(0) => -0.3,
        Some(2) => 0.2,
        _ => 0.0,
    };
    if lvl(3) == Some(1) {
        eta += 0.25;
    }
    eta += match lvl(5) {
        Some(0) => 0.3,
        Some(1) => -0.1,
        _ => 0.0,
    };
    eta += match lvl(8) {
        Some(0) => 0.15,
        Some(2) => -0.15,
        _ => 0.0,
    };
    if lvl(9) == Some(1) {
        eta += 0.4;
    }
    if lvl(10) == Some(1) {
        eta -= 0.2;
    }
    eta
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegistrySpec {
    pub size: usize,
    /// Median overall survival in weeks of a reference patient.
    pub median_weeks: f64,
    /// Residual SD of log survival.
    pub log_sd: f64,
    pub missing_rate: f64,
    /// Administrative censoring uniform on this window (weeks).
    pub censor_window: (f64, f64),
}

impl Default for RegistrySpec {
    fn default() -> Self {
        Self { size: 339, median_weeks: 60.0, log_sd: 0.45, missing_rate: 0.03, censor_window: (80.0, 400.0) }
    }
}

pub fn registry_schema() -> CovariateSchema {
    CovariateSchema::new(REGISTRY_COLUMNS.iter().map(|&(n, l)| Column::categorical(n, l)).collect()).expect("distinct names")
}

/// Synthetic glioblastoma-like registry: eleven categorical covariates drawn from a latent
/// three-profile mixture, lognormal overall survival with administrative censoring. Outcomes
/// are on the log-week scale.
pub fn gen_registry<R: Rng + ?Sized>(spec: &RegistrySpec, rng: &mut R) -> Result<MixedDataset, SimError> {
    let profiles = registry_profiles();
    let weights = [0.35, 0.4, 0.25];
    let mut rows = Vec::with_capacity(spec.size);
    let mut outcomes = Vec::with_capacity(spec.size);
    for _ in 0..spec.size {
        let g = categorical(&weights, rng);
        let full: Vec<Cell> = profiles[g].iter().map(|p| Cell::Level(categorical(p, rng) as u32)).collect();
        let log_t = spec.median_weeks.ln() + registry_log_effects(&full) + spec.log_sd * std_normal(rng);
        let c = rng.random_range(spec.censor_window.0..spec.censor_window.1);
        outcomes.push(if log_t.exp() <= c { CensoredOutcome::observed(log_t) } else { CensoredOutcome::right_censored(c.ln()) });
        rows.push(full.into_iter().map(|cell| if rng.random_bool(spec.missing_rate) { Cell::Missing } else { cell }).collect());
    }
    Ok(MixedDataset::new(Arm::Rwd, registry_schema(), rows, Some(outcomes), "registry")?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    /// Main effects plus the (gender, age) and (rt_dose, age) products.
    Interaction,
    /// Main effects only.
    Oracle,
}

/// Binary design for the selection score: binary columns as 0/1, other categoricals one-hot
/// over all levels, continuous as is, plus interaction products when requested.
pub fn selection_design(schema: &CovariateSchema, rows: &[Vec<Cell>], mode: SelectionMode) -> Vec<Vec<f64>> {
    let pairs: Vec<(usize, usize)> = match mode {
        SelectionMode::Oracle => vec![],
        SelectionMode::Interaction => [("gender", "age"), ("rt_dose", "age")]
            .iter()
            .filter_map(|(a, b)| Some((schema.index_of(a)?, schema.index_of(b)?)))
            .collect(),
    };
    rows.iter()
        .map(|row| {
            let mut x = Vec::new();
            for (col, cell) in schema.columns().iter().zip(row) {
                match col.kind {
                    ColumnKind::Continuous => x.push(if let Cell::Value(v) = cell { *v } else { 0.0 }),
                    ColumnKind::Categorical { num_levels: 2 } => x.push(if let Cell::Level(l) = cell { *l as f64 } else { 0.0 }),
                    ColumnKind::Categorical { num_levels } => x.extend((0..num_levels).map(|l| (*cell == Cell::Level(l)) as u32 as f64)),
                }
            }
            for &(a, b) in &pairs {
                let v = |j: usize| if let Cell::Level(l) = row[j] { l as f64 } else { 0.0 };
                x.push(v(a) * v(b));
            }
            x
        })
        .collect()
}

/// e = s/(1+s) with s = xᵀb + 0.8, and zero when s < 0. Returns the probabilities and the clamp count.
pub fn selection_probabilities(design: &[Vec<f64>], b: &[f64]) -> (Vec<f64>, usize) {
    let mut clamped = 0;
    let e = design
        .iter()
        .map(|x| {
            let s = x.iter().zip(b).map(|(x, b)| x * b).sum::<f64>() + 0.8;
            if s < 0.0 {
                clamped += 1;
                0.0
            } else {
                s / (1.0 + s)
            }
        })
        .collect();
    (e, clamped)
}

/// Weighted sampling without replacement (sequential draws proportional to the weights).
fn weighted_without_replacement<R: Rng + ?Sized>(w: &[f64], n: usize, rng: &mut R) -> Option<Vec<usize>> {
    if w.iter().filter(|&&x| x > 0.0).count() < n {
        return None;
    }
    let mut w = w.to_vec();
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let j = categorical(&w, rng);
        out.push(j);
        w[j] = 0.0;
    }
    Some(out)
}

/// Splits a registry into a trial arm of size `n1`, selected with probability ∝ e(x), and an
/// RWD arm. Without `n2` the RWD is the unselected remainder; with `n2` it is resampled with
/// replacement proportionally to 1 − e(x). Coefficients b are drawn from {−1, 0.75} with
/// replacement and redrawn while fewer than `n1` rows have positive probability.
pub fn gen_selection<R: Rng + ?Sized>(
    registry: &MixedDataset,
    mode: SelectionMode,
    n1: usize,
    n2: Option<usize>,
    rng: &mut R,
) -> Result<Simulated, SimError> {
    if registry.len() <= n1 {
        return Err(SimError::InsufficientRows { need: n1 + 1, have: registry.len() });
    }
    let design = selection_design(&registry.schema, &registry.rows, mode);
    let dim = design[0].len();
    const MAX_REDRAWS: usize = 100;
    for redraws in 0..MAX_REDRAWS {
        let b: Vec<f64> = (0..dim).map(|_| if rng.random_bool(0.5) { -1.0 } else { 0.75 }).collect();
        let (e, clamped) = selection_probabilities(&design, &b);
        let Some(trial) = weighted_without_replacement(&e, n1, rng) else { continue };
        let rwd_idx: Vec<usize> = match n2 {
            None => {
                let mut taken = vec![false; registry.len()];
                trial.iter().for_each(|&i| taken[i] = true);
                (0..registry.len()).filter(|&i| !taken[i]).collect()
            }
            Some(m) => {
                let w: Vec<f64> = e.iter().map(|x| 1.0 - x).collect();
                (0..m).map(|_| categorical(&w, rng)).collect()
            }
        };
        let mut t = registry.select(&trial);
        t.arm = Arm::Treatment;
        let r = registry.select(&rwd_idx);
        let study = StudyData::new(t, r)?;
        return Ok(Simulated { study, diagnostics: SimDiagnostics { clamped, redraws, ..Default::default() } });
    }
    Err(SimError::InsufficientRows { need: n1, have: 0 })
}

/// Scales event and censoring times by 1/hr (original units).
pub fn hr_transform(times: &[f64], target_hr: f64) -> Result<Vec<f64>, SimError> {
    if !(target_hr > 0.0 && target_hr <= 1.0) {
        return Err(SimError::Spec(format!("target hazard ratio must lie in (0, 1], got {target_hr}")));
    }
    if let Some(t) = times.iter().find(|&&t| !(t > 0.0)) {
        return Err(SimError::Spec(format!("time {t} is not positive")));
    }
    Ok(times.iter().map(|t| t / target_hr).collect())
}

/// The same scaling applied to log-time outcomes of a dataset; censoring status is kept.
pub fn hr_transform_dataset(ds: &MixedDataset, target_hr: f64) -> Result<MixedDataset, SimError> {
    hr_transform(&[1.0], target_hr)?;
    let shift = -target_hr.ln();
    let mut out = ds.clone();
    if let Some(ys) = out.outcomes.as_mut() {
        for o in ys.iter_mut() {
            *o = match o.bounds() {
                None => CensoredOutcome::observed(o.y + shift),
                Some((l, u)) => CensoredOutcome::interval(l + shift, u + shift),
            };
        }
    }
    Ok(out)
}

/// Generates the covariates of a scenario (with continuous outcomes carrying effect δ) from
/// `spec.seed`. The selection scenarios draw a fresh registry first.
pub fn generate(spec: &ScenarioSpec) -> Result<Simulated, SimError> {
    let mut rng = rng_from_seed(spec.seed);
    let mut sim = match spec.kind {
        ScenarioKind::Cam => gen_cam(spec, &mut rng)?,
        ScenarioKind::Mix => gen_mix(spec, &mut rng)?,
        ScenarioKind::MultiHistorical => gen_multi_historical(spec, &mut rng)?,
        ScenarioKind::Interaction | ScenarioKind::Oracle => {
            let reg = gen_registry(&RegistrySpec { size: spec.registry_size, ..Default::default() }, &mut rng)?;
            let mode = if spec.kind == ScenarioKind::Interaction { SelectionMode::Interaction } else { SelectionMode::Oracle };
            gen_selection(&reg, mode, spec.n1, spec.n2, &mut rng)?
        }
    };
    sim.study = gen_outcomes(&sim.study, spec.delta, spec.beta.as_deref(), spec.sigma_tilde, &mut rng)?;
    Ok(sim)
}
