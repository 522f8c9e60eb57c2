//! End-to-end analysis: fit, weights, resampling, equivalence check, model-based and two-step
//! effect estimates, and the replicate harness for power.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{km_estimate, logrank_test, ols_effect, KmCurve, LogrankResult, OlsEffect};
use crate::data::{CensoredOutcome, MixedDataset, OutcomeMode, StudyData};
use crate::effect::{calibrated_test, posterior_effect, time_grid, EffectMode, EffectSummary, MIN_NULL_REPLICATES};
use crate::equivalence::{cv_classifier_auc, EquivalenceConfig, EquivalenceReport};
use crate::rng::{derive_seed, rng_from_seed};
use crate::sampler::{run_chain, ChainConfig, ChainDiagnostics, PosteriorChain};
use crate::simgen::{generate, ScenarioKind, ScenarioSpec};
use crate::weights::{compute_weights, resample_uniform, ImportanceWeightSet, WeightDiagnostics};

#[derive(Debug, Error)]
#[error("stage `{stage}` failed: {message}")]
pub struct StageError {
    pub stage: &'static str,
    pub message: String,
}

fn stage<E: std::fmt::Display>(stage: &'static str) -> impl Fn(E) -> StageError {
    move |e| StageError { stage, message: e.to_string() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub chain: ChainConfig,
    pub mode: OutcomeMode,
    /// Synthetic-control size as a multiple of n1.
    pub resample_ratio: f64,
    pub equivalence: EquivalenceConfig,
    pub validate: bool,
    /// Also score a uniformly resampled control as a comparator.
    pub compare_random: bool,
    /// Standardize continuous covariates on the pooled arms before fitting.
    pub standardize: bool,
    /// Let outcomes inform the partition used for the importance weights.
    pub weights_use_outcomes: bool,
    pub t_star: f64,
    pub r_star: f64,
    pub grid_points: usize,
    pub level: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            chain: ChainConfig::default(),
            mode: OutcomeMode::Continuous,
            resample_ratio: 1.0,
            equivalence: EquivalenceConfig::default(),
            validate: true,
            compare_random: false,
            standardize: true,
            weights_use_outcomes: false,
            t_star: 50.0,
            r_star: 0.6,
            grid_points: 200,
            level: 0.95,
        }
    }
}

impl PipelineConfig {
    pub fn effect_mode(&self) -> EffectMode {
        match self.mode {
            OutcomeMode::Survival => EffectMode::Survival { t_star: self.t_star, r_star: self.r_star },
            _ => EffectMode::Continuous,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoStepSurvival {
    pub logrank: LogrankResult<f64>,
    pub km_treatment: KmCurve<f64>,
    pub km_control: KmCurve<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineOutput {
    pub weights: ImportanceWeightSet,
    pub weight_diagnostics: WeightDiagnostics,
    pub resampled: Vec<usize>,
    pub synthetic_control: MixedDataset,
    pub equivalence: Option<EquivalenceReport>,
    pub random_equivalence: Option<EquivalenceReport>,
    /// Model-based (CA-PPMx) effect.
    pub effect: Option<EffectSummary>,
    /// Two-step least squares on the resampled population (IS-LM).
    pub is_lm: Option<OlsEffect<f64>>,
    /// Two-step Kaplan–Meier / logrank on the resampled population (IS-KM).
    pub is_km: Option<TwoStepSurvival>,
    pub weight_chain: ChainDiagnostics,
    pub outcome_chain: Option<ChainDiagnostics>,
}

/// Seeds for each stage, split from one master seed.
pub fn stage_seed(master: u64, name: &str) -> u64 {
    derive_seed(master, name, 0)
}

pub fn prepare(study: &StudyData, standardize: bool) -> StudyData {
    if standardize {
        study.standardized()
    } else {
        study.clone()
    }
}

/// Covariate chain for the weights (outcomes dropped unless requested).
pub fn fit_weight_chain(study: &StudyData, cfg: &PipelineConfig, master: u64) -> Result<PosteriorChain, StageError> {
    let data = if cfg.weights_use_outcomes { study.clone() } else { study.without_outcomes() };
    let chain_cfg = ChainConfig { seed: stage_seed(master, "fit-weights"), ..cfg.chain.clone() };
    run_chain(&data, &chain_cfg).map_err(stage("fit"))
}

pub fn fit_outcome_chain(study: &StudyData, cfg: &PipelineConfig, master: u64) -> Result<PosteriorChain, StageError> {
    let chain_cfg = ChainConfig { seed: stage_seed(master, "fit-outcomes"), ..cfg.chain.clone() };
    run_chain(study, &chain_cfg).map_err(stage("fit"))
}

pub fn resample_size(n1: usize, ratio: f64) -> usize {
    ((n1 as f64 * ratio).round() as usize).max(1)
}

fn observed_times(ys: &[CensoredOutcome]) -> (Vec<f64>, Vec<bool>) {
    ys.iter()
        .map(|o| match o.bounds() {
            None => (o.y.exp(), true),
            Some((l, _)) if l.is_finite() => (l.exp(), false),
            Some((_, u)) => (u.exp(), false),
        })
        .unzip()
}

/// IS-LM: y ~ 1 + z on the trial arm and the resampled control.
pub fn two_step_lm(treatment: &MixedDataset, control: &MixedDataset) -> Result<OlsEffect<f64>, StageError> {
    let (yt, yc) = match (&treatment.outcomes, &control.outcomes) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(StageError { stage: "effect", message: "outcomes missing".into() }),
    };
    let y: Vec<f64> = yt.iter().chain(yc).map(|o| o.y).collect();
    let z: Vec<bool> = (0..y.len()).map(|i| i < yt.len()).collect();
    ols_effect(&y, &z, None).map_err(stage("effect"))
}

/// IS-KM: Kaplan–Meier per arm and the logrank test between them.
pub fn two_step_km(treatment: &MixedDataset, control: &MixedDataset) -> Result<TwoStepSurvival, StageError> {
    let (yt, yc) = match (&treatment.outcomes, &control.outcomes) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(StageError { stage: "effect", message: "outcomes missing".into() }),
    };
    let (tt, et) = observed_times(yt);
    let (tc, ec) = observed_times(yc);
    let km_treatment = km_estimate(&tt, &et).map_err(stage("effect"))?;
    let km_control = km_estimate(&tc, &ec).map_err(stage("effect"))?;
    let times: Vec<f64> = tt.iter().chain(&tc).copied().collect();
    let events: Vec<bool> = et.iter().chain(&ec).copied().collect();
    let group: Vec<bool> = (0..times.len()).map(|i| i < tt.len()).collect();
    let logrank = logrank_test(&group, &times, &events).map_err(stage("effect"))?;
    Ok(TwoStepSurvival { logrank, km_treatment, km_control })
}

/// Largest observed time in original units across both arms.
pub fn max_time(study: &StudyData) -> f64 {
    [&study.treatment, &study.rwd]
        .iter()
        .filter_map(|d| d.outcomes.as_ref())
        .flat_map(|ys| ys.iter().map(|o| o.bounds().map_or(o.y, |(l, u)| if u.is_finite() { u } else { l })))
        .filter(|v| v.is_finite())
        .fold(f64::NEG_INFINITY, f64::max)
        .exp()
}

/// Runs fit → weights → resample → validate → effect on `study` with all randomness from `master`.
pub fn run_pipeline(study: &StudyData, cfg: &PipelineConfig, master: u64) -> Result<PipelineOutput, StageError> {
    let data = prepare(study, cfg.standardize);
    let wchain = fit_weight_chain(&data, cfg, master)?;
    let weights = compute_weights(&wchain.draws, &study.rwd.provenance).map_err(stage("weights"))?;
    let size = resample_size(study.treatment.len(), cfg.resample_ratio);
    let weight_diagnostics = weights.diagnostics(size);
    let mut rng = rng_from_seed(stage_seed(master, "resample"));
    let (resampled, synthetic_control) = weights.resample(&study.rwd, size, &mut rng).map_err(stage("resample"))?;

    let (mut equivalence, mut random_equivalence) = (None, None);
    if cfg.validate {
        let synth_std = data.rwd.select(&resampled);
        equivalence = Some(cv_classifier_auc(&data.treatment, &synth_std, &cfg.equivalence, stage_seed(master, "validate")).map_err(stage("validate"))?);
        if cfg.compare_random {
            let mut r = rng_from_seed(stage_seed(master, "resample-random"));
            let idx = resample_uniform(study.rwd.len(), size, &mut r);
            let rand_std = data.rwd.select(&idx);
            random_equivalence =
                Some(cv_classifier_auc(&data.treatment, &rand_std, &cfg.equivalence, stage_seed(master, "validate-random")).map_err(stage("validate"))?);
        }
    }

    let (mut effect, mut is_lm, mut is_km, mut outcome_chain) = (None, None, None, None);
    if study.has_outcomes() && cfg.mode != OutcomeMode::None {
        let ochain = fit_outcome_chain(&data, cfg, master)?;
        let grid = match cfg.mode {
            OutcomeMode::Survival => time_grid(2.0 * max_time(study), cfg.grid_points),
            _ => vec![],
        };
        effect = Some(posterior_effect(&ochain.draws, cfg.effect_mode(), &grid, cfg.level).map_err(stage("effect"))?);
        outcome_chain = Some(ochain.diagnostics);
        match cfg.mode {
            OutcomeMode::Survival => is_km = Some(two_step_km(&study.treatment, &synthetic_control)?),
            _ => is_lm = Some(two_step_lm(&study.treatment, &synthetic_control)?),
        }
    }
    Ok(PipelineOutput {
        weights,
        weight_diagnostics,
        resampled,
        synthetic_control,
        equivalence,
        random_equivalence,
        effect,
        is_lm,
        is_km,
        weight_chain: wchain.diagnostics,
        outcome_chain,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "CA-PPMx")]
    CaPpmx,
    #[serde(rename = "IS-LM")]
    IsLm,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::CaPpmx => "CA-PPMx",
            Method::IsLm => "IS-LM",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateEstimate {
    pub index: usize,
    pub delta: f64,
    pub ca_ppmx: Option<f64>,
    pub is_lm: Option<f64>,
    pub error: Option<String>,
}

/// Point estimates of one simulated replicate.
pub fn replicate_estimates(spec: &ScenarioSpec, cfg: &PipelineConfig, methods: &[Method], index: usize) -> ReplicateEstimate {
    let mut out = ReplicateEstimate { index, delta: spec.delta, ca_ppmx: None, is_lm: None, error: None };
    let run = || -> Result<(Option<f64>, Option<f64>), StageError> {
        let sim = generate(spec).map_err(stage("simulate"))?;
        let data = prepare(&sim.study, cfg.standardize);
        let master = derive_seed(spec.seed, "analysis", 0);
        let mut ca = None;
        let mut lm = None;
        if methods.contains(&Method::CaPpmx) {
            let ch = fit_outcome_chain(&data, cfg, master)?;
            ca = Some(posterior_effect(&ch.draws, EffectMode::Continuous, &[], cfg.level).map_err(stage("effect"))?.mean);
        }
        if methods.contains(&Method::IsLm) {
            let wch = fit_weight_chain(&data, cfg, master)?;
            let w = compute_weights(&wch.draws, &[]).map_err(stage("weights"))?;
            let mut rng = rng_from_seed(stage_seed(master, "resample"));
            let size = resample_size(sim.study.treatment.len(), cfg.resample_ratio);
            let (_, synth) = w.resample(&sim.study.rwd, size, &mut rng).map_err(stage("resample"))?;
            lm = Some(two_step_lm(&sim.study.treatment, &synth)?.delta);
        }
        Ok((ca, lm))
    };
    match run() {
        Ok((ca, lm)) => {
            out.ca_ppmx = ca;
            out.is_lm = lm;
        }
        Err(e) => out.error = Some(e.to_string()),
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerRow {
    pub scenario: ScenarioKind,
    pub n1: usize,
    pub p: usize,
    pub delta: f64,
    pub method: Method,
    pub power: f64,
    /// Leave-one-out rejection rate of the null replicates.
    pub null_rejection: f64,
    pub null_replicates: usize,
    pub alt_replicates: usize,
    pub lower: f64,
    pub upper: f64,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerOutput {
    pub rows: Vec<PowerRow>,
    pub null: Vec<ReplicateEstimate>,
    pub alternative: Vec<ReplicateEstimate>,
}

/// Null and alternative replicates of one scenario cell, then the calibrated test per method.
/// Replicate `r` uses seed derive(master, "null"|"alt", r).
pub fn run_power(
    cell: &ScenarioSpec,
    null_replicates: usize,
    alt_replicates: usize,
    cfg: &PipelineConfig,
    methods: &[Method],
    master: u64,
) -> Result<PowerOutput, StageError> {
    if null_replicates < MIN_NULL_REPLICATES {
        return Err(StageError { stage: "power", message: format!("need at least {MIN_NULL_REPLICATES} null replicates, got {null_replicates}") });
    }
    let jobs: Vec<(bool, usize)> = (0..null_replicates).map(|r| (true, r)).chain((0..alt_replicates).map(|r| (false, r))).collect();
    let results: Vec<(bool, ReplicateEstimate)> = jobs
        .par_iter()
        .map(|&(is_null, r)| {
            let spec = ScenarioSpec {
                delta: if is_null { 0.0 } else { cell.delta },
                seed: derive_seed(master, if is_null { "null" } else { "alt" }, r as u64),
                ..cell.clone()
            };
            (is_null, replicate_estimates(&spec, cfg, methods, r))
        })
        .collect();
    let (null, alternative): (Vec<_>, Vec<_>) = results.into_iter().partition(|(n, _)| *n);
    let null: Vec<ReplicateEstimate> = null.into_iter().map(|x| x.1).collect();
    let alternative: Vec<ReplicateEstimate> = alternative.into_iter().map(|x| x.1).collect();
    let mut rows = Vec::new();
    for &m in methods {
        let pick = |e: &ReplicateEstimate| match m {
            Method::CaPpmx => e.ca_ppmx,
            Method::IsLm => e.is_lm,
        };
        let nv: Vec<f64> = null.iter().filter_map(pick).filter(|v| v.is_finite()).collect();
        let av: Vec<f64> = alternative.iter().filter_map(pick).filter(|v| v.is_finite()).collect();
        let failed = null.len() + alternative.len() - nv.len() - av.len();
        let note = (failed > 0).then(|| format!("{failed} replicates failed and were skipped"));
        let Ok(t) = calibrated_test(&nv, 0.0) else {
            rows.push(PowerRow {
                scenario: cell.kind,
                n1: cell.n1,
                p: cell.p,
                delta: cell.delta,
                method: m,
                power: f64::NAN,
                null_rejection: f64::NAN,
                null_replicates: nv.len(),
                alt_replicates: av.len(),
                lower: f64::NAN,
                upper: f64::NAN,
                note: Some(format!("infeasible: only {} usable null replicates", nv.len())),
            });
            continue;
        };
        let power = av.iter().filter(|&&v| calibrated_test(&nv, v).map(|t| t.reject).unwrap_or(false)).count() as f64 / av.len().max(1) as f64;
        let loo = (0..nv.len())
            .filter(|&i| {
                let rest: Vec<f64> = nv.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &v)| v).collect();
                calibrated_test(&rest, nv[i]).map(|t| t.reject).unwrap_or(false)
            })
            .count() as f64
            / nv.len() as f64;
        rows.push(PowerRow {
            scenario: cell.kind,
            n1: cell.n1,
            p: cell.p,
            delta: cell.delta,
            method: m,
            power,
            null_rejection: loo,
            null_replicates: nv.len(),
            alt_replicates: av.len(),
            lower: t.lower,
            upper: t.upper,
            note,
        });
    }
    Ok(PowerOutput { rows, null, alternative })
}
