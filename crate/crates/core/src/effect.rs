//! Population-adjusted treatment effects, lognormal-mixture survival and hazard-ratio curves,
//! and the null-calibrated test.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sampler::GibbsState;
use crate::special::{log_sum_exp, norm_ln_pdf, norm_sf};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EffectError {
    #[error("posterior chain holds no draws")]
    EmptyChain,
    #[error("time must be positive, got {0}")]
    NonPositiveTime(f64),
    #[error("calibration needs at least {need} null replicates, got {have}")]
    TooFewNull { need: usize, have: usize },
    #[error("invalid input: {0}")]
    Invalid(String),
}

/// Which arm's cluster parameters enter the π₁-weighted mixture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixtureArm {
    /// f₁: trial-arm parameters.
    Treatment,
    /// f̃₂: control parameters reweighted to the trial population.
    AdjustedControl,
}

impl MixtureArm {
    fn idx(self) -> usize {
        match self {
            MixtureArm::Treatment => 0,
            MixtureArm::AdjustedControl => 1,
        }
    }
}

/// Σⱼ π₁ⱼ (μ₁ⱼ − μ₂ⱼ) over the trial-arm weight support.
pub fn delta_tilde(draw: &GibbsState) -> f64 {
    draw.pi1().iter().enumerate().filter(|(_, &p)| p > 0.0).map(|(j, &p)| p * (draw.mu[0][j] - draw.mu[1][j])).sum()
}

/// Survival at time `t` (original units) of the lognormal mixture on the log-time scale.
pub fn survival_mixture(draw: &GibbsState, arm: MixtureArm, t: f64) -> Result<f64, EffectError> {
    if !(t > 0.0) {
        return Err(EffectError::NonPositiveTime(t));
    }
    let s = arm.idx();
    let lt = t.ln();
    Ok(draw
        .pi1()
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > 0.0)
        .map(|(j, &p)| p * norm_sf((lt - draw.mu[s][j]) / draw.sigma2[s][j].sqrt()))
        .sum())
}

/// Log hazard on the log-time scale: ln f − ln S, both mixtures, computed in log space.
fn ln_hazard(draw: &GibbsState, s: usize, lt: f64) -> f64 {
    let mut lf = Vec::new();
    let mut ls = Vec::new();
    for (j, &p) in draw.pi1().iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        let sd = draw.sigma2[s][j].sqrt();
        let z = (lt - draw.mu[s][j]) / sd;
        lf.push(p.ln() + norm_ln_pdf(z) - sd.ln());
        ls.push(p.ln() + ln_norm_sf(z));
    }
    log_sum_exp(&lf) - log_sum_exp(&ls)
}

/// ln(1 − Φ(z)) that stays finite far into the upper tail.
fn ln_norm_sf(z: f64) -> f64 {
    if z < 30.0 {
        norm_sf(z).ln()
    } else {
        // Mills-ratio expansion.
        let z2 = z * z;
        norm_ln_pdf(z) - z.ln() + (1.0 - 1.0 / z2 + 3.0 / (z2 * z2)).ln()
    }
}

/// HR(t) between f₁ and f̃₂. The 1/t Jacobian cancels, so hazards are taken on the log scale.
/// Returns a non-finite value when the survivals underflow.
pub fn hazard_ratio(draw: &GibbsState, t: f64) -> Result<f64, EffectError> {
    if !(t > 0.0) {
        return Err(EffectError::NonPositiveTime(t));
    }
    let lt = t.ln();
    Ok((ln_hazard(draw, 0, lt) - ln_hazard(draw, 1, lt)).exp())
}

/// Sample quantile by linear interpolation between order statistics (type 7).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    let h = (n - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn quantile(xs: &[f64], q: f64) -> f64 {
    let mut v: Vec<f64> = xs.iter().copied().filter(|x| !x.is_nan()).collect();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, q)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum EffectMode {
    Continuous,
    Survival { t_star: f64, r_star: f64 },
}

impl EffectMode {
    pub fn survival_default() -> Self {
        EffectMode::Survival { t_star: 50.0, r_star: 0.6 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HrPoint {
    pub t: f64,
    pub median: f64,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectSummary {
    pub delta_draws: Vec<f64>,
    pub mean: f64,
    pub sd: f64,
    pub level: f64,
    pub interval: (f64, f64),
    pub hr_curve: Option<Vec<HrPoint>>,
    pub hr_at_t_star: Option<Vec<f64>>,
    pub prob_hr_below: Option<f64>,
    pub mode: EffectMode,
}

/// `points` equispaced times over (0, upper].
pub fn time_grid(upper: f64, points: usize) -> Vec<f64> {
    (1..=points).map(|i| upper * i as f64 / points as f64).collect()
}

/// Per-draw effects and their summaries. In survival mode `grid` holds times in original units.
pub fn posterior_effect(draws: &[GibbsState], mode: EffectMode, grid: &[f64], level: f64) -> Result<EffectSummary, EffectError> {
    if draws.is_empty() {
        return Err(EffectError::EmptyChain);
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(EffectError::Invalid(format!("credible level {level}")));
    }
    let delta_draws: Vec<f64> = draws.par_iter().map(delta_tilde).collect();
    let m = delta_draws.len() as f64;
    let mean = delta_draws.iter().sum::<f64>() / m;
    let sd = if delta_draws.len() > 1 { (delta_draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt() } else { 0.0 };
    let tail = (1.0 - level) / 2.0;
    let interval = (quantile(&delta_draws, tail), quantile(&delta_draws, 1.0 - tail));
    let (mut hr_curve, mut hr_at_t_star, mut prob_hr_below) = (None, None, None);
    if let EffectMode::Survival { t_star, r_star } = mode {
        if grid.iter().any(|&t| !(t > 0.0)) || grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(EffectError::Invalid("time grid must be positive and strictly increasing".into()));
        }
        if !(t_star > 0.0) {
            return Err(EffectError::NonPositiveTime(t_star));
        }
        let curves: Vec<Vec<f64>> = draws.par_iter().map(|d| grid.iter().map(|&t| hazard_ratio(d, t).unwrap_or(f64::NAN)).collect()).collect();
        hr_curve = Some(
            grid.iter()
                .enumerate()
                .map(|(g, &t)| {
                    let col: Vec<f64> = curves.iter().map(|c| c[g]).filter(|v| v.is_finite()).collect();
                    HrPoint { t, median: quantile(&col, 0.5), lo: quantile(&col, tail), hi: quantile(&col, 1.0 - tail) }
                })
                .collect(),
        );
        let at: Vec<f64> = draws.iter().map(|d| hazard_ratio(d, t_star).unwrap_or(f64::NAN)).collect();
        prob_hr_below = Some(at.iter().filter(|&&h| h < r_star).count() as f64 / m);
        hr_at_t_star = Some(at);
    }
    Ok(EffectSummary { delta_draws, mean, sd, level, interval, hr_curve, hr_at_t_star, prob_hr_below, mode })
}

pub const MIN_NULL_REPLICATES: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibratedTest {
    pub lower: f64,
    pub upper: f64,
    pub observed: f64,
    pub reject: bool,
}

/// Rejects when `observed` falls outside the 2.5% and 97.5% quantiles of the null estimates.
pub fn calibrated_test(null: &[f64], observed: f64) -> Result<CalibratedTest, EffectError> {
    let finite: Vec<f64> = null.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.len() < MIN_NULL_REPLICATES {
        return Err(EffectError::TooFewNull { need: MIN_NULL_REPLICATES, have: finite.len() });
    }
    let lower = quantile(&finite, 0.025);
    let upper = quantile(&finite, 0.975);
    Ok(CalibratedTest { lower, upper, observed, reject: !(observed >= lower && observed <= upper) })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn draw(pi1: Vec<f64>, mu1: Vec<f64>, mu2: Vec<f64>, s1: Vec<f64>, s2: Vec<f64>) -> GibbsState {
        let k = pi1.len();
        GibbsState {
            c: [vec![], vec![]],
            y_latent: [vec![], vec![]],
            mu: [mu1, mu2],
            sigma2: [s1, s2],
            pi: [pi1, vec![1.0 / k as f64; k]],
            alpha: [1.0, 1.0],
            mu0: 0.0,
            b0: 1.0,
            n: [vec![0; k], vec![1; k]],
        }
    }

    #[test]
    fn delta_examples() {
        assert!((delta_tilde(&draw(vec![1.0], vec![2.0], vec![0.5], vec![1.0], vec![1.0])) - 1.5).abs() < 1e-15);
        let d = draw(vec![0.25, 0.75], vec![4.0, 1.0], vec![0.0, 1.0], vec![1.0; 2], vec![1.0; 2]);
        assert!((delta_tilde(&d) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn survival_at_median_is_half() {
        let d = draw(vec![1.0], vec![3.0], vec![3.0], vec![0.4], vec![0.4]);
        assert!((survival_mixture(&d, MixtureArm::Treatment, 3f64.exp()).unwrap() - 0.5).abs() < 1e-14);
        assert!(survival_mixture(&d, MixtureArm::Treatment, 1e-12).unwrap() > 1.0 - 1e-12);
        assert!(survival_mixture(&d, MixtureArm::Treatment, 0.0).is_err());
    }

    #[test]
    fn identical_parameters_give_unit_hazard_ratio() {
        let d = draw(vec![0.3, 0.7], vec![1.0, 2.0], vec![1.0, 2.0], vec![0.5, 1.5], vec![0.5, 1.5]);
        for t in time_grid(40.0, 50) {
            assert_eq!(hazard_ratio(&d, t).unwrap(), 1.0);
        }
    }

    #[test]
    fn calibrated_test_examples() {
        let null: Vec<f64> = (0..41).map(|i| i as f64).collect();
        assert!(!calibrated_test(&null, 20.0).unwrap().reject);
        assert!(calibrated_test(&null, 41.0).unwrap().reject);
        assert!(matches!(calibrated_test(&null[..39], 0.0), Err(EffectError::TooFewNull { .. })));
    }

    #[test]
    fn degenerate_chain_has_zero_width_interval() {
        let d = draw(vec![1.0], vec![2.0], vec![0.5], vec![1.0], vec![1.0]);
        let s = posterior_effect(&vec![d; 10], EffectMode::Continuous, &[], 0.95).unwrap();
        assert_eq!(s.interval.0, s.interval.1);
    }
}
