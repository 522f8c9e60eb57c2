//! Posterior U statistics for goodness of fit, uniformity testing and QQ export.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Arm, CensoredOutcome, StudyData};
use crate::sampler::GibbsState;
use crate::special::norm_cdf;

#[derive(Debug, Error)]
pub enum GofError {
    #[error("study has no outcomes")]
    NoOutcomes,
    #[error("draw does not match the data: {0}")]
    Mismatch(String),
    #[error("empty sample")]
    Empty,
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// U for one record given its cluster's normal parameters. Censored records draw
/// U = H(l) + γ (H(u) − H(l)) with γ uniform, which reduces to H(y) as the interval collapses.
pub fn u_value<R: Rng + ?Sized>(o: &CensoredOutcome, mu: f64, sigma: f64, rng: &mut R) -> f64 {
    let h = |y: f64| norm_cdf((y - mu) / sigma);
    match o.bounds() {
        None => h(o.y),
        Some((l, u)) => {
            let (hl, hu) = (h(l), h(u));
            let g: f64 = rng.random();
            (hl + g * (hu - hl)).clamp(0.0, 1.0)
        }
    }
}

/// U values of every record in both arms (trial arm first) under one posterior draw.
pub fn compute_u<R: Rng + ?Sized>(draw: &GibbsState, study: &StudyData, rng: &mut R) -> Result<Vec<f64>, GofError> {
    let mut out = Vec::with_capacity(study.treatment.len() + study.rwd.len());
    for arm in Arm::BOTH {
        let s = arm.idx();
        let ys = study.arm(arm).outcomes.as_ref().ok_or(GofError::NoOutcomes)?;
        if draw.c[s].len() != ys.len() {
            return Err(GofError::Mismatch(format!("{arm} arm has {} records, draw labels {}", ys.len(), draw.c[s].len())));
        }
        for (o, &c) in ys.iter().zip(&draw.c[s]) {
            out.push(u_value(o, draw.mu[s][c], draw.sigma2[s][c].sqrt(), rng));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
}

/// Kolmogorov limiting survival function P(K > λ).
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.18 {
        // Theta-function form, fast for small λ.
        let c = -std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda);
        let s: f64 = (1..=5).map(|k| ((2 * k - 1) as f64).powi(2) * c).map(f64::exp).sum();
        (1.0 - (2.0 * std::f64::consts::PI).sqrt() / lambda * s).clamp(0.0, 1.0)
    } else {
        let s: f64 = (1..=20).map(|k| (if k % 2 == 1 { 2.0 } else { -2.0 }) * (-2.0 * (k * k) as f64 * lambda * lambda).exp()).sum();
        s.clamp(0.0, 1.0)
    }
}

/// One-sample KS test against Unif(0, 1) with the asymptotic p-value (Stephens' small-n correction).
pub fn ks_uniform(u: &[f64]) -> Result<KsResult, GofError> {
    if u.is_empty() {
        return Err(GofError::Empty);
    }
    let mut v = u.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let d = v
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let x = x.clamp(0.0, 1.0);
            ((i + 1) as f64 / n - x).max(x - i as f64 / n)
        })
        .fold(0.0, f64::max);
    let sn = n.sqrt();
    let p_value = kolmogorov_sf((sn + 0.12 + 0.11 / sn) * d);
    Ok(KsResult { statistic: d, p_value, n: v.len() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GofSample {
    /// Draws × records.
    pub u: Vec<Vec<f64>>,
    pub ks: Vec<KsResult>,
}

pub fn gof_sample<R: Rng + ?Sized>(draws: &[GibbsState], study: &StudyData, rng: &mut R) -> Result<GofSample, GofError> {
    if draws.is_empty() {
        return Err(GofError::Empty);
    }
    let u = draws.iter().map(|d| compute_u(d, study, rng)).collect::<Result<Vec<_>, _>>()?;
    let ks = u.iter().map(|x| ks_uniform(x)).collect::<Result<Vec<_>, _>>()?;
    Ok(GofSample { u, ks })
}

/// Largest gap between sorted U values and the plotting positions (i − 0.5)/n.
pub fn qq_max_deviation(u: &[f64]) -> f64 {
    let mut v = u.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter().enumerate().map(|(i, x)| (x - (i as f64 + 0.5) / n).abs()).fold(0.0, f64::max)
}

/// Long-format QQ table: draw, position, theoretical, empirical.
pub fn qq_export<W: Write>(sample: &GofSample, w: W) -> Result<(), GofError> {
    if sample.u.is_empty() {
        return Err(GofError::Empty);
    }
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["draw", "i", "theoretical", "empirical"])?;
    for (d, u) in sample.u.iter().enumerate() {
        let mut v = u.clone();
        v.sort_by(f64::total_cmp);
        let n = v.len() as f64;
        for (i, x) in v.iter().enumerate() {
            wr.write_record([d.to_string(), (i + 1).to_string(), format!("{:?}", (i as f64 + 0.5) / n), format!("{x:?}")])?;
        }
    }
    wr.flush()?;
    Ok(())
}
