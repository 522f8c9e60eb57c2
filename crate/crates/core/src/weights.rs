//! Density-free importance weights over RWD rows and weighted resampling.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{MixedDataset, Provenance};
use crate::sampler::GibbsState;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WeightError {
    #[error("posterior chain holds no draws")]
    EmptyChain,
    #[error("draw {draw} has {found} RWD labels, expected {expected}")]
    LengthMismatch { draw: usize, found: usize, expected: usize },
    #[error("resample size must be at least 1")]
    EmptyResample,
    #[error("invalid weights: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceWeightSet {
    pub w: Vec<f64>,
    pub draws: usize,
    pub provenance: Vec<Provenance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightDiagnostics {
    pub ess: f64,
    pub max_weight: f64,
    /// Shannon entropy in nats.
    pub entropy: f64,
    pub requested: usize,
    pub low_ess: bool,
}

/// Averages π₁[c₂ᵢ]/n₂[c₂ᵢ] over the draws and normalizes to unit sum.
pub fn compute_weights(draws: &[GibbsState], provenance: &[Provenance]) -> Result<ImportanceWeightSet, WeightError> {
    let first = draws.first().ok_or(WeightError::EmptyChain)?;
    let n2 = first.c2().len();
    let mut acc = vec![0.0; n2];
    for (m, d) in draws.iter().enumerate() {
        if d.c2().len() != n2 {
            return Err(WeightError::LengthMismatch { draw: m, found: d.c2().len(), expected: n2 });
        }
        let counts = &d.n[1];
        for (a, &c) in acc.iter_mut().zip(d.c2()) {
            *a += d.pi1()[c] / counts[c] as f64;
        }
    }
    let total: f64 = acc.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(WeightError::Invalid(format!("weight total {total}")));
    }
    let w = acc.into_iter().map(|a| a / total).collect();
    let provenance = if provenance.len() == n2 {
        provenance.to_vec()
    } else {
        (0..n2).map(|row| Provenance { source: "rwd".into(), row }).collect()
    };
    Ok(ImportanceWeightSet { w, draws: draws.len(), provenance })
}

impl ImportanceWeightSet {
    pub fn from_weights(w: Vec<f64>) -> Result<Self, WeightError> {
        if w.is_empty() || w.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(WeightError::Invalid("weights must be finite and nonnegative".into()));
        }
        let s: f64 = w.iter().sum();
        if s <= 0.0 {
            return Err(WeightError::Invalid("weights sum to zero".into()));
        }
        let provenance = (0..w.len()).map(|row| Provenance { source: "rwd".into(), row }).collect();
        Ok(Self { w: w.into_iter().map(|x| x / s).collect(), draws: 0, provenance })
    }

    pub fn diagnostics(&self, requested: usize) -> WeightDiagnostics {
        let ess = 1.0 / self.w.iter().map(|w| w * w).sum::<f64>();
        let max_weight = self.w.iter().copied().fold(0.0, f64::max);
        let entropy = -self.w.iter().filter(|&&w| w > 0.0).map(|w| w * w.ln()).sum::<f64>();
        WeightDiagnostics { ess, max_weight, entropy, requested, low_ess: ess < requested as f64 }
    }

    /// Weighted mean of `g` over the RWD rows.
    pub fn weighted_mean(&self, g: impl Fn(usize) -> f64) -> f64 {
        self.w.iter().enumerate().map(|(i, w)| w * g(i)).sum()
    }

    /// I.i.d. categorical draws of row indices.
    pub fn resample_indices<R: Rng + ?Sized>(&self, size: usize, rng: &mut R) -> Result<Vec<usize>, WeightError> {
        if size == 0 {
            return Err(WeightError::EmptyResample);
        }
        let mut cdf = Vec::with_capacity(self.w.len());
        let mut run = 0.0;
        for &w in &self.w {
            run += w;
            cdf.push(run);
        }
        let last_positive = self.w.iter().rposition(|&w| w > 0.0).unwrap_or(0);
        Ok((0..size)
            .map(|_| {
                let u: f64 = rng.random::<f64>() * run;
                cdf.partition_point(|&c| c <= u).min(last_positive)
            })
            .collect())
    }

    /// Resampled RWD subpopulation (with replacement) together with the chosen indices.
    pub fn resample<R: Rng + ?Sized>(&self, rwd: &MixedDataset, size: usize, rng: &mut R) -> Result<(Vec<usize>, MixedDataset), WeightError> {
        if rwd.len() != self.w.len() {
            return Err(WeightError::LengthMismatch { draw: 0, found: rwd.len(), expected: self.w.len() });
        }
        let idx = self.resample_indices(size, rng)?;
        let ds = rwd.select(&idx);
        Ok((idx, ds))
    }
}

/// Uniform (unweighted) resampling, the naive comparator for the weighted scheme.
pub fn resample_uniform<R: Rng + ?Sized>(n: usize, size: usize, rng: &mut R) -> Vec<usize> {
    (0..size).map(|_| rng.random_range(0..n)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn draw(c2: Vec<usize>, pi1: Vec<f64>, k: usize) -> GibbsState {
        let mut n2 = vec![0; k];
        for &c in &c2 {
            n2[c] += 1;
        }
        GibbsState {
            c: [vec![], c2.clone()],
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
    fn single_cluster_gives_uniform_weights() {
        let d = draw(vec![0; 5], vec![1.0, 0.0], 2);
        let w = compute_weights(&[d], &[]).unwrap();
        for x in &w.w {
            assert!((x - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn hand_computed_two_cluster_weights() {
        let d = draw(vec![0, 0, 0, 0, 1], vec![0.8, 0.2], 2);
        let w = compute_weights(&[d], &[]).unwrap();
        // raw (0.2, 0.2, 0.2, 0.2, 0.2): every row has equal weight.
        for x in &w.w {
            assert!((x - 0.2).abs() < 1e-15);
        }
        let d = draw(vec![0, 0, 0, 0, 1], vec![0.5, 0.5], 2);
        let w = compute_weights(&[d], &[]).unwrap();
        let raw = [0.125, 0.125, 0.125, 0.125, 0.5];
        let s: f64 = raw.iter().sum();
        for (x, r) in w.w.iter().zip(raw) {
            assert!((x - r / s).abs() < 1e-15);
        }
    }

    #[test]
    fn ess_closed_forms() {
        let u = ImportanceWeightSet::from_weights(vec![1.0; 8]).unwrap();
        assert!((u.diagnostics(8).ess - 8.0).abs() < 1e-12);
        let p = ImportanceWeightSet::from_weights(vec![0.0, 0.0, 1.0]).unwrap();
        assert!((p.diagnostics(2).ess - 1.0).abs() < 1e-12);
        assert!(p.diagnostics(2).low_ess);
        let h = ImportanceWeightSet::from_weights(vec![0.5, 0.5, 0.0, 0.0]).unwrap();
        assert!((h.diagnostics(2).ess - 2.0).abs() < 1e-12);
    }

    #[test]
    fn point_mass_always_resamples_same_row() {
        let mut w = vec![0.0; 10];
        w[7] = 1.0;
        let ws = ImportanceWeightSet::from_weights(w).unwrap();
        let mut rng = rng_from_seed(1);
        assert!(ws.resample_indices(500, &mut rng).unwrap().iter().all(|&i| i == 7));
    }

    #[test]
    fn empty_chain_is_an_error() {
        assert_eq!(compute_weights(&[], &[]), Err(WeightError::EmptyChain));
    }
}
