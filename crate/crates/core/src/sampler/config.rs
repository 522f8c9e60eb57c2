use serde::{Deserialize, Serialize};

use super::SamplerError;

/// Hyperparameters of the cluster-specific response model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ResponseHyper {
    pub kappa0: f64,
    pub a0: f64,
    /// Prior mean of μ₀; `None` uses the grand mean of the observed outcomes.
    pub m_mu: Option<f64>,
    pub s2_mu: f64,
    /// Normal prior on log b₀.
    pub m_b: f64,
    pub s2_b: f64,
    /// Normal prior on log α₁ and log α₂.
    pub mu_alpha: f64,
    pub s2_alpha: f64,
}

impl Default for ResponseHyper {
    fn default() -> Self {
        // Log-normal moment matching: E(b₀) = 5, var(b₀) = 20 and E(α) = 1, var(α) = 10.
        let s2_b = 1.8f64.ln();
        let s2_alpha = 11f64.ln();
        Self { kappa0: 1.0, a0: 10.0, m_mu: None, s2_mu: 1.0, m_b: 5f64.ln() - 0.5 * s2_b, s2_b, mu_alpha: -0.5 * s2_alpha, s2_alpha }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HmcConfig {
    pub leapfrog_steps: usize,
    /// Initial step size; adapted during burn-in when `adapt` is set.
    pub step_size: f64,
    pub adapt_target: f64,
    pub adapt: bool,
}

impl Default for HmcConfig {
    fn default() -> Self {
        Self { leapfrog_steps: 10, step_size: 0.1, adapt_target: 0.65, adapt: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChainConfig {
    pub k: usize,
    pub iters: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub hmc: HmcConfig,
    pub response: ResponseHyper,
    /// Shape of the continuous-covariate NIG prior; `None` means (#continuous covariates + 30).
    pub a_x: Option<f64>,
    /// Scale of the continuous-covariate NIG prior; `None` sets it per column to
    /// (a_x − 1) times the pooled sample variance, so the prior mean of σ² matches the data.
    pub b_x: Option<f64>,
    /// Drop the treatment-partition prior ratio from the RWD membership update.
    pub literal_c2_update: bool,
    /// Ignore all likelihood terms and sample from the prior.
    pub prior_only: bool,
    pub audit_every: usize,
    pub rebuild_every: usize,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            k: 15,
            iters: 6000,
            burn_in: 1000,
            thin: 5,
            seed: 0,
            hmc: HmcConfig::default(),
            response: ResponseHyper::default(),
            a_x: None,
            b_x: None,
            literal_c2_update: false,
            prior_only: false,
            audit_every: 100,
            rebuild_every: 500,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<(), SamplerError> {
        let bad = |m: &str| Err(SamplerError::Config(m.to_string()));
        if self.k < 2 {
            return bad("k must be at least 2");
        }
        if self.thin < 1 {
            return bad("thin must be at least 1");
        }
        if self.burn_in >= self.iters {
            return bad("burn_in must be smaller than iters");
        }
        if self.hmc.leapfrog_steps == 0 || !(self.hmc.step_size > 0.0) {
            return bad("HMC needs at least one leapfrog step and a positive step size");
        }
        let r = &self.response;
        if !(r.kappa0 > 0.0 && r.a0 > 0.0 && r.s2_mu > 0.0 && r.s2_b > 0.0 && r.s2_alpha > 0.0 && self.b_x.is_none_or(|b| b > 0.0)) {
            return bad("response hyperparameters must be positive");
        }
        if let Some(a) = self.a_x {
            if !(a > 0.0) {
                return bad("a_x must be positive");
            }
        }
        Ok(())
    }

    /// Number of stored draws: floor((iters − burn_in) / thin).
    pub fn n_draws(&self) -> usize {
        (self.iters - self.burn_in) / self.thin
    }
}
