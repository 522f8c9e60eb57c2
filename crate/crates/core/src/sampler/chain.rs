use std::io::{BufRead, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::StudyData;
use crate::rng::rng_from_seed;

use super::config::ChainConfig;
use super::gibbs::{Sampler, SweepCounters};
use super::hmc::Hmc;
use super::state::GibbsState;
use super::SamplerError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HmcSummary {
    pub acceptance_rate: f64,
    pub step_size: f64,
    pub small_energy_error_fraction: f64,
    pub nonfinite: u64,
}

impl From<&Hmc> for HmcSummary {
    fn from(h: &Hmc) -> Self {
        Self {
            acceptance_rate: h.stats.acceptance_rate(),
            step_size: h.step_size,
            small_energy_error_fraction: h.stats.small_energy_error_fraction(),
            nonfinite: h.stats.nonfinite,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GewekeScore {
    pub name: String,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainDiagnostics {
    pub hyper: HmcSummary,
    pub alpha: [HmcSummary; 2],
    /// Occupied clusters per sweep: [trial arm, RWD].
    pub occupied_trace: Vec<[usize; 2]>,
    pub geweke: Vec<GewekeScore>,
    pub counters: SweepCounters,
    pub m_mu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorChain {
    pub config: ChainConfig,
    pub draws: Vec<GibbsState>,
    pub diagnostics: ChainDiagnostics,
}

impl PosteriorChain {
    /// Named scalar traces used for convergence monitoring.
    pub fn monitored(&self) -> Vec<(&'static str, Vec<f64>)> {
        monitored(&self.draws)
    }
}

fn monitored(draws: &[GibbsState]) -> Vec<(&'static str, Vec<f64>)> {
    vec![
        ("mu0", draws.iter().map(|d| d.mu0).collect()),
        ("b0", draws.iter().map(|d| d.b0).collect()),
        ("alpha1", draws.iter().map(|d| d.alpha[0]).collect()),
        ("alpha2", draws.iter().map(|d| d.alpha[1]).collect()),
        ("k_n1", draws.iter().map(|d| d.occupied(0) as f64).collect()),
        ("k_n2", draws.iter().map(|d| d.occupied(1) as f64).collect()),
    ]
}

/// Runs a chain seeded from `cfg.seed`.
pub fn run_chain(study: &StudyData, cfg: &ChainConfig) -> Result<PosteriorChain, SamplerError> {
    let mut rng = rng_from_seed(cfg.seed);
    run_chain_with_rng(study, cfg, &mut rng)
}

pub fn run_chain_with_rng<R: Rng + ?Sized>(study: &StudyData, cfg: &ChainConfig, rng: &mut R) -> Result<PosteriorChain, SamplerError> {
    let mut sampler = Sampler::new(study, cfg, rng)?;
    let mut draws = Vec::with_capacity(cfg.n_draws());
    let mut trace = Vec::with_capacity(cfg.iters);
    for sweep in 1..=cfg.iters {
        sampler.sweep(rng)?;
        if sweep == cfg.burn_in {
            sampler.finish_adaptation();
        }
        let st = sampler.state();
        trace.push([st.occupied(0), st.occupied(1)]);
        if sweep > cfg.burn_in && (sweep - cfg.burn_in) % cfg.thin == 0 {
            draws.push(st.clone());
        }
    }
    let geweke = monitored(&draws).into_iter().map(|(name, x)| GewekeScore { name: name.to_string(), z: geweke_z(&x) }).collect();
    let diagnostics = ChainDiagnostics {
        hyper: HmcSummary::from(&sampler.hmc_hyper),
        alpha: [HmcSummary::from(&sampler.hmc_alpha[0]), HmcSummary::from(&sampler.hmc_alpha[1])],
        occupied_trace: trace,
        geweke,
        counters: sampler.counters.clone(),
        m_mu: sampler.m_mu(),
    };
    Ok(PosteriorChain { config: cfg.clone(), draws, diagnostics })
}

/// Long-run variance of a series by the Bartlett-window spectral estimate at frequency zero.
pub fn long_run_variance(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 2 {
        return 0.0;
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let acov = |lag: usize| (0..n - lag).map(|i| (x[i] - mean) * (x[i + lag] - mean)).sum::<f64>() / n as f64;
    let bw = ((n as f64).powf(1.0 / 3.0).floor() as usize).max(1).min(n - 1);
    let mut v = acov(0);
    for lag in 1..=bw {
        v += 2.0 * (1.0 - lag as f64 / (bw + 1) as f64) * acov(lag);
    }
    v.max(0.0)
}

/// Geweke z-score comparing the first 10% with the last 50% of a trace.
pub fn geweke_z(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 20 {
        return f64::NAN;
    }
    let a = &x[..n / 10];
    let b = &x[n - n / 2..];
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let var = long_run_variance(a) / a.len() as f64 + long_run_variance(b) / b.len() as f64;
    let diff = mean(a) - mean(b);
    if var > 0.0 {
        diff / var.sqrt()
    } else if diff == 0.0 {
        0.0
    } else {
        diff.signum() * f64::INFINITY
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawFileHeader {
    pub format: String,
    pub draws: usize,
    pub config: ChainConfig,
    pub diagnostics: Option<ChainDiagnostics>,
    #[serde(default)]
    pub provenance: serde_json::Value,
}

const DRAW_FORMAT: &str = "camsynth-draws/1";

/// JSON-lines draw file: a header record, then one record per stored draw.
pub fn write_draws<W: Write>(chain: &PosteriorChain, provenance: serde_json::Value, mut w: W) -> std::io::Result<()> {
    let header = DrawFileHeader {
        format: DRAW_FORMAT.into(),
        draws: chain.draws.len(),
        config: chain.config.clone(),
        diagnostics: None,
        provenance,
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for d in &chain.draws {
        serde_json::to_writer(&mut w, d)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn read_draws<R: BufRead>(r: R) -> Result<(DrawFileHeader, Vec<GibbsState>), SamplerError> {
    let mut lines = r.lines();
    let first = lines.next().ok_or_else(|| SamplerError::Format("empty draw file".into()))?.map_err(|e| SamplerError::Format(e.to_string()))?;
    let header: DrawFileHeader = serde_json::from_str(&first).map_err(|e| SamplerError::Format(format!("header: {e}")))?;
    if header.format != DRAW_FORMAT {
        return Err(SamplerError::Format(format!("unsupported draw format `{}`", header.format)));
    }
    let mut draws = Vec::with_capacity(header.draws);
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| SamplerError::Format(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let d: GibbsState = serde_json::from_str(&line).map_err(|e| SamplerError::Format(format!("draw {i}: {e}")))?;
        d.check_invariants().map_err(|e| SamplerError::Format(format!("draw {i}: {e}")))?;
        draws.push(d);
    }
    if draws.len() != header.draws {
        return Err(SamplerError::Format(format!("header announces {} draws, file holds {}", header.draws, draws.len())));
    }
    Ok((header, draws))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geweke_of_stationary_noise_is_moderate() {
        let mut rng = rng_from_seed(4);
        let x: Vec<f64> = (0..2000).map(|_| crate::rng::std_normal(&mut rng)).collect();
        assert!(geweke_z(&x).abs() < 4.0);
        let drift: Vec<f64> = (0..2000).map(|i| i as f64 / 100.0 + crate::rng::std_normal(&mut rng)).collect();
        assert!(geweke_z(&drift).abs() > 10.0);
    }

    #[test]
    fn long_run_variance_of_iid_is_near_variance() {
        let mut rng = rng_from_seed(8);
        let x: Vec<f64> = (0..20_000).map(|_| crate::rng::std_normal(&mut rng)).collect();
        assert!((long_run_variance(&x) - 1.0).abs() < 0.1);
    }
}
