//! Hamiltonian Monte Carlo with a fixed number of leapfrog steps and dual-averaging step-size adaptation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::std_normal;

/// Nesterov dual averaging of the log step size toward a target acceptance rate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DualAveraging {
    target: f64,
    mu: f64,
    h_bar: f64,
    log_eps_bar: f64,
    t: f64,
}

impl DualAveraging {
    const GAMMA: f64 = 0.05;
    const T0: f64 = 10.0;
    const KAPPA: f64 = 0.75;

    pub fn new(eps0: f64, target: f64) -> Self {
        Self { target, mu: (10.0 * eps0).ln(), h_bar: 0.0, log_eps_bar: eps0.ln(), t: 0.0 }
    }

    /// Records one acceptance probability and returns the next step size.
    pub fn update(&mut self, accept_prob: f64) -> f64 {
        self.t += 1.0;
        let w = 1.0 / (self.t + Self::T0);
        self.h_bar = (1.0 - w) * self.h_bar + w * (self.target - accept_prob);
        let log_eps = self.mu - self.t.sqrt() / Self::GAMMA * self.h_bar;
        let eta = self.t.powf(-Self::KAPPA);
        self.log_eps_bar = eta * log_eps + (1.0 - eta) * self.log_eps_bar;
        log_eps.exp()
    }

    pub fn final_step_size(&self) -> f64 {
        self.log_eps_bar.exp()
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct HmcStats {
    pub proposals: u64,
    pub accepted: u64,
    pub nonfinite: u64,
    /// Trajectories after adaptation, and how many of those had |ΔH| < 0.2.
    pub post_adapt: u64,
    pub post_adapt_small_dh: u64,
}

impl HmcStats {
    pub fn acceptance_rate(&self) -> f64 {
        if self.proposals == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposals as f64
        }
    }

    pub fn small_energy_error_fraction(&self) -> f64 {
        if self.post_adapt == 0 {
            0.0
        } else {
            self.post_adapt_small_dh as f64 / self.post_adapt as f64
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Hmc {
    pub step_size: f64,
    pub n_leapfrog: usize,
    /// Relative half-width of the uniform step-size jitter, which breaks periodic trajectories.
    pub jitter: f64,
    adapter: Option<DualAveraging>,
    pub stats: HmcStats,
}

impl Hmc {
    pub fn new(step_size: f64, n_leapfrog: usize, target: f64, adapt: bool) -> Self {
        let adapter = adapt.then(|| DualAveraging::new(step_size, target));
        Self { step_size, n_leapfrog, jitter: 0.2, adapter, stats: HmcStats::default() }
    }

    pub fn is_adapting(&self) -> bool {
        self.adapter.is_some()
    }

    /// Freezes the step size at the dual-averaging estimate.
    pub fn finish_adaptation(&mut self) {
        if let Some(a) = self.adapter.take() {
            self.step_size = a.final_step_size();
        }
    }

    /// One HMC transition on `x` for a log density `target(x, grad) -> log p`, which must fill `grad`.
    /// Returns whether the proposal was accepted.
    pub fn transition<R, T>(&mut self, x: &mut [f64], mut target: T, rng: &mut R) -> bool
    where
        R: Rng + ?Sized,
        T: FnMut(&[f64], &mut [f64]) -> f64,
    {
        let d = x.len();
        let mut grad = vec![0.0; d];
        let lp0 = target(x, &mut grad);
        let mut q = x.to_vec();
        let mut p: Vec<f64> = (0..d).map(|_| std_normal(rng)).collect();
        let h0 = -lp0 + 0.5 * p.iter().map(|v| v * v).sum::<f64>();
        let eps = self.step_size * (1.0 + self.jitter * (2.0 * rng.random::<f64>() - 1.0));

        let mut lp1 = lp0;
        let mut finite = lp0.is_finite() && grad.iter().all(|g| g.is_finite());
        if finite {
            for (pi, gi) in p.iter_mut().zip(&grad) {
                *pi += 0.5 * eps * gi;
            }
            for step in 0..self.n_leapfrog {
                for (qi, pi) in q.iter_mut().zip(&p) {
                    *qi += eps * pi;
                }
                lp1 = target(&q, &mut grad);
                if !lp1.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                    finite = false;
                    break;
                }
                let w = if step + 1 == self.n_leapfrog { 0.5 } else { 1.0 };
                for (pi, gi) in p.iter_mut().zip(&grad) {
                    *pi += w * eps * gi;
                }
            }
        }
        let (accept_prob, dh) = if finite {
            let h1 = -lp1 + 0.5 * p.iter().map(|v| v * v).sum::<f64>();
            let dh = h1 - h0;
            let a = (-dh).exp().min(1.0);
            if a.is_nan() {
                (0.0, f64::INFINITY)
            } else {
                (a, dh)
            }
        } else {
            self.stats.nonfinite += 1;
            (0.0, f64::INFINITY)
        };
        self.stats.proposals += 1;
        let accepted = rng.random::<f64>() < accept_prob;
        if accepted {
            x.copy_from_slice(&q);
            self.stats.accepted += 1;
        }
        match self.adapter.as_mut() {
            Some(a) => self.step_size = a.update(accept_prob),
            None => {
                self.stats.post_adapt += 1;
                if dh.abs() < 0.2 {
                    self.stats.post_adapt_small_dh += 1;
                }
            }
        }
        accepted
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    #[test]
    fn samples_standard_normal() {
        let mut rng = rng_from_seed(11);
        let mut hmc = Hmc::new(0.3, 10, 0.65, true);
        let mut x = [3.0];
        let target = |x: &[f64], g: &mut [f64]| {
            g[0] = -x[0];
            -0.5 * x[0] * x[0]
        };
        for _ in 0..500 {
            hmc.transition(&mut x, target, &mut rng);
        }
        hmc.finish_adaptation();
        let n = 20_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            hmc.transition(&mut x, target, &mut rng);
            s += x[0];
            s2 += x[0] * x[0];
        }
        let mean = s / n as f64;
        let var = s2 / n as f64 - mean * mean;
        assert!(mean.abs() < 0.05, "{mean}");
        assert!((var - 1.0).abs() < 0.08, "{var}");
        let acc = hmc.stats.acceptance_rate();
        assert!(acc > 0.5, "{acc}");
    }

    #[test]
    fn nonfinite_target_is_rejected() {
        let mut rng = rng_from_seed(1);
        let mut hmc = Hmc::new(0.5, 10, 0.65, false);
        let mut x = [0.5];
        let accepted = hmc.transition(
            &mut x,
            |x: &[f64], g: &mut [f64]| {
                g[0] = 1.0;
                if x[0] > 0.6 {
                    f64::NAN
                } else {
                    x[0]
                }
            },
            &mut rng,
        );
        assert!(!accepted);
        assert_eq!(x, [0.5]);
        assert_eq!(hmc.stats.nonfinite, 1);
    }
}
