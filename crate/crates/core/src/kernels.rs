//! Conjugate per-covariate kernels: multinomial–Dirichlet and normal–normal-inverse-gamma.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Cell, ColumnKind, CovariateSchema};
use crate::scalar::Real;
use crate::special::ln_gamma;
use crate::student_t::StudentT;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("level {level} out of range for {num_levels} levels")]
    LevelOutOfRange { level: usize, num_levels: usize },
    #[error("invalid hyperparameter: {0}")]
    InvalidHyper(String),
}

/// Normal-inverse-gamma hyperparameters: μ | σ² ~ N(mu, σ²/kappa), σ⁻² ~ Gamma(a, rate b).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NigHyper<F> {
    pub mu: F,
    pub kappa: F,
    pub a: F,
    pub b: F,
}

/// Count, sum and sum of squares of the observed members.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ContStat<F> {
    pub n: u32,
    pub sum: F,
    pub sumsq: F,
}

impl<F: Real> ContStat<F> {
    pub fn empty() -> Self {
        Self { n: 0, sum: F::zero(), sumsq: F::zero() }
    }

    pub fn from_values(xs: &[F]) -> Self {
        let mut s = Self::empty();
        for &x in xs {
            s.add(x);
        }
        s
    }

    #[inline]
    pub fn add(&mut self, x: F) {
        self.n += 1;
        self.sum = self.sum + x;
        self.sumsq = self.sumsq + x * x;
    }

    #[inline]
    pub fn remove(&mut self, x: F) {
        debug_assert!(self.n > 0);
        self.n -= 1;
        if self.n == 0 {
            *self = Self::empty();
        } else {
            self.sum = self.sum - x;
            self.sumsq = self.sumsq - x * x;
        }
    }
}

impl<F: Real> NigHyper<F> {
    pub fn new(mu: F, kappa: F, a: F, b: F) -> Result<Self, KernelError> {
        if !(kappa > F::zero() && a > F::zero() && b > F::zero() && mu.is_finite()) {
            return Err(KernelError::InvalidHyper(format!("NIG({mu}, {kappa}, {a}, {b})")));
        }
        Ok(Self { mu, kappa, a, b })
    }

    /// Posterior hyperparameters after observing the members summarized by `s`.
    #[inline]
    pub fn posterior(&self, s: &ContStat<F>) -> NigHyper<F> {
        let n = F::from_u32(s.n).unwrap();
        let kappa = self.kappa + n;
        let mu = (self.kappa * self.mu + s.sum) / kappa;
        let a = self.a + n * F::lit(0.5);
        let quad = (s.sumsq + self.kappa * self.mu * self.mu - kappa * mu * mu).max(F::zero());
        let b = self.b + F::lit(0.5) * quad;
        NigHyper { mu, kappa, a, b }
    }

    /// Predictive distribution of one more observation: t with df 2a, location mu,
    /// squared scale b(kappa + 1)/(a kappa).
    pub fn predictive(&self) -> StudentT<F> {
        let scale2 = self.b * (self.kappa + F::one()) / (self.a * self.kappa);
        StudentT::from_scale2(F::lit(2.0) * self.a, self.mu, scale2).expect("valid NIG hyperparameters")
    }
}

/// Density of `x` under the posterior predictive given the members in `s`.
pub fn cont_predictive<F: Real>(x: F, s: &ContStat<F>, hyper: &NigHyper<F>) -> F {
    hyper.posterior(s).predictive().pdf(x)
}

/// (count[level] + conc[level]) / (Σ count + Σ conc).
pub fn cat_predictive<F: Real>(level: usize, counts: &[u32], conc: &[F]) -> Result<F, KernelError> {
    if level >= counts.len() || counts.len() != conc.len() {
        return Err(KernelError::LevelOutOfRange { level, num_levels: counts.len() });
    }
    let total: u32 = counts.iter().sum();
    let conc_total: F = conc.iter().copied().sum();
    Ok((F::from_u32(counts[level]).unwrap() + conc[level]) / (F::from_u32(total).unwrap() + conc_total))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ColumnPrior<F> {
    Categorical { conc: Vec<F>, total: F },
    Continuous(NigHyper<F>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelHyper<F> {
    pub columns: Vec<ColumnPrior<F>>,
}

impl<F: Real> KernelHyper<F> {
    /// Uniform Dirichlet for categorical columns; NIG(0, 1, a_X, b_X) for continuous ones with
    /// a_X = (#continuous + 30) unless given.
    pub fn default_for(schema: &CovariateSchema, a_x: Option<F>, b_x: F) -> Self {
        let a = a_x.unwrap_or_else(|| F::from_usize_lossy(schema.n_continuous() + 30));
        let columns = schema
            .columns()
            .iter()
            .map(|c| match c.kind {
                ColumnKind::Categorical { num_levels } => {
                    let conc = vec![F::one(); num_levels as usize];
                    ColumnPrior::Categorical { total: F::from_u32(num_levels).unwrap(), conc }
                }
                ColumnKind::Continuous => ColumnPrior::Continuous(NigHyper { mu: F::zero(), kappa: F::one(), a, b: b_x }),
            })
            .collect();
        Self { columns }
    }

    pub fn validate(&self) -> Result<(), KernelError> {
        for c in &self.columns {
            match c {
                ColumnPrior::Categorical { conc, .. } => {
                    if conc.iter().any(|&v| !(v > F::zero())) {
                        return Err(KernelError::InvalidHyper("Dirichlet concentrations must be positive".into()));
                    }
                }
                ColumnPrior::Continuous(h) => {
                    NigHyper::new(h.mu, h.kappa, h.a, h.b)?;
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CovStat<F> {
    Categorical { counts: Vec<u32>, total: u32 },
    Continuous(ContStat<F>),
}

/// Per-covariate sufficient statistics of one cluster's observed members.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSuffStats<F> {
    pub columns: Vec<CovStat<F>>,
}

impl<F: Real> ClusterSuffStats<F> {
    pub fn empty(hyper: &KernelHyper<F>) -> Self {
        let columns = hyper
            .columns
            .iter()
            .map(|c| match c {
                ColumnPrior::Categorical { conc, .. } => CovStat::Categorical { counts: vec![0; conc.len()], total: 0 },
                ColumnPrior::Continuous(_) => CovStat::Continuous(ContStat::empty()),
            })
            .collect();
        Self { columns }
    }

    pub fn add(&mut self, row: &[Cell]) {
        for (stat, cell) in self.columns.iter_mut().zip(row) {
            match (stat, cell) {
                (CovStat::Categorical { counts, total }, Cell::Level(l)) => {
                    counts[*l as usize] += 1;
                    *total += 1;
                }
                (CovStat::Continuous(s), Cell::Value(v)) => s.add(F::lit(*v)),
                _ => {}
            }
        }
    }

    pub fn remove(&mut self, row: &[Cell]) {
        for (stat, cell) in self.columns.iter_mut().zip(row) {
            match (stat, cell) {
                (CovStat::Categorical { counts, total }, Cell::Level(l)) => {
                    counts[*l as usize] -= 1;
                    *total -= 1;
                }
                (CovStat::Continuous(s), Cell::Value(v)) => s.remove(F::lit(*v)),
                _ => {}
            }
        }
    }

    /// Number of members contributing to any column is not tracked here; callers keep occupancy.
    pub fn is_empty_stats(&self) -> bool {
        self.columns.iter().all(|c| match c {
            CovStat::Categorical { total, .. } => *total == 0,
            CovStat::Continuous(s) => s.n == 0,
        })
    }
}

/// log ψ_X: sum over observed cells of the log conjugate predictive given `stats`.
pub fn ln_psi_x<F: Real>(row: &[Cell], stats: &ClusterSuffStats<F>, hyper: &KernelHyper<F>) -> F {
    let mut acc = F::zero();
    for ((cell, stat), prior) in row.iter().zip(&stats.columns).zip(&hyper.columns) {
        match (cell, stat, prior) {
            (Cell::Level(l), CovStat::Categorical { counts, total }, ColumnPrior::Categorical { conc, total: conc_total }) => {
                let l = *l as usize;
                let p = (F::from_u32(counts[l]).unwrap() + conc[l]) / (F::from_u32(*total).unwrap() + *conc_total);
                acc = acc + p.ln();
            }
            (Cell::Value(v), CovStat::Continuous(s), ColumnPrior::Continuous(h)) => {
                acc = acc + h.posterior(s).predictive().ln_pdf(F::lit(*v));
            }
            _ => {}
        }
    }
    acc
}

pub fn psi_x<F: Real>(row: &[Cell], stats: &ClusterSuffStats<F>, hyper: &KernelHyper<F>) -> F {
    ln_psi_x(row, stats, hyper).exp()
}

/// Cached `ln Γ(a + n/2 + 1/2) − ln Γ(a + n/2)` for n = 0, 1, …, making repeated t log-densities cheap.
#[derive(Debug, Clone)]
pub struct TNormTable<F> {
    a: F,
    table: Vec<F>,
}

impl<F: Real> TNormTable<F> {
    pub fn new(a: F, max_n: usize) -> Self {
        let half = F::lit(0.5);
        let table = (0..=max_n)
            .map(|n| {
                let an = a + F::from_usize_lossy(n) * half;
                ln_gamma(an + half) - ln_gamma(an)
            })
            .collect();
        Self { a, table }
    }

    pub fn shape(&self) -> F {
        self.a
    }

    /// Log predictive density of `x` under the NIG posterior given `s`; equals
    /// `ln cont_predictive(x, s, hyper)` when `hyper.a` matches the table.
    #[inline]
    pub fn ln_predictive(&self, x: F, s: &ContStat<F>, hyper: &NigHyper<F>) -> F {
        let post = hyper.posterior(s);
        let half = F::lit(0.5);
        // With B = b_n (κ_n + 1)/κ_n the t density reduces to
        // Γ(a_n + ½)/Γ(a_n) (2πB)^{-½} (1 + (x − μ_n)²/(2B))^{-(a_n + ½)}.
        let big_b = post.b * (post.kappa + F::one()) / post.kappa;
        let d = x - post.mu;
        self.table[s.n as usize] - half * (F::lit(2.0) * F::PI() * big_b).ln() - (post.a + half) * (d * d / (F::lit(2.0) * big_b)).ln_1p()
    }
}
