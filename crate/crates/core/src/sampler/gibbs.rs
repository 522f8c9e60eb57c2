//! The Gibbs sweep: censored-outcome imputation, constrained membership updates, HMC moves on the
//! response hyperparameters and concentrations, and conjugate parameter/weight draws.

use rand::Rng;

use crate::data::{Cell, CensoredOutcome, StudyData};
use crate::kernels::{ClusterSuffStats, ColumnPrior, ContStat, CovStat, KernelHyper, NigHyper, TNormTable};
use crate::rng::{sample_dirichlet, sample_inv_gamma, sample_ln_weights, std_normal};
use crate::special::{digamma_rising, ln_rising};
use crate::student_t::{StudentT, TDistError};

use super::config::{ChainConfig, ResponseHyper};
use super::hmc::Hmc;
use super::state::GibbsState;
use super::SamplerError;

#[derive(Debug, Clone, Copy)]
enum ColPred {
    Cat,
    /// ln f(x) = c − e · ln(1 + (x − mu)² · inv2b)
    Cont { mu: f64, c: f64, inv2b: f64, e: f64 },
}

#[derive(Debug, Clone, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SweepCounters {
    pub sweeps: u64,
    pub truncation_fallbacks: u64,
    pub audits: u64,
    pub rebuilds: u64,
}

pub struct Sampler<'a> {
    cfg: ChainConfig,
    kernel: KernelHyper<f64>,
    x: [&'a [Vec<Cell>]; 2],
    y: Option<[&'a [CensoredOutcome]; 2]>,
    m_mu: f64,
    state: GibbsState,
    cov: Vec<ClusterSuffStats<f64>>,
    resp: [Vec<ContStat<f64>>; 2],
    cov_pred: Vec<Vec<ColPred>>,
    cov_valid: Vec<bool>,
    resp_pred: [Vec<Option<StudentT<f64>>>; 2],
    /// ln(count + concentration) per categorical column and level, indexed by count.
    cat_ln_num: Vec<Vec<Vec<f64>>>,
    /// ln(total + Σ concentration) per categorical column, indexed by total.
    cat_ln_den: Vec<Vec<f64>>,
    cont_tables: Vec<Option<TNormTable<f64>>>,
    pub hmc_hyper: Hmc,
    pub hmc_alpha: [Hmc; 2],
    pub counters: SweepCounters,
    lw: Vec<f64>,
}

impl<'a> Sampler<'a> {
    pub fn new<R: Rng + ?Sized>(study: &'a StudyData, cfg: &ChainConfig, rng: &mut R) -> Result<Self, SamplerError> {
        cfg.validate()?;
        study.treatment.validate().map_err(|e| SamplerError::Data(e.to_string()))?;
        study.rwd.validate().map_err(|e| SamplerError::Data(e.to_string()))?;
        if study.treatment.is_empty() || study.rwd.is_empty() {
            return Err(SamplerError::Data("both arms need at least one row".into()));
        }
        if study.schema().first_difference(&study.rwd.schema).is_some() {
            return Err(SamplerError::Data("arms do not share a schema".into()));
        }
        let mut kernel = KernelHyper::default_for(study.schema(), cfg.a_x, cfg.b_x.unwrap_or(1.0));
        if cfg.b_x.is_none() {
            scale_to_data(&mut kernel, [&study.treatment.rows, &study.rwd.rows]);
        }
        let k = cfg.k;
        let n_total = study.treatment.len() + study.rwd.len();
        let y = match (&study.treatment.outcomes, &study.rwd.outcomes) {
            (Some(a), Some(b)) => Some([a.as_slice(), b.as_slice()]),
            _ => None,
        };
        let m_mu = cfg.response.m_mu.unwrap_or_else(|| grand_mean(y));

        let mut cat_ln_num = Vec::new();
        let mut cat_ln_den = Vec::new();
        let mut cont_tables = Vec::new();
        for prior in &kernel.columns {
            match prior {
                ColumnPrior::Categorical { conc, total } => {
                    cat_ln_num.push(conc.iter().map(|&a| (0..=n_total).map(|m| (m as f64 + a).ln()).collect()).collect());
                    cat_ln_den.push((0..=n_total).map(|m| (m as f64 + total).ln()).collect());
                    cont_tables.push(None);
                }
                ColumnPrior::Continuous(h) => {
                    cat_ln_num.push(Vec::new());
                    cat_ln_den.push(Vec::new());
                    cont_tables.push(Some(TNormTable::new(h.a, n_total)));
                }
            }
        }
        let p = kernel.columns.len();
        let hmc = |c: &ChainConfig| Hmc::new(c.hmc.step_size, c.hmc.leapfrog_steps, c.hmc.adapt_target, c.hmc.adapt);
        let x = [study.treatment.rows.as_slice(), study.rwd.rows.as_slice()];
        let state = initial_state(x, y, cfg, m_mu, rng);
        let mut s = Self {
            cfg: cfg.clone(),
            cov: vec![ClusterSuffStats::empty(&kernel); k],
            kernel,
            x,
            y,
            m_mu,
            state,
            resp: [vec![ContStat::empty(); k], vec![ContStat::empty(); k]],
            cov_pred: vec![vec![ColPred::Cat; p]; k],
            cov_valid: vec![false; k],
            resp_pred: [vec![None; k], vec![None; k]],
            cat_ln_num,
            cat_ln_den,
            cont_tables,
            hmc_hyper: hmc(cfg),
            hmc_alpha: [hmc(cfg), hmc(cfg)],
            counters: SweepCounters::default(),
            lw: vec![0.0; k],
        };
        s.rebuild_stats();
        s.step4_update_params_weights(rng);
        s.state.check_invariants().map_err(SamplerError::Invariant)?;
        Ok(s)
    }

    pub fn state(&self) -> &GibbsState {
        &self.state
    }

    pub fn into_state(self) -> GibbsState {
        self.state
    }

    pub fn config(&self) -> &ChainConfig {
        &self.cfg
    }

    /// Prior mean used for μ₀.
    pub fn m_mu(&self) -> f64 {
        self.m_mu
    }

    pub fn kernel(&self) -> &KernelHyper<f64> {
        &self.kernel
    }

    fn has_y(&self) -> bool {
        self.y.is_some()
    }

    fn response_prior(&self) -> NigHyper<f64> {
        NigHyper { mu: self.state.mu0, kappa: self.cfg.response.kappa0, a: self.cfg.response.a0, b: self.state.b0 }
    }

    /// Recomputes all sufficient statistics from the labels.
    pub fn rebuild_stats(&mut self) {
        let k = self.cfg.k;
        self.cov = vec![ClusterSuffStats::empty(&self.kernel); k];
        self.resp = [vec![ContStat::empty(); k], vec![ContStat::empty(); k]];
        for s in 0..2 {
            for (i, &j) in self.state.c[s].iter().enumerate() {
                self.cov[j].add(&self.x[s][i]);
                if self.has_y() {
                    self.resp[s][j].add(self.state.y_latent[s][i]);
                }
            }
        }
        self.cov_valid.iter_mut().for_each(|v| *v = false);
        self.invalidate_resp();
    }

    fn invalidate_resp(&mut self) {
        for s in 0..2 {
            self.resp_pred[s].iter_mut().for_each(|p| *p = None);
        }
    }

    fn remove_row(&mut self, s: usize, i: usize) {
        let j = self.state.c[s][i];
        self.state.n[s][j] -= 1;
        self.cov[j].remove(&self.x[s][i]);
        self.cov_valid[j] = false;
        if self.has_y() {
            self.resp[s][j].remove(self.state.y_latent[s][i]);
            self.resp_pred[s][j] = None;
        }
    }

    fn add_row(&mut self, s: usize, i: usize, j: usize) {
        self.state.c[s][i] = j;
        self.state.n[s][j] += 1;
        self.cov[j].add(&self.x[s][i]);
        self.cov_valid[j] = false;
        if self.has_y() {
            self.resp[s][j].add(self.state.y_latent[s][i]);
            self.resp_pred[s][j] = None;
        }
    }

    fn refresh_cov_pred(&mut self, j: usize) {
        if self.cov_valid[j] {
            return;
        }
        for (l, prior) in self.kernel.columns.iter().enumerate() {
            self.cov_pred[j][l] = match (prior, &self.cov[j].columns[l]) {
                (ColumnPrior::Continuous(h), CovStat::Continuous(st)) => {
                    let post = h.posterior(st);
                    let big_b = post.b * (post.kappa + 1.0) / post.kappa;
                    let table = self.cont_tables[l].as_ref().expect("continuous column table");
                    let c = table.ln_predictive(post.mu, st, h);
                    ColPred::Cont { mu: post.mu, c, inv2b: 0.5 / big_b, e: post.a + 0.5 }
                }
                _ => ColPred::Cat,
            };
        }
        self.cov_valid[j] = true;
    }

    /// log ψ_X for row i of arm s against cluster j (the row must not be counted in j).
    fn ln_psi_x(&mut self, s: usize, i: usize, j: usize) -> f64 {
        if self.cfg.prior_only {
            return 0.0;
        }
        self.refresh_cov_pred(j);
        let row = &self.x[s][i];
        let mut acc = 0.0;
        for (l, cell) in row.iter().enumerate() {
            match (cell, &self.cov_pred[j][l]) {
                (Cell::Level(v), ColPred::Cat) => {
                    if let CovStat::Categorical { counts, total } = &self.cov[j].columns[l] {
                        let v = *v as usize;
                        acc += self.cat_ln_num[l][v][counts[v] as usize] - self.cat_ln_den[l][*total as usize];
                    }
                }
                (Cell::Value(v), ColPred::Cont { mu, c, inv2b, e }) => {
                    let d = v - mu;
                    acc += c - e * (d * d * inv2b).ln_1p();
                }
                _ => {}
            }
        }
        acc
    }

    fn resp_predictive(&mut self, s: usize, j: usize) -> StudentT<f64> {
        if let Some(t) = self.resp_pred[s][j] {
            return t;
        }
        let t = self.response_prior().posterior(&self.resp[s][j]).predictive();
        self.resp_pred[s][j] = Some(t);
        t
    }

    /// log ψ_Y: predictive density (observed) or interval probability (censored).
    fn ln_psi_y(&mut self, s: usize, i: usize, j: usize) -> f64 {
        let Some(y) = self.y else { return 0.0 };
        if self.cfg.prior_only {
            return 0.0;
        }
        let out = y[s][i];
        let t = self.resp_predictive(s, j);
        match out.bounds() {
            None => t.ln_pdf(out.y),
            Some((l, u)) => t.interval_mass(l, u).max(f64::MIN_POSITIVE).ln(),
        }
    }

    /// Draws the latent outcome of a censored row from its leave-one-out truncated predictive in
    /// cluster `j`. The row must currently be excluded from `j`'s response statistics.
    fn impute_row<R: Rng + ?Sized>(&mut self, s: usize, i: usize, j: usize, rng: &mut R) {
        let Some(y) = self.y else { return };
        let Some((l, u)) = y[s][i].bounds() else { return };
        let t = self.resp_predictive(s, j);
        self.state.y_latent[s][i] = match t.sample_truncated(l, u, rng) {
            Ok(v) => v,
            Err(TDistError::VanishingMass { .. }) | Err(TDistError::EmptyInterval { .. }) | Err(TDistError::InvalidParams { .. }) => {
                self.counters.truncation_fallbacks += 1;
                near_bound_draw(&t, l, u, rng)
            }
        };
    }

    /// Step 1: refresh every censored latent outcome.
    pub fn step1_impute<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let Some(y) = self.y else { return };
        if self.cfg.prior_only {
            return;
        }
        for s in 0..2 {
            for i in 0..y[s].len() {
                if y[s][i].is_observed() {
                    continue;
                }
                let j = self.state.c[s][i];
                self.resp[s][j].remove(self.state.y_latent[s][i]);
                self.resp_pred[s][j] = None;
                self.impute_row(s, i, j, rng);
                self.resp[s][j].add(self.state.y_latent[s][i]);
                self.resp_pred[s][j] = None;
            }
        }
    }

    fn rwd_support(&self) -> Vec<usize> {
        (0..self.cfg.k).filter(|&j| self.state.n[1][j] > 0).collect()
    }

    /// Full conditional of a trial-arm label over the RWD-occupied clusters. The row must be
    /// removed; probabilities are left in `self.lw[..support.len()]`.
    fn c1_log_weights(&mut self, i: usize, support: &[usize]) {
        let add = self.state.alpha[0] / support.len() as f64;
        for (t, &j) in support.iter().enumerate() {
            let w = (self.state.n[0][j] as f64 + add).ln() + self.ln_psi_y(0, i, j) + self.ln_psi_x(0, i, j);
            self.lw[t] = w;
        }
    }

    /// Step 2, trial arm.
    pub fn step2_update_c1<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let support = self.rwd_support();
        for i in 0..self.x[0].len() {
            self.remove_row(0, i);
            self.c1_log_weights(i, &support);
            let pick = support[sample_ln_weights(&mut self.lw[..support.len()], rng)];
            self.impute_row(0, i, pick, rng);
            self.add_row(0, i, pick);
        }
    }

    /// Probabilities of each supported cluster for trial row `i`, for inspection; state is unchanged.
    pub fn c1_conditional(&mut self, i: usize) -> Vec<(usize, f64)> {
        let support = self.rwd_support();
        let old = self.state.c[0][i];
        self.remove_row(0, i);
        self.c1_log_weights(i, &support);
        let lw = &mut self.lw[..support.len()];
        normalize_ln(lw);
        let out = support.iter().copied().zip(lw.iter().copied()).collect();
        self.add_row(0, i, old);
        out
    }

    /// Σ_{j: n₁ⱼ>0} [ln Γ(n₁ⱼ + α₁/K) − ln Γ(α₁/K)]: the K-dependent part of the trial-arm partition prior.
    fn trial_partition_term(&self, kk: usize) -> f64 {
        if kk == 0 {
            return 0.0;
        }
        let a = self.state.alpha[0] / kk as f64;
        self.state.n[0].iter().filter(|&&n| n > 0).map(|&n| ln_rising(a, n)).sum()
    }

    /// Log weights of all k clusters for RWD row `i`, which must be removed.
    fn c2_log_weights(&mut self, i: usize) {
        let k = self.cfg.k;
        let a2k = self.state.alpha[1] / k as f64;
        let new_cluster_term = if self.cfg.literal_c2_update {
            0.0
        } else {
            let k_minus = self.state.occupied(1);
            self.trial_partition_term(k_minus + 1) - self.trial_partition_term(k_minus)
        };
        let mut empty_w = None;
        for j in 0..k {
            let w = if self.state.n[1][j] == 0 {
                debug_assert_eq!(self.state.n[0][j], 0);
                match empty_w {
                    Some(w) => w,
                    None => {
                        let w = a2k.ln() + self.ln_psi_y(1, i, j) + self.ln_psi_x(1, i, j) + new_cluster_term;
                        empty_w = Some(w);
                        w
                    }
                }
            } else {
                (self.state.n[1][j] as f64 + a2k).ln() + self.ln_psi_y(1, i, j) + self.ln_psi_x(1, i, j)
            };
            self.lw[j] = w;
        }
    }

    fn c2_is_pinned(&self, i: usize) -> bool {
        let j = self.state.c[1][i];
        self.state.n[0][j] > 0 && self.state.n[1][j] == 1
    }

    /// Step 2, RWD arm. A row that is the only RWD member of a trial-occupied cluster stays put.
    pub fn step2_update_c2<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let k = self.cfg.k;
        for i in 0..self.x[1].len() {
            if self.c2_is_pinned(i) {
                continue;
            }
            self.remove_row(1, i);
            self.c2_log_weights(i);
            let pick = sample_ln_weights(&mut self.lw[..k], rng);
            self.impute_row(1, i, pick, rng);
            self.add_row(1, i, pick);
        }
    }

    /// Probabilities over all clusters for RWD row `i`; a pinned row returns a point mass.
    pub fn c2_conditional(&mut self, i: usize) -> Vec<f64> {
        let k = self.cfg.k;
        let old = self.state.c[1][i];
        if self.c2_is_pinned(i) {
            let mut p = vec![0.0; k];
            p[old] = 1.0;
            return p;
        }
        self.remove_row(1, i);
        self.c2_log_weights(i);
        normalize_ln(&mut self.lw[..k]);
        let out = self.lw[..k].to_vec();
        self.add_row(1, i, old);
        out
    }

    fn occupied_response_stats(&self) -> Vec<ContStat<f64>> {
        if !self.has_y() || self.cfg.prior_only {
            return Vec::new();
        }
        self.resp.iter().flatten().filter(|s| s.n > 0).copied().collect()
    }

    /// Step 3: one HMC move on (μ₀, log b₀).
    pub fn step3_update_mu0_b0<R: Rng + ?Sized>(&mut self, rng: &mut R) -> bool {
        let stats = self.occupied_response_stats();
        let r = self.cfg.response.clone();
        let m_mu = self.m_mu;
        let mut x = [self.state.mu0, self.state.b0.ln()];
        let accepted = self.hmc_hyper.transition(&mut x, |x, g| hyper_log_post(x[0], x[1], &stats, &r, m_mu, g), rng);
        self.state.mu0 = x[0];
        self.state.b0 = x[1].exp();
        self.invalidate_resp();
        accepted
    }

    /// Step 4: cluster parameters from their NIG full conditionals and both weight vectors.
    pub fn step4_update_params_weights<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let k = self.cfg.k;
        let prior = self.response_prior();
        let use_data = self.has_y() && !self.cfg.prior_only;
        for s in 0..2 {
            for j in 0..k {
                let post = if use_data { prior.posterior(&self.resp[s][j]) } else { prior };
                let s2 = sample_inv_gamma(post.a, post.b, rng);
                self.state.sigma2[s][j] = s2;
                self.state.mu[s][j] = post.mu + (s2 / post.kappa).sqrt() * std_normal(rng);
            }
        }
        let a2k = self.state.alpha[1] / k as f64;
        let conc: Vec<f64> = self.state.n[1].iter().map(|&n| n as f64 + a2k).collect();
        sample_dirichlet(&conc, &mut self.state.pi[1], rng);

        let support = self.rwd_support();
        let a1k = self.state.alpha[0] / support.len() as f64;
        let conc: Vec<f64> = support.iter().map(|&j| self.state.n[0][j] as f64 + a1k).collect();
        let mut w = vec![0.0; support.len()];
        sample_dirichlet(&conc, &mut w, rng);
        self.state.pi[0].iter_mut().for_each(|p| *p = 0.0);
        for (&j, &v) in support.iter().zip(&w) {
            self.state.pi[0][j] = v;
        }
    }

    /// Step 5: HMC on log α₁ and log α₂.
    pub fn step5_update_alphas<R: Rng + ?Sized>(&mut self, rng: &mut R) -> [bool; 2] {
        let r = &self.cfg.response;
        let (mu_a, s2_a) = (r.mu_alpha, r.s2_alpha);
        let mut acc = [false; 2];
        let k_n2 = self.state.k_n2() as f64;
        let dims = [k_n2, self.cfg.k as f64];
        for s in 0..2 {
            let counts: Vec<usize> = self.state.n[s].iter().copied().filter(|&n| n > 0).collect();
            let total = self.state.c[s].len();
            let kdim = dims[s];
            let mut u = [self.state.alpha[s].ln()];
            acc[s] = self.hmc_alpha[s].transition(&mut u, |u, g| alpha_log_post(u[0], &counts, total, kdim, mu_a, s2_a, g), rng);
            self.state.alpha[s] = u[0].exp();
        }
        acc
    }

    /// One full sweep in the order 1 → 5.
    pub fn sweep<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<(), SamplerError> {
        self.step1_impute(rng);
        self.step2_update_c1(rng);
        self.step2_update_c2(rng);
        self.step3_update_mu0_b0(rng);
        self.step4_update_params_weights(rng);
        self.step5_update_alphas(rng);
        self.counters.sweeps += 1;
        let n = self.counters.sweeps as usize;
        if self.cfg.audit_every > 0 && n % self.cfg.audit_every == 0 {
            self.audit()?;
        }
        if self.cfg.rebuild_every > 0 && n % self.cfg.rebuild_every == 0 {
            self.rebuild_stats();
            self.counters.rebuilds += 1;
        }
        Ok(())
    }

    /// Recounts occupancy from labels and checks every state invariant.
    pub fn audit(&mut self) -> Result<(), SamplerError> {
        self.counters.audits += 1;
        self.state.check_invariants().map_err(SamplerError::Invariant)?;
        if let Some(y) = self.y {
            for s in 0..2 {
                for (i, o) in y[s].iter().enumerate() {
                    let v = self.state.y_latent[s][i];
                    let ok = match o.bounds() {
                        None => v == o.y,
                        Some((l, u)) => v > l && v < u,
                    };
                    if !ok {
                        return Err(SamplerError::Invariant(format!("arm {s} row {i}: latent outcome {v} outside its interval")));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn finish_adaptation(&mut self) {
        self.hmc_hyper.finish_adaptation();
        for h in &mut self.hmc_alpha {
            h.finish_adaptation();
        }
    }

    /// Response sufficient statistics per arm and cluster (built from latent outcomes).
    pub fn response_stats(&self) -> &[Vec<ContStat<f64>>; 2] {
        &self.resp
    }

    /// Overwrites labels and latent outcomes, then rebuilds every statistic. Used by tests that
    /// hold assignments fixed.
    pub fn set_labels(&mut self, c1: Vec<usize>, c2: Vec<usize>) -> Result<(), SamplerError> {
        let k = self.cfg.k;
        let mut n = [vec![0usize; k], vec![0usize; k]];
        for (s, c) in [&c1, &c2].into_iter().enumerate() {
            if c.len() != self.x[s].len() || c.iter().any(|&j| j >= k) {
                return Err(SamplerError::Data("label vector does not match the study".into()));
            }
            for &j in c {
                n[s][j] += 1;
            }
        }
        self.state.c = [c1, c2];
        self.state.n = n;
        self.rebuild_stats();
        let support = self.state.k_n2() as f64;
        for j in 0..k {
            self.state.pi[0][j] = if self.state.n[1][j] > 0 { 1.0 / support } else { 0.0 };
        }
        let total: f64 = self.state.pi[0].iter().sum();
        self.state.pi[0].iter_mut().for_each(|p| *p /= total);
        self.state.check_invariants().map_err(SamplerError::Invariant)
    }

    /// Replaces (μ₀, b₀, α₁, α₂).
    pub fn set_hyper(&mut self, mu0: f64, b0: f64, alpha: [f64; 2]) {
        self.state.mu0 = mu0;
        self.state.b0 = b0;
        self.state.alpha = alpha;
        self.invalidate_resp();
    }
}

fn normalize_ln(lw: &mut [f64]) {
    let m = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut t = 0.0;
    for w in lw.iter_mut() {
        *w = (*w - m).exp();
        t += *w;
    }
    for w in lw.iter_mut() {
        *w /= t;
    }
}

/// Fallback when the censoring interval has no numerical mass under the predictive: a uniform draw
/// from a narrow band just inside the bound nearest the predictive location.
fn near_bound_draw<R: Rng + ?Sized>(t: &StudentT<f64>, l: f64, u: f64, rng: &mut R) -> f64 {
    let width = t.scale() * 1e-3;
    let v: f64 = rng.random::<f64>().max(1e-12);
    let x = if l.is_finite() && (!u.is_finite() || (l - t.loc()).abs() <= (u - t.loc()).abs()) {
        l + v * width.min(if u.is_finite() { (u - l) * 0.5 } else { width })
    } else {
        u - v * width.min(if l.is_finite() { (u - l) * 0.5 } else { width })
    };
    if x > l && x < u {
        x
    } else {
        0.5 * (l + u)
    }
}

fn grand_mean(y: Option<[&[CensoredOutcome]; 2]>) -> f64 {
    let Some(y) = y else { return 0.0 };
    let obs: Vec<f64> = y.iter().flat_map(|a| a.iter()).filter(|o| o.is_observed()).map(|o| o.y).collect();
    if !obs.is_empty() {
        return obs.iter().sum::<f64>() / obs.len() as f64;
    }
    let finite: Vec<f64> = y.iter().flat_map(|a| a.iter()).map(|o| o.y).filter(|v| v.is_finite()).collect();
    if finite.is_empty() {
        0.0
    } else {
        finite.iter().sum::<f64>() / finite.len() as f64
    }
}

/// Log posterior of (μ₀, b̃ = log b₀) with the cluster means and variances integrated out, up to a
/// constant; fills the gradient.
pub fn hyper_log_post(mu0: f64, bt: f64, stats: &[ContStat<f64>], r: &ResponseHyper, m_mu: f64, grad: &mut [f64]) -> f64 {
    let b0 = bt.exp();
    let mut lp = -(mu0 - m_mu).powi(2) / (2.0 * r.s2_mu) - (bt - r.m_b).powi(2) / (2.0 * r.s2_b);
    let mut g_mu = -(mu0 - m_mu) / r.s2_mu;
    let mut g_b = -(bt - r.m_b) / r.s2_b;
    let k0 = r.kappa0;
    for s in stats {
        let n = s.n as f64;
        let kn = k0 + n;
        let d = 0.5 * (k0 * mu0 * mu0 + s.sumsq - (k0 * mu0 + s.sum).powi(2) / kn);
        let d = d.max(0.0);
        let an = r.a0 + 0.5 * n;
        let denom = b0 + d;
        lp += r.a0 * bt - an * denom.ln();
        let dd = k0 * (n * mu0 - s.sum) / kn;
        g_mu -= an * dd / denom;
        g_b += r.a0 - an * b0 / denom;
    }
    grad[0] = g_mu;
    grad[1] = g_b;
    lp
}

/// Log posterior of u = log α for a symmetric Dirichlet–multinomial partition over `kdim`
/// components with the given nonzero occupancy counts; fills the gradient.
pub fn alpha_log_post(u: f64, counts: &[usize], total: usize, kdim: f64, mu_a: f64, s2_a: f64, grad: &mut [f64]) -> f64 {
    let a = u.exp();
    let ak = a / kdim;
    let mut lp = -ln_rising(a, total) - (u - mu_a).powi(2) / (2.0 * s2_a);
    let mut g = -digamma_rising(a, total);
    for &c in counts {
        lp += ln_rising(ak, c);
        g += digamma_rising(ak, c) / kdim;
    }
    grad[0] = a * g - (u - mu_a) / s2_a;
    lp
}

/// b = (a − 1) · pooled variance for every continuous column with at least two observed values.
fn scale_to_data(kernel: &mut KernelHyper<f64>, x: [&[Vec<Cell>]; 2]) {
    for (l, prior) in kernel.columns.iter_mut().enumerate() {
        let ColumnPrior::Continuous(h) = prior else { continue };
        let vals: Vec<f64> = x.iter().flat_map(|a| a.iter()).filter_map(|r| r[l].value()).collect();
        if vals.len() < 2 {
            continue;
        }
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (vals.len() - 1) as f64;
        if var > 0.0 && h.a > 1.0 {
            h.b = (h.a - 1.0) * var;
        }
    }
}

/// Initial labels: k-means on a numeric embedding for RWD rows, nearest occupied centroid for
/// trial rows; censored outcomes start inside their intervals.
fn initial_state<R: Rng + ?Sized>(
    x: [&[Vec<Cell>]; 2],
    y: Option<[&[CensoredOutcome]; 2]>,
    cfg: &ChainConfig,
    m_mu: f64,
    rng: &mut R,
) -> GibbsState {
    let k = cfg.k;
    let emb = embed(x);
    let n2 = x[1].len();
    let m = k.min(n2);
    let centers = kmeans(&emb[1], m, 10, rng);
    let c2: Vec<usize> = emb[1].iter().map(|v| nearest(v, &centers, None)).collect();
    let mut n = [vec![0usize; k], vec![0usize; k]];
    for &j in &c2 {
        n[1][j] += 1;
    }
    // Centroids from final members, so that trial rows only go to occupied clusters.
    let dim = emb[1].first().map_or(0, Vec::len);
    let mut cent = vec![vec![0.0; dim]; m];
    for (v, &j) in emb[1].iter().zip(&c2) {
        for (c, x) in cent[j].iter_mut().zip(v) {
            *c += x / n[1][j] as f64;
        }
    }
    let occupied: Vec<bool> = (0..m).map(|j| n[1][j] > 0).collect();
    let c1: Vec<usize> = emb[0].iter().map(|v| nearest(v, &cent, Some(&occupied))).collect();
    for &j in &c1 {
        n[0][j] += 1;
    }
    let y_latent = match y {
        Some(y) => [initial_latent(y[0], m_mu), initial_latent(y[1], m_mu)],
        None => [Vec::new(), Vec::new()],
    };
    let support = n[1].iter().filter(|&&v| v > 0).count() as f64;
    let pi1 = (0..k).map(|j| if n[1][j] > 0 { 1.0 / support } else { 0.0 }).collect();
    GibbsState {
        c: [c1, c2],
        y_latent,
        mu: [vec![m_mu; k], vec![m_mu; k]],
        sigma2: [vec![1.0; k], vec![1.0; k]],
        pi: [pi1, vec![1.0 / k as f64; k]],
        alpha: [1.0, 1.0],
        mu0: m_mu,
        b0: 5.0,
        n,
    }
}

fn initial_latent(y: &[CensoredOutcome], m_mu: f64) -> Vec<f64> {
    y.iter()
        .map(|o| match o.bounds() {
            None => o.y,
            Some((l, u)) if l.is_finite() && u.is_finite() => 0.5 * (l + u),
            Some((l, _)) if l.is_finite() => l + 0.5,
            Some((_, u)) if u.is_finite() => u - 0.5,
            Some(_) => m_mu,
        })
        .collect()
}

/// Categoricals one-hot (missing → all zeros), continuous standardized over both arms (missing → 0).
fn embed(x: [&[Vec<Cell>]; 2]) -> [Vec<Vec<f64>>; 2] {
    let p = x[0].first().or(x[1].first()).map_or(0, Vec::len);
    let mut levels = vec![0usize; p];
    let mut is_cont = vec![false; p];
    let mut sums = vec![(0.0, 0.0, 0usize); p];
    for row in x.iter().flat_map(|a| a.iter()) {
        for (l, c) in row.iter().enumerate() {
            match c {
                Cell::Level(v) => levels[l] = levels[l].max(*v as usize + 1),
                Cell::Value(v) => {
                    is_cont[l] = true;
                    sums[l].0 += v;
                    sums[l].1 += v * v;
                    sums[l].2 += 1;
                }
                Cell::Missing => {}
            }
        }
    }
    let moments: Vec<(f64, f64)> = sums
        .iter()
        .map(|&(s, s2, n)| {
            if n < 2 {
                return (0.0, 1.0);
            }
            let mean = s / n as f64;
            let var = (s2 / n as f64 - mean * mean).max(0.0);
            (mean, if var > 0.0 { var.sqrt() } else { 1.0 })
        })
        .collect();
    let f = |row: &Vec<Cell>| {
        let mut v = Vec::new();
        for (l, c) in row.iter().enumerate() {
            if is_cont[l] {
                v.push(match c {
                    Cell::Value(x) => (x - moments[l].0) / moments[l].1,
                    _ => 0.0,
                });
            } else {
                for lev in 0..levels[l] {
                    v.push(if *c == Cell::Level(lev as u32) { 1.0 } else { 0.0 });
                }
            }
        }
        v
    };
    [x[0].iter().map(f).collect(), x[1].iter().map(f).collect()]
}

fn sqdist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(v: &[f64], centers: &[Vec<f64>], allowed: Option<&[bool]>) -> usize {
    let mut best = (f64::INFINITY, usize::MAX);
    for (j, c) in centers.iter().enumerate() {
        if allowed.is_some_and(|a| !a[j]) {
            continue;
        }
        let d = sqdist(v, c);
        if d < best.0 || best.1 == usize::MAX {
            best = (d, j);
        }
    }
    best.1
}

/// k-means++ seeding followed by Lloyd iterations.
fn kmeans<R: Rng + ?Sized>(pts: &[Vec<f64>], m: usize, iters: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let n = pts.len();
    let mut centers = vec![pts[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = pts.iter().map(|p| sqdist(p, &centers[0])).collect();
    while centers.len() < m {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let u = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, d) in d2.iter().enumerate() {
                acc += d;
                if u < acc {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        centers.push(pts[idx].clone());
        for (d, p) in d2.iter_mut().zip(pts) {
            *d = d.min(sqdist(p, centers.last().unwrap()));
        }
    }
    let dim = pts[0].len();
    for _ in 0..iters {
        let mut sum = vec![vec![0.0; dim]; m];
        let mut cnt = vec![0usize; m];
        for p in pts {
            let j = nearest(p, &centers, None);
            cnt[j] += 1;
            for (s, x) in sum[j].iter_mut().zip(p) {
                *s += x;
            }
        }
        for j in 0..m {
            if cnt[j] > 0 {
                centers[j] = sum[j].iter().map(|s| s / cnt[j] as f64).collect();
            }
        }
    }
    centers
}
