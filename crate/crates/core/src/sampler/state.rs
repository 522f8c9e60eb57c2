use serde::{Deserialize, Serialize};

/// One full parameter state. Arrays indexed by arm hold the trial arm at 0 and RWD at 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GibbsState {
    /// Cluster label per row.
    pub c: [Vec<usize>; 2],
    /// Imputed outcome per row (equal to the data for observed rows). Not serialized.
    #[serde(skip, default)]
    pub y_latent: [Vec<f64>; 2],
    pub mu: [Vec<f64>; 2],
    pub sigma2: [Vec<f64>; 2],
    pub pi: [Vec<f64>; 2],
    pub alpha: [f64; 2],
    pub mu0: f64,
    pub b0: f64,
    /// Occupancy n[s][j] = #{i : c[s][i] = j}.
    pub n: [Vec<usize>; 2],
}

impl GibbsState {
    pub fn k(&self) -> usize {
        self.pi[0].len()
    }

    pub fn c1(&self) -> &[usize] {
        &self.c[0]
    }
    pub fn c2(&self) -> &[usize] {
        &self.c[1]
    }
    pub fn pi1(&self) -> &[f64] {
        &self.pi[0]
    }
    pub fn pi2(&self) -> &[f64] {
        &self.pi[1]
    }

    /// Number of clusters holding at least one row of `arm`.
    pub fn occupied(&self, arm: usize) -> usize {
        self.n[arm].iter().filter(|&&n| n > 0).count()
    }

    /// k_{n₂}: support size of the trial-arm weights.
    pub fn k_n2(&self) -> usize {
        self.occupied(1)
    }

    /// Checks every structural invariant; the message names the first violation.
    pub fn check_invariants(&self) -> Result<(), String> {
        let k = self.k();
        for s in 0..2 {
            let mut counts = vec![0usize; k];
            for (i, &c) in self.c[s].iter().enumerate() {
                if c >= k {
                    return Err(format!("arm {s} row {i}: label {c} outside [0, {k})"));
                }
                counts[c] += 1;
            }
            if counts != self.n[s] {
                return Err(format!("arm {s}: occupancy counts disagree with labels"));
            }
            if self.sigma2[s].iter().any(|&v| !(v > 0.0 && v.is_finite())) {
                return Err(format!("arm {s}: non-positive variance"));
            }
            let total: f64 = self.pi[s].iter().sum();
            if (total - 1.0).abs() > 1e-12 || self.pi[s].iter().any(|&p| !(p >= 0.0)) {
                return Err(format!("arm {s}: weights do not form a probability vector (sum {total})"));
            }
        }
        for j in 0..k {
            if self.n[0][j] > 0 && self.n[1][j] == 0 {
                return Err(format!("support constraint violated at cluster {j}"));
            }
            if self.n[1][j] == 0 && self.pi[0][j] != 0.0 {
                return Err(format!("trial weight on RWD-empty cluster {j}"));
            }
        }
        if !(self.alpha[0] > 0.0 && self.alpha[1] > 0.0 && self.b0 > 0.0 && self.mu0.is_finite()) {
            return Err("hyperparameters out of range".into());
        }
        Ok(())
    }
}
