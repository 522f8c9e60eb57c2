//! Kaplan–Meier, logrank and least-squares treatment-effect baselines.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;
use crate::special::{gamma_q, inc_beta};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BaselineError {
    #[error("time {time} at position {index} is not positive")]
    NonPositiveTime { index: usize, time: String },
    #[error("input lengths differ")]
    LengthMismatch,
    #[error("logrank test needs two nonempty groups")]
    SingleGroup,
    #[error("no events observed")]
    NoEvents,
    #[error("design is rank deficient; collinear columns: {0:?}")]
    RankDeficient(Vec<String>),
    #[error("too few observations ({n}) for {p} parameters")]
    TooFewRows { n: usize, p: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KmCurve<F> {
    pub times: Vec<F>,
    pub survival: Vec<F>,
    pub at_risk: Vec<usize>,
    pub events: Vec<usize>,
    /// Greenwood variance of S(t).
    pub variance: Vec<F>,
    pub lower: Vec<F>,
    pub upper: Vec<F>,
}

impl<F: Real> KmCurve<F> {
    /// Step-function value at `t`.
    pub fn at(&self, t: F) -> F {
        let k = self.times.partition_point(|&s| s <= t);
        if k == 0 {
            F::one()
        } else {
            self.survival[k - 1]
        }
    }
}

fn check_times<F: Real>(times: &[F]) -> Result<(), BaselineError> {
    for (index, &t) in times.iter().enumerate() {
        if !(t > F::zero()) {
            return Err(BaselineError::NonPositiveTime { index, time: format!("{t}") });
        }
    }
    Ok(())
}

fn sorted_order<F: Real>(times: &[F]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..times.len()).collect();
    idx.sort_by(|&a, &b| times[a].partial_cmp(&times[b]).unwrap());
    idx
}

/// Product-limit estimate at each distinct event time with Greenwood variance and
/// log-transformed 95% intervals. `event[i]` is true for an observed event.
pub fn km_estimate<F: Real>(times: &[F], event: &[bool]) -> Result<KmCurve<F>, BaselineError> {
    if times.len() != event.len() {
        return Err(BaselineError::LengthMismatch);
    }
    check_times(times)?;
    let order = sorted_order(times);
    let z = F::lit(1.959963984540054);
    let mut curve = KmCurve { times: vec![], survival: vec![], at_risk: vec![], events: vec![], variance: vec![], lower: vec![], upper: vec![] };
    let mut s = F::one();
    let mut gw = F::zero();
    let mut risk = times.len();
    let mut i = 0;
    while i < order.len() {
        let t = times[order[i]];
        let mut d = 0;
        let mut m = 0;
        while i + m < order.len() && times[order[i + m]] == t {
            d += event[order[i + m]] as usize;
            m += 1;
        }
        if d > 0 {
            let (nf, df) = (F::from_usize_lossy(risk), F::from_usize_lossy(d));
            s = s * (F::one() - df / nf);
            if risk > d {
                gw = gw + df / (nf * (nf - df));
            }
            let var = s * s * gw;
            let (lo, hi) = if s > F::zero() && s < F::one() {
                let half = z * gw.sqrt();
                (s.powf((-half).exp()).max(F::zero()), s.powf(half.exp()).min(F::one()))
            } else {
                (s, s)
            };
            curve.times.push(t);
            curve.survival.push(s);
            curve.at_risk.push(risk);
            curve.events.push(d);
            curve.variance.push(var);
            curve.lower.push(lo);
            curve.upper.push(hi);
        }
        risk -= m;
        i += m;
    }
    Ok(curve)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogrankResult<F> {
    pub statistic: F,
    pub p_value: F,
    pub observed_minus_expected: F,
    pub variance: F,
}

/// Two-group logrank test; `group[i]` is true for the first group.
pub fn logrank_test<F: Real>(group: &[bool], times: &[F], event: &[bool]) -> Result<LogrankResult<F>, BaselineError> {
    if group.len() != times.len() || times.len() != event.len() {
        return Err(BaselineError::LengthMismatch);
    }
    check_times(times)?;
    let n_a = group.iter().filter(|&&g| g).count();
    if n_a == 0 || n_a == group.len() {
        return Err(BaselineError::SingleGroup);
    }
    if !event.iter().any(|&e| e) {
        return Err(BaselineError::NoEvents);
    }
    let order = sorted_order(times);
    let (mut risk_a, mut risk) = (n_a, group.len());
    let (mut o_minus_e, mut var) = (F::zero(), F::zero());
    let mut i = 0;
    while i < order.len() {
        let t = times[order[i]];
        let (mut d, mut d_a, mut m, mut m_a) = (0usize, 0usize, 0usize, 0usize);
        while i + m < order.len() && times[order[i + m]] == t {
            let r = order[i + m];
            if event[r] {
                d += 1;
                d_a += group[r] as usize;
            }
            m_a += group[r] as usize;
            m += 1;
        }
        if d > 0 {
            let (n, na, df) = (F::from_usize_lossy(risk), F::from_usize_lossy(risk_a), F::from_usize_lossy(d));
            o_minus_e = o_minus_e + F::from_usize_lossy(d_a) - df * na / n;
            if risk > 1 {
                var = var + df * (na / n) * (F::one() - na / n) * (n - df) / (n - F::one());
            }
        }
        risk -= m;
        risk_a -= m_a;
        i += m;
    }
    let statistic = if var > F::zero() { o_minus_e * o_minus_e / var } else { F::zero() };
    let p_value = chi2_1_sf(statistic);
    Ok(LogrankResult { statistic, p_value, observed_minus_expected: o_minus_e, variance: var })
}

/// Upper tail of the chi-square distribution with one degree of freedom.
pub fn chi2_1_sf<F: Real>(x: F) -> F {
    if x <= F::zero() {
        F::one()
    } else {
        gamma_q(F::lit(0.5), x * F::lit(0.5))
    }
}

/// Two-sided Student-t p-value with `df` degrees of freedom.
pub fn t_two_sided_p<F: Real>(t: F, df: F) -> F {
    if !t.is_finite() {
        return F::zero();
    }
    let x = df / (df + t * t);
    inc_beta(df * F::lit(0.5), F::lit(0.5), x, F::one() - x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OlsFit<F> {
    pub coef: Vec<F>,
    pub se: Vec<F>,
    pub residuals: Vec<F>,
    pub sigma2: F,
    pub df: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OlsEffect<F> {
    pub delta: F,
    pub se: F,
    pub t: F,
    pub p_value: F,
    pub df: usize,
}

/// Least squares by Householder QR on a row-major design with homoskedastic standard errors.
pub fn ols<F: Real>(x: &[Vec<F>], y: &[F], names: &[String]) -> Result<OlsFit<F>, BaselineError> {
    let n = y.len();
    let p = x.first().map_or(0, |r| r.len());
    if x.len() != n || x.iter().any(|r| r.len() != p) {
        return Err(BaselineError::LengthMismatch);
    }
    if n <= p {
        return Err(BaselineError::TooFewRows { n, p });
    }
    // column-major working copy
    let mut a: Vec<Vec<F>> = (0..p).map(|j| x.iter().map(|r| r[j]).collect()).collect();
    let mut qty = y.to_vec();
    let col_norms: Vec<F> = a.iter().map(|c| c.iter().map(|&v| v * v).sum::<F>().sqrt()).collect();
    let mut rdiag = vec![F::zero(); p];
    let tol = F::lit(1e3) * F::epsilon() * F::from_usize_lossy(n);
    let mut collinear = vec![];
    for k in 0..p {
        let norm = a[k][k..].iter().map(|&v| v * v).sum::<F>().sqrt();
        if !(norm > tol * col_norms[k].max(F::min_positive_value())) {
            collinear.push(names.get(k).cloned().unwrap_or_else(|| format!("x{k}")));
            continue;
        }
        let alpha = if a[k][k] > F::zero() { -norm } else { norm };
        let mut v: Vec<F> = a[k][k..].to_vec();
        v[0] = v[0] - alpha;
        let vnorm2: F = v.iter().map(|&t| t * t).sum();
        rdiag[k] = alpha;
        a[k][k] = alpha;
        for r in a[k][k + 1..].iter_mut() {
            *r = F::zero();
        }
        if vnorm2 > F::zero() {
            let reflect = |col: &mut [F]| {
                let dot: F = v.iter().zip(col.iter()).map(|(&vi, &ci)| vi * ci).sum();
                let f = F::lit(2.0) * dot / vnorm2;
                for (c, &vi) in col.iter_mut().zip(&v) {
                    *c = *c - f * vi;
                }
            };
            for col in a.iter_mut().skip(k + 1) {
                reflect(&mut col[k..]);
            }
            reflect(&mut qty[k..]);
        }
    }
    if !collinear.is_empty() {
        return Err(BaselineError::RankDeficient(collinear));
    }
    // back substitution R b = Qᵀy
    let mut coef = vec![F::zero(); p];
    for k in (0..p).rev() {
        let mut s = qty[k];
        for (j, cj) in coef.iter().enumerate().skip(k + 1) {
            s = s - a[j][k] * *cj;
        }
        coef[k] = s / rdiag[k];
    }
    let residuals: Vec<F> = x.iter().zip(y).map(|(r, &yi)| yi - r.iter().zip(&coef).map(|(&xi, &b)| xi * b).sum::<F>()).collect();
    let df = n - p;
    let sigma2 = residuals.iter().map(|&e| e * e).sum::<F>() / F::from_usize_lossy(df);
    // diag((RᵀR)⁻¹) from R⁻¹ rows
    let mut rinv = vec![vec![F::zero(); p]; p];
    for j in 0..p {
        rinv[j][j] = F::one() / rdiag[j];
        for i in (0..j).rev() {
            let mut s = F::zero();
            for (m, row) in rinv.iter().enumerate().take(j + 1).skip(i + 1) {
                s = s + a[m][i] * row[j];
            }
            rinv[i][j] = -s / rdiag[i];
        }
    }
    let se = (0..p).map(|i| (sigma2 * rinv[i].iter().map(|&v| v * v).sum::<F>()).sqrt()).collect();
    Ok(OlsFit { coef, se, residuals, sigma2, df })
}

/// Effect of a binary indicator on `y` by least squares on `[1, z, covariates...]`.
pub fn ols_effect<F: Real>(y: &[F], z: &[bool], covariates: Option<&[Vec<F>]>) -> Result<OlsEffect<F>, BaselineError> {
    if z.len() != y.len() || covariates.is_some_and(|c| c.len() != y.len()) {
        return Err(BaselineError::LengthMismatch);
    }
    let extra = covariates.and_then(|c| c.first()).map_or(0, |r| r.len());
    let mut names = vec!["intercept".to_string(), "treatment".to_string()];
    names.extend((0..extra).map(|j| format!("covariate_{j}")));
    let design: Vec<Vec<F>> = (0..y.len())
        .map(|i| {
            let mut r = vec![F::one(), if z[i] { F::one() } else { F::zero() }];
            if let Some(c) = covariates {
                r.extend_from_slice(&c[i]);
            }
            r
        })
        .collect();
    let fit = ols(&design, y, &names)?;
    let (delta, se) = (fit.coef[1], fit.se[1]);
    let t = if se > F::zero() {
        delta / se
    } else if delta == F::zero() {
        F::zero()
    } else {
        delta.signum() * F::infinity()
    };
    let p_value = t_two_sided_p(t, F::from_usize_lossy(fit.df));
    Ok(OlsEffect { delta, se, t, p_value, df: fit.df })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn km_all_events() {
        let c = km_estimate(&[1.0f64, 2.0, 3.0], &[true, true, true]).unwrap();
        let expect = [2.0 / 3.0, 1.0 / 3.0, 0.0];
        for (s, e) in c.survival.iter().zip(expect) {
            assert!((s - e).abs() < 1e-15);
        }
    }

    #[test]
    fn km_all_censored_is_flat() {
        let c = km_estimate(&[1.0f64, 2.0, 3.0], &[false, false, false]).unwrap();
        assert!(c.times.is_empty());
        assert_eq!(c.at(10.0), 1.0);
    }

    #[test]
    fn km_with_censored_middle() {
        let c = km_estimate(&[1.0f64, 2.0, 3.0], &[true, false, true]).unwrap();
        assert_eq!(c.times, vec![1.0, 3.0]);
        assert!((c.survival[0] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(c.survival[1], 0.0);
        assert_eq!(c.at_risk, vec![3, 1]);
    }

    #[test]
    fn km_rejects_nonpositive() {
        assert!(matches!(km_estimate(&[1.0, 0.0], &[true, true]), Err(BaselineError::NonPositiveTime { index: 1, .. })));
    }

    #[test]
    fn logrank_symmetric_groups() {
        let t = [1.0f64, 2.0, 3.0, 1.0, 2.0, 3.0];
        let g = [true, true, true, false, false, false];
        let r = logrank_test(&g, &t, &[true; 6]).unwrap();
        assert!(r.statistic.abs() < 1e-15);
        assert!((r.p_value - 1.0).abs() < 1e-15);
        assert_eq!(logrank_test(&[true; 3], &[1.0, 2.0, 3.0], &[true; 3]), Err(BaselineError::SingleGroup));
    }

    #[test]
    fn ols_exact_fit() {
        let y = [0.0f64, 2.5, 0.0, 2.5, 0.0];
        let z = [false, true, false, true, false];
        let e = ols_effect(&y, &z, None).unwrap();
        assert!((e.delta - 2.5).abs() < 1e-12);
        assert!(e.se.abs() < 1e-12);
    }

    #[test]
    fn ols_names_collinear_column() {
        let x = vec![vec![1.0, 2.0], vec![1.0, 2.0], vec![1.0, 2.0]];
        let err = ols(&x, &[1.0, 2.0, 3.0], &["a".into(), "b".into()]).unwrap_err();
        assert_eq!(err, BaselineError::RankDeficient(vec!["b".into()]));
    }

    #[test]
    fn chi2_reference_value() {
        assert!((chi2_1_sf(3.841458820694124f64) - 0.05).abs() < 1e-12);
    }
}
