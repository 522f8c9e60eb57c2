//! Location-scale Student-t distribution with tail-accurate CDF, quantile and truncated sampling.

use rand::distr::Open01;
use rand::Rng;
use thiserror::Error;

use crate::scalar::Real;
use crate::special::{inc_beta, ln_gamma};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TDistError {
    #[error("invalid Student-t parameters: df={df}, scale={scale}")]
    InvalidParams { df: f64, scale: f64 },
    #[error("truncation interval ({lower}, {upper}) is empty")]
    EmptyInterval { lower: f64, upper: f64 },
    #[error("truncation interval ({lower}, {upper}) carries vanishing mass {mass:e}")]
    VanishingMass { lower: f64, upper: f64, mass: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StudentT<F> {
    df: F,
    loc: F,
    scale: F,
    ln_norm: F,
}

impl<F: Real> StudentT<F> {
    pub fn new(df: F, loc: F, scale: F) -> Result<Self, TDistError> {
        if !(df > F::zero() && scale > F::zero() && df.is_finite() && scale.is_finite() && loc.is_finite()) {
            return Err(TDistError::InvalidParams { df: df.as_f64(), scale: scale.as_f64() });
        }
        let half = F::lit(0.5);
        let ln_norm = ln_gamma((df + F::one()) * half) - ln_gamma(df * half) - half * (df * F::PI()).ln() - scale.ln();
        Ok(Self { df, loc, scale, ln_norm })
    }

    /// Builds the distribution from a squared scale, as produced by conjugate updates.
    pub fn from_scale2(df: F, loc: F, scale2: F) -> Result<Self, TDistError> {
        Self::new(df, loc, scale2.sqrt())
    }

    pub fn df(&self) -> F {
        self.df
    }
    pub fn loc(&self) -> F {
        self.loc
    }
    pub fn scale(&self) -> F {
        self.scale
    }

    #[inline]
    fn standardize(&self, x: F) -> F {
        (x - self.loc) / self.scale
    }

    pub fn ln_pdf(&self, x: F) -> F {
        let t = self.standardize(x);
        self.ln_norm - (self.df + F::one()) * F::lit(0.5) * (t * t / self.df).ln_1p()
    }

    pub fn pdf(&self, x: F) -> F {
        self.ln_pdf(x).exp()
    }

    /// P(T > |t|) for the standard variate.
    fn upper_tail_std(&self, t: F) -> F {
        let t2 = t * t;
        let denom = self.df + t2;
        F::lit(0.5) * inc_beta(self.df * F::lit(0.5), F::lit(0.5), self.df / denom, t2 / denom)
    }

    pub fn cdf(&self, x: F) -> F {
        if x == F::neg_infinity() {
            return F::zero();
        }
        if x == F::infinity() {
            return F::one();
        }
        let t = self.standardize(x);
        let tail = self.upper_tail_std(t);
        if t < F::zero() {
            tail
        } else {
            F::one() - tail
        }
    }

    /// Survival function 1 − F(x), accurate in the upper tail.
    pub fn sf(&self, x: F) -> F {
        if x == F::neg_infinity() {
            return F::one();
        }
        if x == F::infinity() {
            return F::zero();
        }
        let t = self.standardize(x);
        let tail = self.upper_tail_std(t);
        if t > F::zero() {
            tail
        } else {
            F::one() - tail
        }
    }

    /// Probability of the open interval (lower, upper), computed in whichever tail keeps precision.
    pub fn interval_mass(&self, lower: F, upper: F) -> F {
        if lower >= upper {
            return F::zero();
        }
        if lower >= self.loc {
            self.sf(lower) - self.sf(upper)
        } else {
            self.cdf(upper) - self.cdf(lower)
        }
    }

    /// Standardized t ≥ 0 with P(T > t) = q, for q ∈ (0, 1/2].
    fn upper_tail_inverse_std(&self, q: F) -> F {
        let half = F::lit(0.5);
        if q >= half {
            return F::zero();
        }
        let ln_q = q.ln();
        let mut lo = F::zero();
        let mut hi = F::one();
        while self.upper_tail_std(hi) > q {
            lo = hi;
            hi = hi * F::lit(2.0);
            if !hi.is_finite() {
                return F::max_value();
            }
        }
        let mut t = (lo + hi) * half;
        let tol = F::lit(1e-13).max(F::epsilon() * F::lit(4.0));
        let std_ln_norm = self.ln_norm + self.scale.ln();
        for _ in 0..200 {
            let tail = self.upper_tail_std(t);
            if tail > q {
                lo = t;
            } else {
                hi = t;
            }
            let ln_pdf = std_ln_norm - (self.df + F::one()) * half * (t * t / self.df).ln_1p();
            // Newton step on ln P(T > t), which is close to linear in the far tail.
            let step = (tail.ln() - ln_q) * (tail.ln() - ln_pdf).exp();
            let mut next = t + step;
            if !(next > lo && next < hi) || !next.is_finite() {
                next = (lo + hi) * half;
            }
            let converged = (next - t).abs() <= tol * (F::one() + t.abs()) || (hi - lo) <= tol * (F::one() + hi);
            t = next;
            if converged {
                break;
            }
        }
        t
    }

    /// Inverse CDF.
    pub fn quantile(&self, p: F) -> F {
        if p <= F::zero() {
            return F::neg_infinity();
        }
        if p >= F::one() {
            return F::infinity();
        }
        let half = F::lit(0.5);
        let t = if p < half {
            -self.upper_tail_inverse_std(p)
        } else {
            self.upper_tail_inverse_std(F::one() - p)
        };
        self.loc + self.scale * t
    }

    /// Inverse survival function: x with 1 − F(x) = q.
    pub fn isf(&self, q: F) -> F {
        if q <= F::zero() {
            return F::infinity();
        }
        if q >= F::one() {
            return F::neg_infinity();
        }
        let half = F::lit(0.5);
        let t = if q <= half {
            self.upper_tail_inverse_std(q)
        } else {
            -self.upper_tail_inverse_std(F::one() - q)
        };
        self.loc + self.scale * t
    }

    /// Unconstrained draw by inversion.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> F {
        let u = F::lit(rng.sample(Open01));
        self.quantile(u)
    }

    /// Inverse-CDF draw restricted to the open interval (lower, upper).
    pub fn sample_truncated<R: Rng + ?Sized>(&self, lower: F, upper: F, rng: &mut R) -> Result<F, TDistError> {
        if !(lower < upper) {
            return Err(TDistError::EmptyInterval { lower: lower.as_f64(), upper: upper.as_f64() });
        }
        let u = F::lit(rng.sample(Open01));
        let x = if lower >= self.loc {
            // Both bounds in the upper half: work with survival probabilities.
            let (ql, qu) = (self.sf(lower), self.sf(upper));
            let mass = ql - qu;
            self.check_mass(lower, upper, mass)?;
            self.isf(qu + u * mass)
        } else if upper <= self.loc {
            let (pl, pu) = (self.cdf(lower), self.cdf(upper));
            let mass = pu - pl;
            self.check_mass(lower, upper, mass)?;
            self.quantile(pl + u * mass)
        } else {
            let (pl, pu) = (self.cdf(lower), self.cdf(upper));
            let mass = pu - pl;
            self.check_mass(lower, upper, mass)?;
            self.quantile(pl + u * mass)
        };
        Ok(clamp_open(x, lower, upper))
    }

    fn check_mass(&self, lower: F, upper: F, mass: F) -> Result<(), TDistError> {
        if !(mass.as_f64() >= 1e-300) {
            return Err(TDistError::VanishingMass { lower: lower.as_f64(), upper: upper.as_f64(), mass: mass.as_f64() });
        }
        Ok(())
    }
}

/// Pulls a value that rounding pushed onto a bound back inside the open interval.
fn clamp_open<F: Real>(x: F, lower: F, upper: F) -> F {
    if x > lower && x < upper {
        return x;
    }
    let inside_lo = if lower.is_finite() { lower + (lower.abs() + F::one()) * F::epsilon() * F::lit(4.0) } else { lower };
    let inside_hi = if upper.is_finite() { upper - (upper.abs() + F::one()) * F::epsilon() * F::lit(4.0) } else { upper };
    if x <= lower {
        if inside_lo < upper {
            inside_lo
        } else {
            (lower + upper) * F::lit(0.5)
        }
    } else if inside_hi > lower {
        inside_hi
    } else {
        (lower + upper) * F::lit(0.5)
    }
}
