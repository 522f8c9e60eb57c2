//! Seed derivation and small random-variate helpers shared by the sampler and generators.
//!
//! All randomness descends from one master seed. A child seed is
//! `splitmix64(parent ^ fnv1a(label) ^ splitmix64(index))`, so the path
//! master → command → replicate → stage is reproducible from its labels alone.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

pub type ChainRng = ChaCha8Rng;

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Child seed for a labelled, indexed stage below `parent`.
pub fn derive_seed(parent: u64, label: &str, index: u64) -> u64 {
    splitmix64(parent ^ fnv1a(label) ^ splitmix64(index))
}

pub fn rng_from_seed(seed: u64) -> ChainRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// log of a Gamma(shape, 1) variate; stays finite for tiny shapes where the variate underflows.
pub fn ln_gamma_variate<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    if shape >= 1.0 {
        Gamma::new(shape, 1.0).expect("positive shape").sample(rng).ln()
    } else {
        // G(a) = G(a + 1) · U^{1/a}
        let g: f64 = Gamma::new(shape + 1.0, 1.0).expect("positive shape").sample(rng);
        let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
        g.ln() + u.ln() / shape
    }
}

/// Dirichlet draw into `out`; computed in log space so tiny concentrations cannot produce 0/0.
pub fn sample_dirichlet<R: Rng + ?Sized>(conc: &[f64], out: &mut [f64], rng: &mut R) {
    debug_assert_eq!(conc.len(), out.len());
    for (o, &a) in out.iter_mut().zip(conc) {
        *o = ln_gamma_variate(a, rng);
    }
    let m = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for o in out.iter_mut() {
        *o = (*o - m).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

/// σ² ~ InvGamma(shape, scale): the reciprocal of a Gamma(shape, rate = scale) variate.
pub fn sample_inv_gamma<R: Rng + ?Sized>(shape: f64, scale: f64, rng: &mut R) -> f64 {
    let g: f64 = Gamma::new(shape, 1.0 / scale).expect("positive parameters").sample(rng);
    1.0 / g
}

/// Index drawn with probabilities proportional to `exp(ln_w)`. Overwrites `ln_w` with the
/// normalized probabilities.
pub fn sample_ln_weights<R: Rng + ?Sized>(ln_w: &mut [f64], rng: &mut R) -> usize {
    let m = ln_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    assert!(m.is_finite(), "all candidate weights are zero or non-finite");
    let mut total = 0.0;
    for w in ln_w.iter_mut() {
        *w = (*w - m).exp();
        total += *w;
    }
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut pick = ln_w.len() - 1;
    for (i, w) in ln_w.iter().enumerate() {
        acc += *w;
        if u < acc {
            pick = i;
            break;
        }
    }
    for w in ln_w.iter_mut() {
        *w /= total;
    }
    pick
}
