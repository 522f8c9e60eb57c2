//! Common-atoms mixture models for building synthetic control arms from real-world data.
//!
//! The numerical layer (special functions, Student-t, conjugate kernels, classical survival and
//! regression baselines, rank statistics) is generic over [`Real`]; the sampler, weighting and
//! simulation stages work in `f64`.

pub mod analysis;
pub mod baselines;
pub mod data;
pub mod effect;
pub mod equivalence;
pub mod gof;
pub mod kernels;
pub mod rng;
pub mod sampler;
pub mod scalar;
pub mod simgen;
pub mod special;
pub mod student_t;
pub mod weights;

pub use scalar::Real;

pub type StudentT64 = student_t::StudentT<f64>;
pub type StudentT32 = student_t::StudentT<f32>;
pub type NigHyper64 = kernels::NigHyper<f64>;
pub type ContStat64 = kernels::ContStat<f64>;
pub type KernelHyper64 = kernels::KernelHyper<f64>;
pub type ClusterSuffStats64 = kernels::ClusterSuffStats<f64>;
pub type KmCurve64 = baselines::KmCurve<f64>;
pub type LogrankResult64 = baselines::LogrankResult<f64>;
pub type OlsFit64 = baselines::OlsFit<f64>;
pub type OlsEffect64 = baselines::OlsEffect<f64>;
