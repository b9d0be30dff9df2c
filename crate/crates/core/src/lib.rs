//! Nested multilevel Monte Carlo with approximate Normal random variables.
//!
//! Cheap surrogates for the inverse Normal distribution function are
//! coupled to exact Normals through a shared uniform, driving four coupled
//! Euler–Maruyama paths per sample. Standard MLMC and the nested
//! approximate-MLMC estimator are built on top.

pub mod experiments;
pub mod inverse_cdf;
pub mod mlmc;
pub mod parallel;
pub mod quadrature;
pub mod rng;
pub mod sde;
pub mod special;
pub mod stats;
