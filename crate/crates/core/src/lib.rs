//! Deterministic DDIM sampling and three inversion procedures (one-shot DDIM
//! inversion, fixed-point inversion, and fixed-point inversion after a
//! prompt-aware adjustment of the encoded latent), exercised against
//! closed-form Gaussian-mixture noise predictors.
//!
//! ```
//! use fpi_core::denoiser::{Condition, GaussianMixtureModel, GuidanceConfig, MixtureDenoiser};
//! use fpi_core::inversion::{invert, FixedPointConfig};
//! use fpi_core::latent::LatentVector;
//! use fpi_core::sampler::generate;
//! use fpi_core::schedule::ScheduleConfig;
//!
//! let schedule = ScheduleConfig::default().build().unwrap();
//! let mixture = GaussianMixtureModel::standard_normal(2).unwrap();
//! let model = MixtureDenoiser::new(mixture, schedule);
//! let seed = LatentVector::new(vec![0.3, -1.1]).unwrap();
//! let guidance = GuidanceConfig::new(1.0).unwrap();
//! let cond = Condition::ComponentPrompt(0);
//!
//! let z0 = generate(&model, &seed, cond, guidance).unwrap().final_latent().clone();
//! let cfg = FixedPointConfig { max_iterations: 50, residual_tolerance: 1e-12, ..Default::default() };
//! let inv = invert(&model, &z0, cond, guidance, &cfg).unwrap();
//! assert!(inv.seed.distance(&seed) < 1e-8);
//! ```

pub mod bench;
pub mod codec;
pub mod denoiser;
pub mod error;
pub mod inversion;
pub mod latent;
pub mod sampler;
pub mod schedule;
pub mod seedspace;

pub use error::{Error, Result};
pub use latent::{LatentVector, PixelVector};
