//! A toy lossy, prompt-agnostic autoencoder: a fixed Gaussian linear decoder
//! `x = D z` and a least-squares encoder rounded to a uniform grid.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::{LatentVector, PixelVector};

/// Codec construction parameters, JSON shape
/// `{latent_dim, pixel_dim, rng_seed, quant_step | target_error_fraction}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodecSpec {
    pub latent_dim: usize,
    pub pixel_dim: usize,
    pub rng_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quant_step: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_error_fraction: Option<f64>,
}

/// How the quantization step is fixed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Quantization {
    Step(f64),
    /// Calibrate so the mean encoding error is this fraction of the mean
    /// latent norm.
    TargetFraction(f64),
}

impl CodecSpec {
    pub fn quantization(&self) -> Result<Quantization> {
        match (self.quant_step, self.target_error_fraction) {
            (Some(q), None) if q >= 0.0 && q.is_finite() => Ok(Quantization::Step(q)),
            (None, Some(f)) if f > 0.0 && f < 1.0 => Ok(Quantization::TargetFraction(f)),
            (Some(q), None) => Err(Error::InvalidCodec(format!("quant_step must be >= 0, got {q}"))),
            (None, Some(f)) => Err(Error::InvalidCodec(format!(
                "target_error_fraction must lie in (0, 1), got {f}"
            ))),
            _ => Err(Error::InvalidCodec(
                "exactly one of quant_step and target_error_fraction must be set".into(),
            )),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ToyCodec {
    decode_map: DMatrix<f64>,
    encode_map: DMatrix<f64>,
    quant_step: f64,
}

impl ToyCodec {
    /// Draws `D` (`pixel_dim × latent_dim`) with i.i.d. `N(0, 1/pixel_dim)`
    /// entries from `rng_seed`.
    pub fn from_seed(latent_dim: usize, pixel_dim: usize, rng_seed: u64, quant_step: f64) -> Result<Self> {
        if latent_dim == 0 || pixel_dim < latent_dim {
            return Err(Error::InvalidCodec(format!(
                "need 0 < latent_dim <= pixel_dim, got {latent_dim} and {pixel_dim}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let scale = 1.0 / (pixel_dim as f64).sqrt();
        let d = DMatrix::from_fn(pixel_dim, latent_dim, |_, _| {
            scale * rng.sample::<f64, _>(StandardNormal)
        });
        Self::from_matrix(d, quant_step)
    }

    pub fn from_matrix(decode_map: DMatrix<f64>, quant_step: f64) -> Result<Self> {
        if !(quant_step >= 0.0 && quant_step.is_finite()) {
            return Err(Error::InvalidCodec(format!("quant_step must be >= 0, got {quant_step}")));
        }
        let (m, d) = decode_map.shape();
        if d == 0 || m < d {
            return Err(Error::InvalidCodec(format!("decode map must be tall, got {m}x{d}")));
        }
        let svd = decode_map.clone().svd(true, true);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        if !(smin > 1e-10 * smax) {
            return Err(Error::InvalidCodec("decode map is rank deficient".into()));
        }
        let encode_map = svd
            .pseudo_inverse(0.0)
            .map_err(|e| Error::InvalidCodec(e.to_string()))?;
        Ok(Self {
            decode_map,
            encode_map,
            quant_step,
        })
    }

    /// Builds from a spec whose quantization is already a fixed step.
    pub fn from_spec(spec: &CodecSpec) -> Result<Self> {
        match spec.quantization()? {
            Quantization::Step(q) => Self::from_seed(spec.latent_dim, spec.pixel_dim, spec.rng_seed, q),
            Quantization::TargetFraction(_) => Err(Error::InvalidCodec(
                "target_error_fraction needs calibration latents; use from_spec_calibrated".into(),
            )),
        }
    }

    /// Builds from a spec, calibrating the step on `latents` if requested.
    pub fn from_spec_calibrated(spec: &CodecSpec, latents: &[LatentVector]) -> Result<Self> {
        let q = match spec.quantization()? {
            Quantization::Step(q) => q,
            Quantization::TargetFraction(f) => calibrate_quant_step(latents, f)?,
        };
        Self::from_seed(spec.latent_dim, spec.pixel_dim, spec.rng_seed, q)
    }

    pub fn latent_dim(&self) -> usize {
        self.decode_map.ncols()
    }

    pub fn pixel_dim(&self) -> usize {
        self.decode_map.nrows()
    }

    pub fn quant_step(&self) -> f64 {
        self.quant_step
    }

    pub fn decode_map(&self) -> &DMatrix<f64> {
        &self.decode_map
    }

    /// Singular values of `D`, descending.
    pub fn singular_values(&self) -> Vec<f64> {
        let mut s: Vec<f64> = self.decode_map.singular_values().iter().copied().collect();
        s.sort_by(|a, b| b.total_cmp(a));
        s
    }

    pub fn decode(&self, z: &LatentVector) -> Result<PixelVector> {
        z.check_dim(self.latent_dim())?;
        let x = &self.decode_map * DVector::from_column_slice(z.as_slice());
        Ok(PixelVector(x.iter().copied().collect()))
    }

    pub fn encode(&self, x: &PixelVector) -> Result<LatentVector> {
        if x.dim() != self.pixel_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.pixel_dim(),
                actual: x.dim(),
            });
        }
        let z = &self.encode_map * DVector::from_column_slice(x.as_slice());
        let q = self.quant_step;
        let out = z
            .iter()
            .map(|v| if q > 0.0 { (v / q).round() * q } else { *v })
            .collect();
        LatentVector::new(out)
    }

    /// `encode(decode(z))`.
    pub fn round_trip(&self, z: &LatentVector) -> Result<LatentVector> {
        self.encode(&self.decode(z)?)
    }
}

/// Quantization step whose expected rounding error is `fraction` of the
/// mean latent norm. Rounding error is uniform on `[−q/2, q/2]` per
/// coordinate, so its norm is about `q sqrt(d / 12)`.
pub fn calibrate_quant_step(latents: &[LatentVector], fraction: f64) -> Result<f64> {
    let first = latents
        .first()
        .ok_or_else(|| Error::InvalidCodec("no calibration latents".into()))?;
    let d = first.dim();
    for z in latents {
        z.check_dim(d)?;
    }
    let mean_norm = latents.iter().map(|z| z.norm()).sum::<f64>() / latents.len() as f64;
    let q = fraction * mean_norm / (d as f64 / 12.0).sqrt();
    if !(q > 0.0) {
        return Err(Error::InvalidCodec("calibration latents have zero norm".into()));
    }
    Ok(q)
}
