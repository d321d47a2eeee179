//! Deterministic (η = 0) DDIM generation from a seed `z_T` to `z_0`.

use serde::{Deserialize, Serialize};

use crate::denoiser::{guided_noise, Condition, Denoiser, GuidanceConfig};
use crate::error::Result;
use crate::latent::LatentVector;

/// Latents visited by [`generate`], from `(T, z_T)` down to `(0, z_0)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub points: Vec<(usize, LatentVector)>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn seed(&self) -> &LatentVector {
        &self.points[0].1
    }

    pub fn final_latent(&self) -> &LatentVector {
        &self.points[self.points.len() - 1].1
    }

    pub fn into_final(mut self) -> LatentVector {
        self.points.pop().expect("trajectory is never empty").1
    }
}

/// `z_prev = sqrt(ᾱ_prev / ᾱ_t) z_t − sqrt(ᾱ_prev) Δψ ε̂(z_t, t)`.
pub fn ddim_step<M: Denoiser + ?Sized>(
    model: &M,
    z_t: &LatentVector,
    t: usize,
    t_prev: usize,
    cond: Condition,
    guidance: GuidanceConfig,
) -> Result<LatentVector> {
    let c = model.schedule().step_coefficients(t, t_prev)?;
    z_t.check_dim(model.dim())?;
    let eps = guided_noise(model, z_t, t, cond, guidance)?;
    let out = z_t
        .iter()
        .zip(eps.iter())
        .map(|(z, e)| c.ratio * z - c.forward_noise * e)
        .collect();
    Ok(LatentVector::from_vec_unchecked(out))
}

/// Runs [`ddim_step`] down the whole timestep subsequence.
pub fn generate<M: Denoiser + ?Sized>(
    model: &M,
    seed: &LatentVector,
    cond: Condition,
    guidance: GuidanceConfig,
) -> Result<Trajectory> {
    seed.check_dim(model.dim())?;
    let schedule = model.schedule();
    let mut points = Vec::with_capacity(schedule.num_sampling_steps() + 1);
    let mut z = seed.clone();
    let top = *schedule.timesteps().last().expect("non-empty timesteps");
    points.push((top, z.clone()));
    for (t, t_prev) in schedule.descending_pairs() {
        z = ddim_step(model, &z, t, t_prev, cond, guidance)?;
        points.push((t_prev, z.clone()));
    }
    Ok(Trajectory { points })
}

/// Like [`generate`] but keeps only `z_0`.
pub fn generate_final<M: Denoiser + ?Sized>(
    model: &M,
    seed: &LatentVector,
    cond: Condition,
    guidance: GuidanceConfig,
) -> Result<LatentVector> {
    seed.check_dim(model.dim())?;
    let mut z = seed.clone();
    for (t, t_prev) in model.schedule().descending_pairs() {
        z = ddim_step(model, &z, t, t_prev, cond, guidance)?;
    }
    Ok(z)
}
