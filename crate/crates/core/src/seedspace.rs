//! Seed-space paths and centroids: spherical interpolation of directions with
//! linear interpolation of norms, and a norm-matched mean.

use crate::error::{Error, Result};
use crate::latent::LatentVector;

/// Angles closer than this to π are treated as antipodal.
pub const ANTIPODAL_TOLERANCE: f64 = 1e-6;

/// A point on an interpolation path.
#[derive(Debug, Clone, PartialEq)]
pub struct SlerpPoint {
    pub latent: LatentVector,
    /// The endpoints were (nearly) antipodal and plain linear interpolation
    /// was used instead.
    pub linear_fallback: bool,
}

pub fn slerp(a: &LatentVector, b: &LatentVector, u: f64) -> Result<SlerpPoint> {
    b.check_dim(a.dim())?;
    if !(0.0..=1.0).contains(&u) {
        return Err(Error::InvalidConfig(format!("interpolation weight {u} outside [0, 1]")));
    }
    let na = a.norm();
    let nb = b.norm();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector);
    }
    if u == 0.0 {
        return Ok(SlerpPoint { latent: a.clone(), linear_fallback: false });
    }
    if u == 1.0 {
        return Ok(SlerpPoint { latent: b.clone(), linear_fallback: false });
    }
    let cos = (a.dot(b) / (na * nb)).clamp(-1.0, 1.0);
    let theta = cos.acos();
    if std::f64::consts::PI - theta < ANTIPODAL_TOLERANCE {
        return Ok(SlerpPoint {
            latent: a.lin_comb(1.0 - u, b, u),
            linear_fallback: true,
        });
    }
    let (wa, wb) = if theta < 1e-12 {
        (1.0 - u, u)
    } else {
        let s = theta.sin();
        (((1.0 - u) * theta).sin() / s, (u * theta).sin() / s)
    };
    let dir = a.lin_comb(wa / na, b, wb / nb);
    let target = (1.0 - u) * na + u * nb;
    let latent = dir.scaled(target / dir.norm());
    Ok(SlerpPoint { latent, linear_fallback: false })
}

/// `n` evenly spaced points from `a` to `b` inclusive.
pub fn slerp_path(a: &LatentVector, b: &LatentVector, n: usize) -> Result<Vec<SlerpPoint>> {
    if n < 2 {
        return Err(Error::InvalidConfig("a path needs at least 2 points".into()));
    }
    (0..n)
        .map(|i| slerp(a, b, i as f64 / (n - 1) as f64))
        .collect()
}

/// A non-empty collection of seeds of one dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedSet {
    seeds: Vec<LatentVector>,
}

impl SeedSet {
    pub fn new(seeds: Vec<LatentVector>) -> Result<Self> {
        let first = seeds.first().ok_or(Error::EmptySeedSet)?;
        let d = first.dim();
        for s in &seeds {
            s.check_dim(d)?;
        }
        Ok(Self { seeds })
    }

    pub fn seeds(&self) -> &[LatentVector] {
        &self.seeds
    }

    pub fn dim(&self) -> usize {
        self.seeds[0].dim()
    }

    pub fn len(&self) -> usize {
        self.seeds.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Arithmetic mean rescaled to the mean norm of the seeds.
pub fn centroid(seeds: &SeedSet) -> Result<LatentVector> {
    let d = seeds.dim();
    let n = seeds.len() as f64;
    let mut mean = vec![0.0; d];
    let mut mean_norm = 0.0;
    for s in seeds.seeds() {
        let ns = s.norm();
        if ns == 0.0 {
            return Err(Error::ZeroVector);
        }
        mean_norm += ns / n;
        for (m, v) in mean.iter_mut().zip(s.iter()) {
            *m += v / n;
        }
    }
    let mean = LatentVector::new(mean)?;
    let nm = mean.norm();
    if nm <= 1e-9 * mean_norm {
        return Err(Error::DegenerateCentroid);
    }
    Ok(mean.scaled(mean_norm / nm))
}
