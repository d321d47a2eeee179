//! Linear noise schedule, the ψ-function algebra of the deterministic
//! sampler, and the strided timestep subsequence shared by sampling and
//! inversion.
//!
//! `alpha_bar(t)` is the cumulative product `Π_{i≤t} (1 − β_i)`, with
//! `alpha_bar(0) = 1` so that the last generation step (and the first
//! inversion step) is well defined.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Schedule parameters as they appear in the experiment config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    #[serde(default = "ScheduleConfig::default_total_steps")]
    pub total_steps: usize,
    #[serde(default = "ScheduleConfig::default_beta_start")]
    pub beta_start: f64,
    #[serde(default = "ScheduleConfig::default_beta_end")]
    pub beta_end: f64,
    #[serde(default = "ScheduleConfig::default_num_sampling_steps")]
    pub num_sampling_steps: usize,
}

impl ScheduleConfig {
    fn default_total_steps() -> usize {
        1000
    }
    fn default_beta_start() -> f64 {
        8.5e-4
    }
    fn default_beta_end() -> f64 {
        1.2e-2
    }
    fn default_num_sampling_steps() -> usize {
        50
    }

    pub fn build(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(
            self.total_steps,
            self.beta_start,
            self.beta_end,
            self.num_sampling_steps,
        )
    }
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            total_steps: Self::default_total_steps(),
            beta_start: Self::default_beta_start(),
            beta_end: Self::default_beta_end(),
            num_sampling_steps: Self::default_num_sampling_steps(),
        }
    }
}

/// Immutable diffusion schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    /// `alpha_bars[t]` for `t = 0..=T`; index 0 holds 1.
    alpha_bars: Vec<f64>,
    /// Strictly increasing sampling timesteps, all in `1..=T`.
    timesteps: Vec<usize>,
}

/// `ψ(ᾱ) = sqrt(1/ᾱ − 1)`.
pub fn psi(alpha_bar: f64) -> Result<f64> {
    if !(alpha_bar > 0.0 && alpha_bar <= 1.0) {
        return Err(Error::AlphaBarOutOfRange(alpha_bar));
    }
    Ok((1.0 / alpha_bar - 1.0).sqrt())
}

impl NoiseSchedule {
    /// Betas linearly interpolated over `1..=T`, sampled every
    /// `T / num_sampling_steps` steps.
    pub fn linear(
        total_steps: usize,
        beta_start: f64,
        beta_end: f64,
        num_sampling_steps: usize,
    ) -> Result<Self> {
        if total_steps == 0 {
            return Err(Error::InvalidSchedule("total_steps must be positive".into()));
        }
        if !(beta_start > 0.0 && beta_start < 1.0) || !(beta_end > 0.0 && beta_end < 1.0) {
            return Err(Error::InvalidSchedule(format!(
                "betas must lie in (0, 1), got start={beta_start} end={beta_end}"
            )));
        }
        if beta_start > beta_end {
            return Err(Error::InvalidSchedule(format!(
                "beta_start ({beta_start}) exceeds beta_end ({beta_end})"
            )));
        }
        if num_sampling_steps == 0 || num_sampling_steps > total_steps {
            return Err(Error::InvalidSchedule(format!(
                "num_sampling_steps must be in 1..={total_steps}, got {num_sampling_steps}"
            )));
        }
        let betas: Vec<f64> = if total_steps == 1 {
            vec![beta_start]
        } else {
            let span = (total_steps - 1) as f64;
            (0..total_steps)
                .map(|i| beta_start + (beta_end - beta_start) * (i as f64 / span))
                .collect()
        };
        let stride = total_steps / num_sampling_steps;
        let timesteps = (1..=num_sampling_steps).map(|k| k * stride).collect();
        Self::from_betas(betas, timesteps)
    }

    /// Builds a schedule from explicit betas `β_1..β_T`.
    pub fn from_betas(betas: Vec<f64>, timesteps: Vec<usize>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::InvalidSchedule("no betas".into()));
        }
        if let Some(b) = betas.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(Error::InvalidSchedule(format!("beta {b} outside (0, 1)")));
        }
        let mut alpha_bars = Vec::with_capacity(betas.len() + 1);
        alpha_bars.push(1.0);
        let mut prod = 1.0;
        for b in &betas {
            prod *= 1.0 - b;
            alpha_bars.push(prod);
        }
        let schedule = Self {
            betas,
            alpha_bars,
            timesteps,
        };
        schedule.validate()?;
        Ok(schedule)
    }

    /// Builds a schedule from explicit cumulative products `ᾱ_1..ᾱ_T`. The
    /// betas are recovered as `1 − ᾱ_t / ᾱ_{t−1}`.
    pub fn from_alpha_bars(alpha_bars: Vec<f64>, timesteps: Vec<usize>) -> Result<Self> {
        if alpha_bars.is_empty() {
            return Err(Error::InvalidSchedule("no alpha_bars".into()));
        }
        let mut prev = 1.0;
        let mut betas = Vec::with_capacity(alpha_bars.len());
        for &a in &alpha_bars {
            if !(a > 0.0 && a < prev) {
                return Err(Error::InvalidSchedule(format!(
                    "alpha_bar must be strictly decreasing in (0, 1), got {a} after {prev}"
                )));
            }
            betas.push(1.0 - a / prev);
            prev = a;
        }
        let mut full = Vec::with_capacity(alpha_bars.len() + 1);
        full.push(1.0);
        full.extend(alpha_bars);
        let schedule = Self {
            betas,
            alpha_bars: full,
            timesteps,
        };
        schedule.validate()?;
        Ok(schedule)
    }

    fn validate(&self) -> Result<()> {
        let total = self.total_steps();
        if self.timesteps.is_empty() {
            return Err(Error::InvalidSchedule("empty timestep subsequence".into()));
        }
        if self.timesteps[0] == 0 || *self.timesteps.last().unwrap() > total {
            return Err(Error::InvalidSchedule(format!(
                "timesteps must lie in 1..={total}"
            )));
        }
        if self.timesteps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidSchedule(
                "timesteps must be strictly increasing".into(),
            ));
        }
        if self.alpha_bars.windows(2).any(|w| !(w[1] < w[0])) || self.alpha_bars[total] <= 0.0 {
            return Err(Error::InvalidSchedule(
                "alpha_bar must be strictly decreasing and positive".into(),
            ));
        }
        Ok(())
    }

    pub fn total_steps(&self) -> usize {
        self.betas.len()
    }

    pub fn num_sampling_steps(&self) -> usize {
        self.timesteps.len()
    }

    /// `β_1..β_T`.
    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    /// `ᾱ_0..ᾱ_T` (index 0 is 1).
    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    /// Ascending sampling timesteps.
    pub fn timesteps(&self) -> &[usize] {
        &self.timesteps
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        self.alpha_bars
            .get(t)
            .copied()
            .ok_or(Error::InvalidTimestep {
                t,
                total: self.total_steps(),
            })
    }

    /// Checks that `t` is usable by a noise predictor (`1..=T`).
    pub fn check_timestep(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.total_steps() {
            return Err(Error::InvalidTimestep {
                t,
                total: self.total_steps(),
            });
        }
        Ok(())
    }

    /// The sampling timestep preceding `t`, or 0 for the first one.
    pub fn previous(&self, t: usize) -> Result<usize> {
        match self.timesteps.binary_search(&t) {
            Ok(0) => Ok(0),
            Ok(i) => Ok(self.timesteps[i - 1]),
            Err(_) => Err(Error::InvalidTimestep {
                t,
                total: self.total_steps(),
            }),
        }
    }

    pub fn check_adjacent(&self, t: usize, t_prev: usize) -> Result<()> {
        match self.previous(t) {
            Ok(p) if p == t_prev => Ok(()),
            _ => Err(Error::NonAdjacentTimesteps { t, t_prev }),
        }
    }

    /// `ψ(ᾱ_t) − ψ(ᾱ_{t_prev})` for an adjacent pair.
    pub fn delta_psi(&self, t: usize, t_prev: usize) -> Result<f64> {
        self.check_adjacent(t, t_prev)?;
        Ok(psi(self.alpha_bar(t)?)? - psi(self.alpha_bar(t_prev)?)?)
    }

    /// Coefficients of the deterministic step between an adjacent pair.
    pub fn step_coefficients(&self, t: usize, t_prev: usize) -> Result<StepCoefficients> {
        self.check_adjacent(t, t_prev)?;
        StepCoefficients::new(self.alpha_bar(t)?, self.alpha_bar(t_prev)?)
    }

    /// `(t, t_prev)` pairs from `T` down to the first sampling step.
    pub fn descending_pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.timesteps.len())
            .rev()
            .map(move |i| (self.timesteps[i], if i == 0 { 0 } else { self.timesteps[i - 1] }))
    }

    /// `(t, t_prev)` pairs from the first sampling step up to `T`.
    pub fn ascending_pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.timesteps.len())
            .map(move |i| (self.timesteps[i], if i == 0 { 0 } else { self.timesteps[i - 1] }))
    }
}

/// Scalar coefficients of one deterministic step between `ᾱ_t` and the
/// preceding `ᾱ_{t_prev}`.
///
/// Denoising: `z_prev = ratio · z_t − forward_noise · ε`.
/// Its exact rearrangement: `z_t = inverse_signal · z_prev + inverse_noise · ε`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepCoefficients {
    pub alpha_bar_t: f64,
    pub alpha_bar_prev: f64,
    pub delta_psi: f64,
    /// `sqrt(ᾱ_prev / ᾱ_t)`
    pub ratio: f64,
    /// `sqrt(ᾱ_prev) · Δψ`
    pub forward_noise: f64,
    /// `sqrt(ᾱ_t / ᾱ_prev)`
    pub inverse_signal: f64,
    /// `sqrt(ᾱ_t) · Δψ`
    pub inverse_noise: f64,
}

impl StepCoefficients {
    pub fn new(alpha_bar_t: f64, alpha_bar_prev: f64) -> Result<Self> {
        let delta_psi = psi(alpha_bar_t)? - psi(alpha_bar_prev)?;
        Ok(Self {
            alpha_bar_t,
            alpha_bar_prev,
            delta_psi,
            ratio: (alpha_bar_prev / alpha_bar_t).sqrt(),
            forward_noise: alpha_bar_prev.sqrt() * delta_psi,
            inverse_signal: (alpha_bar_t / alpha_bar_prev).sqrt(),
            inverse_noise: alpha_bar_t.sqrt() * delta_psi,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn constant_beta_products() {
        let s = NoiseSchedule::linear(3, 0.1, 0.1, 3).unwrap();
        assert_relative_eq!(s.alpha_bar(1).unwrap(), 0.9, max_relative = 1e-15);
        assert_relative_eq!(s.alpha_bar(2).unwrap(), 0.81, max_relative = 1e-15);
        assert_relative_eq!(s.alpha_bar(3).unwrap(), 0.729, max_relative = 1e-15);
        assert_eq!(s.alpha_bar(0).unwrap(), 1.0);
        assert_eq!(s.timesteps(), &[1, 2, 3]);
    }

    #[test]
    fn default_stride_is_twenty() {
        let s = ScheduleConfig::default().build().unwrap();
        let expected: Vec<usize> = (1..=50).map(|k| 20 * k).collect();
        assert_eq!(s.timesteps(), expected.as_slice());
        assert_eq!(s.descending_pairs().next(), Some((1000, 980)));
        assert_eq!(s.descending_pairs().last(), Some((20, 0)));
        assert_eq!(s.ascending_pairs().next(), Some((20, 0)));
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(NoiseSchedule::linear(10, 0.5, 0.4, 5).is_err());
        assert!(NoiseSchedule::linear(10, 0.0, 0.4, 5).is_err());
        assert!(NoiseSchedule::linear(10, 0.1, 1.0, 5).is_err());
        assert!(NoiseSchedule::linear(10, 0.1, 0.2, 11).is_err());
        assert!(NoiseSchedule::linear(10, 0.1, 0.2, 0).is_err());
        assert!(NoiseSchedule::linear(0, 0.1, 0.2, 1).is_err());
    }

    #[test]
    fn psi_values() {
        assert_eq!(psi(1.0).unwrap(), 0.0);
        assert_relative_eq!(psi(0.25).unwrap(), 3f64.sqrt(), max_relative = 1e-15);
        assert_relative_eq!(psi(0.5).unwrap(), 1.0, max_relative = 1e-15);
        assert!(psi(0.0).is_err());
        assert!(psi(1.5).is_err());
        assert!(psi(-0.1).is_err());
    }

    #[test]
    fn delta_psi_examples() {
        let s = NoiseSchedule::from_alpha_bars(vec![0.5, 0.25], vec![1, 2]).unwrap();
        assert_relative_eq!(s.delta_psi(2, 1).unwrap(), 3f64.sqrt() - 1.0, max_relative = 1e-14);
        // degenerate equal pair, only reachable through the scalar form
        assert_eq!(psi(0.4).unwrap() - psi(0.4).unwrap(), 0.0);

        let s = NoiseSchedule::linear(3, 0.1, 0.1, 3).unwrap();
        let v = s.delta_psi(3, 2).unwrap();
        assert!(v > 0.0);
        let from_origin = psi(0.729).unwrap() - psi(1.0).unwrap();
        assert_relative_eq!(from_origin, (1.0f64 / 0.729 - 1.0).sqrt(), max_relative = 1e-15);
        assert!((from_origin - 0.609).abs() < 1e-3);
    }

    #[test]
    fn adjacency_checks() {
        let s = ScheduleConfig::default().build().unwrap();
        assert!(s.delta_psi(40, 20).is_ok());
        assert!(s.delta_psi(20, 0).is_ok());
        assert!(s.delta_psi(60, 20).is_err());
        assert!(s.delta_psi(30, 10).is_err());
        assert!(s.delta_psi(1020, 1000).is_err());
    }

    #[test]
    fn from_alpha_bars_rejects_non_monotone() {
        assert!(NoiseSchedule::from_alpha_bars(vec![0.5, 0.5], vec![1, 2]).is_err());
        assert!(NoiseSchedule::from_alpha_bars(vec![0.5, 0.6], vec![1, 2]).is_err());
        assert!(NoiseSchedule::from_alpha_bars(vec![0.5, 0.25], vec![2, 1]).is_err());
        assert!(NoiseSchedule::from_alpha_bars(vec![0.5, 0.25], vec![1, 3]).is_err());
    }
}
