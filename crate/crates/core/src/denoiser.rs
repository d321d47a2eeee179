//! Conditional noise predictors `ε(z_t, t, p)` and classifier-free guidance.
//!
//! The default predictor is exact: for data drawn from a diagonal Gaussian
//! mixture, the time-`t` marginal is again a mixture with component `k`
//! distributed as `N(sqrt(ᾱ_t) μ_k, ᾱ_t σ_k² + 1 − ᾱ_t)`, so the optimal noise
//! prediction `E[ε | z_t]` has a closed form.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::LatentVector;
use crate::schedule::NoiseSchedule;

/// The prompt analog: either no conditioning or a selected mixture component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Condition {
    Unconditional,
    ComponentPrompt(usize),
}

/// A noise predictor bound to a schedule.
pub trait Denoiser: Sync {
    fn schedule(&self) -> &NoiseSchedule;

    fn dim(&self) -> usize;

    fn predict_noise(&self, z: &LatentVector, t: usize, cond: Condition) -> Result<LatentVector>;
}

/// Classifier-free guidance scale `w`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuidanceConfig {
    pub scale: f64,
}

impl GuidanceConfig {
    pub fn new(scale: f64) -> Result<Self> {
        let g = Self { scale };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.scale.is_finite() || self.scale < 0.0 {
            return Err(Error::InvalidGuidance(self.scale));
        }
        Ok(())
    }
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self { scale: 1.0 }
    }
}

/// `ε_u + w (ε_c − ε_u)`.
///
/// An unconditional prompt has nothing to guide toward and yields `ε_u`.
pub fn guided_noise<M: Denoiser + ?Sized>(
    model: &M,
    z: &LatentVector,
    t: usize,
    prompt: Condition,
    guidance: GuidanceConfig,
) -> Result<LatentVector> {
    guidance.validate()?;
    if prompt == Condition::Unconditional {
        return model.predict_noise(z, t, Condition::Unconditional);
    }
    let w = guidance.scale;
    if w == 1.0 {
        return model.predict_noise(z, t, prompt);
    }
    let eps_u = model.predict_noise(z, t, Condition::Unconditional)?;
    if w == 0.0 {
        return Ok(eps_u);
    }
    let eps_c = model.predict_noise(z, t, prompt)?;
    let out = eps_u
        .iter()
        .zip(eps_c.iter())
        .map(|(u, c)| u + w * (c - u))
        .collect();
    Ok(LatentVector::from_vec_unchecked(out))
}

/// One diagonal Gaussian component of the data distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

/// Diagonal Gaussian mixture over `R^d`, JSON shape
/// `{dimension, components: [{weight, mean, variance}]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MixtureSpec", into = "MixtureSpec")]
pub struct GaussianMixtureModel {
    dimension: usize,
    components: Vec<MixtureComponent>,
    log_weights: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MixtureSpec {
    dimension: usize,
    components: Vec<MixtureComponent>,
}

impl TryFrom<MixtureSpec> for GaussianMixtureModel {
    type Error = Error;
    fn try_from(spec: MixtureSpec) -> Result<Self> {
        Self::new(spec.dimension, spec.components)
    }
}

impl From<GaussianMixtureModel> for MixtureSpec {
    fn from(m: GaussianMixtureModel) -> Self {
        MixtureSpec {
            dimension: m.dimension,
            components: m.components,
        }
    }
}

const LN_2PI: f64 = 1.837_877_066_409_345_3;

impl GaussianMixtureModel {
    pub fn new(dimension: usize, components: Vec<MixtureComponent>) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::InvalidMixture("dimension must be positive".into()));
        }
        if components.is_empty() {
            return Err(Error::InvalidMixture("no components".into()));
        }
        for (k, c) in components.iter().enumerate() {
            if !(c.weight > 0.0 && c.weight.is_finite()) {
                return Err(Error::InvalidMixture(format!(
                    "component {k} has non-positive weight {}",
                    c.weight
                )));
            }
            if c.mean.len() != dimension || c.variance.len() != dimension {
                return Err(Error::InvalidMixture(format!(
                    "component {k} mean/variance length differs from dimension {dimension}"
                )));
            }
            if c.mean.iter().any(|m| !m.is_finite()) {
                return Err(Error::InvalidMixture(format!("component {k} mean is not finite")));
            }
            if c.variance.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                return Err(Error::InvalidMixture(format!(
                    "component {k} has a non-positive variance"
                )));
            }
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidMixture(format!(
                "weights sum to {total}, expected 1"
            )));
        }
        let log_weights = components.iter().map(|c| c.weight.ln()).collect();
        Ok(Self {
            dimension,
            components,
            log_weights,
        })
    }

    /// A single zero-mean unit-variance component.
    pub fn standard_normal(dimension: usize) -> Result<Self> {
        Self::new(
            dimension,
            vec![MixtureComponent {
                weight: 1.0,
                mean: vec![0.0; dimension],
                variance: vec![1.0; dimension],
            }],
        )
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn components(&self) -> &[MixtureComponent] {
        &self.components
    }

    pub fn num_components(&self) -> usize {
        self.components.len()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.weight).collect()
    }

    fn check_condition(&self, cond: Condition) -> Result<()> {
        if let Condition::ComponentPrompt(k) = cond {
            if k >= self.components.len() {
                return Err(Error::ComponentOutOfRange {
                    index: k,
                    count: self.components.len(),
                });
            }
        }
        Ok(())
    }

    /// Log density of component `k` of the `ᾱ`-marginal at `z`, without
    /// the mixture weight.
    fn component_log_density(&self, k: usize, z: &[f64], alpha_bar: f64) -> f64 {
        let c = &self.components[k];
        let sa = alpha_bar.sqrt();
        let mut acc = 0.0;
        for i in 0..self.dimension {
            let v = alpha_bar * c.variance[i] + (1.0 - alpha_bar);
            let r = z[i] - sa * c.mean[i];
            acc += r * r / v + v.ln() + LN_2PI;
        }
        -0.5 * acc
    }

    /// Posterior component probabilities given `z` under the `ᾱ`-marginal.
    pub fn responsibilities(&self, z: &LatentVector, alpha_bar: f64) -> Result<Vec<f64>> {
        z.check_dim(self.dimension)?;
        Ok(self.responsibilities_unchecked(z.as_slice(), alpha_bar))
    }

    fn responsibilities_unchecked(&self, z: &[f64], alpha_bar: f64) -> Vec<f64> {
        let mut logp: Vec<f64> = (0..self.components.len())
            .map(|k| self.log_weights[k] + self.component_log_density(k, z, alpha_bar))
            .collect();
        let max = logp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for l in logp.iter_mut() {
            *l = (*l - max).exp();
            sum += *l;
        }
        for l in logp.iter_mut() {
            *l /= sum;
        }
        logp
    }

    /// `E[ε | z]` at cumulative signal level `alpha_bar < 1`.
    pub fn expected_noise(
        &self,
        z: &LatentVector,
        alpha_bar: f64,
        cond: Condition,
    ) -> Result<LatentVector> {
        z.check_dim(self.dimension)?;
        self.check_condition(cond)?;
        let sa = alpha_bar.sqrt();
        let s1 = (1.0 - alpha_bar).sqrt();
        let zs = z.as_slice();
        let mut out = vec![0.0; self.dimension];
        let mut accumulate = |k: usize, r: f64| {
            let c = &self.components[k];
            for i in 0..self.dimension {
                let v = alpha_bar * c.variance[i] + (1.0 - alpha_bar);
                out[i] += r * (zs[i] - sa * c.mean[i]) / v;
            }
        };
        match cond {
            Condition::ComponentPrompt(k) => accumulate(k, 1.0),
            Condition::Unconditional => {
                let resp = self.responsibilities_unchecked(zs, alpha_bar);
                for (k, r) in resp.into_iter().enumerate() {
                    if r > 0.0 {
                        accumulate(k, r);
                    }
                }
            }
        }
        for o in out.iter_mut() {
            *o *= s1;
        }
        Ok(LatentVector::from_vec_unchecked(out))
    }

    /// Log density at `z` of the `ᾱ`-marginal; `ᾱ = 1` is the data
    /// distribution itself.
    pub fn log_density(&self, z: &LatentVector, alpha_bar: f64, cond: Condition) -> Result<f64> {
        z.check_dim(self.dimension)?;
        self.check_condition(cond)?;
        let zs = z.as_slice();
        Ok(match cond {
            Condition::ComponentPrompt(k) => self.component_log_density(k, zs, alpha_bar),
            Condition::Unconditional => {
                let logp: Vec<f64> = (0..self.components.len())
                    .map(|k| self.log_weights[k] + self.component_log_density(k, zs, alpha_bar))
                    .collect();
                let max = logp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                max + logp.iter().map(|l| (l - max).exp()).sum::<f64>().ln()
            }
        })
    }
}

/// The exact noise predictor for a Gaussian-mixture data distribution.
#[derive(Debug, Clone)]
pub struct MixtureDenoiser {
    mixture: GaussianMixtureModel,
    schedule: NoiseSchedule,
}

impl MixtureDenoiser {
    pub fn new(mixture: GaussianMixtureModel, schedule: NoiseSchedule) -> Self {
        Self { mixture, schedule }
    }

    pub fn mixture(&self) -> &GaussianMixtureModel {
        &self.mixture
    }

    /// Log density of the time-`t` marginal, `t ∈ 0..=T`.
    pub fn log_marginal_density(&self, z: &LatentVector, t: usize, cond: Condition) -> Result<f64> {
        let ab = self.schedule.alpha_bar(t)?;
        self.mixture.log_density(z, ab, cond)
    }
}

impl Denoiser for MixtureDenoiser {
    fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    fn dim(&self) -> usize {
        self.mixture.dimension
    }

    fn predict_noise(&self, z: &LatentVector, t: usize, cond: Condition) -> Result<LatentVector> {
        self.schedule.check_timestep(t)?;
        let ab = self.schedule.alpha_bar(t)?;
        self.mixture.expected_noise(z, ab, cond)
    }
}

/// Analytic stand-ins with trivially known fixed points.
pub mod stub {
    use super::*;

    /// `ε(z) = a z`, independent of `t` and the condition.
    #[derive(Debug, Clone)]
    pub struct LinearStub {
        pub schedule: NoiseSchedule,
        pub dim: usize,
        pub slope: f64,
    }

    impl Denoiser for LinearStub {
        fn schedule(&self) -> &NoiseSchedule {
            &self.schedule
        }
        fn dim(&self) -> usize {
            self.dim
        }
        fn predict_noise(&self, z: &LatentVector, t: usize, _: Condition) -> Result<LatentVector> {
            self.schedule.check_timestep(t)?;
            z.check_dim(self.dim)?;
            Ok(z.scaled(self.slope))
        }
    }

    /// `ε(z) = c`, a fixed vector.
    #[derive(Debug, Clone)]
    pub struct ConstantStub {
        pub schedule: NoiseSchedule,
        pub value: LatentVector,
    }

    impl ConstantStub {
        pub fn zero(schedule: NoiseSchedule, dim: usize) -> Self {
            Self {
                schedule,
                value: LatentVector::zeros(dim),
            }
        }
    }

    impl Denoiser for ConstantStub {
        fn schedule(&self) -> &NoiseSchedule {
            &self.schedule
        }
        fn dim(&self) -> usize {
            self.value.dim()
        }
        fn predict_noise(&self, z: &LatentVector, t: usize, _: Condition) -> Result<LatentVector> {
            self.schedule.check_timestep(t)?;
            z.check_dim(self.value.dim())?;
            Ok(self.value.clone())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::ScheduleConfig;
    use approx::assert_abs_diff_eq;

    fn two_component_1d() -> GaussianMixtureModel {
        GaussianMixtureModel::new(
            1,
            vec![
                MixtureComponent {
                    weight: 0.3,
                    mean: vec![-1.5],
                    variance: vec![0.2],
                },
                MixtureComponent {
                    weight: 0.7,
                    mean: vec![1.0],
                    variance: vec![0.5],
                },
            ],
        )
        .unwrap()
    }

    #[test]
    fn standard_normal_closed_form() {
        let model = MixtureDenoiser::new(
            GaussianMixtureModel::standard_normal(3).unwrap(),
            ScheduleConfig::default().build().unwrap(),
        );
        let z = LatentVector::new(vec![0.4, -1.2, 2.0]).unwrap();
        for &t in &[20, 500, 1000] {
            let ab = model.schedule().alpha_bar(t).unwrap();
            let eps = model.predict_noise(&z, t, Condition::Unconditional).unwrap();
            for i in 0..3 {
                assert_abs_diff_eq!(eps[i], (1.0 - ab).sqrt() * z[i], epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn point_mass_at_mean_gives_zero_noise() {
        let mixture = GaussianMixtureModel::new(
            2,
            vec![MixtureComponent {
                weight: 1.0,
                mean: vec![0.7, -0.2],
                variance: vec![1e-12, 1e-12],
            }],
        )
        .unwrap();
        let ab: f64 = 0.3;
        let z = LatentVector::new(vec![ab.sqrt() * 0.7, ab.sqrt() * -0.2]).unwrap();
        let eps = mixture
            .expected_noise(&z, ab, Condition::ComponentPrompt(0))
            .unwrap();
        assert!(eps.norm() < 1e-12);
    }

    #[test]
    fn responsibilities_normalised_even_at_extreme_range() {
        let m = two_component_1d();
        for &z in &[-400.0, -3.0, 0.0, 2.0, 900.0] {
            let r = m
                .responsibilities(&LatentVector::new(vec![z]).unwrap(), 0.999)
                .unwrap();
            assert!(r.iter().all(|v| v.is_finite()));
            assert_abs_diff_eq!(r.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn rejects_invalid_mixtures() {
        let bad_weight = vec![MixtureComponent {
            weight: 0.9,
            mean: vec![0.0],
            variance: vec![1.0],
        }];
        assert!(GaussianMixtureModel::new(1, bad_weight).is_err());
        let bad_var = vec![MixtureComponent {
            weight: 1.0,
            mean: vec![0.0],
            variance: vec![0.0],
        }];
        assert!(GaussianMixtureModel::new(1, bad_var).is_err());
        let bad_len = vec![MixtureComponent {
            weight: 1.0,
            mean: vec![0.0, 1.0],
            variance: vec![1.0],
        }];
        assert!(GaussianMixtureModel::new(2, bad_len).is_err());
    }

    #[test]
    fn component_index_checked() {
        let model = MixtureDenoiser::new(
            two_component_1d(),
            ScheduleConfig::default().build().unwrap(),
        );
        let z = LatentVector::new(vec![0.1]).unwrap();
        assert_eq!(
            model.predict_noise(&z, 20, Condition::ComponentPrompt(2)),
            Err(Error::ComponentOutOfRange { index: 2, count: 2 })
        );
        assert!(model.predict_noise(&z, 0, Condition::Unconditional).is_err());
        assert!(model.predict_noise(&z, 1001, Condition::Unconditional).is_err());
    }

    #[test]
    fn guidance_identities() {
        let model = MixtureDenoiser::new(
            two_component_1d(),
            ScheduleConfig::default().build().unwrap(),
        );
        let z = LatentVector::new(vec![0.25]).unwrap();
        let p = Condition::ComponentPrompt(1);
        let ec = model.predict_noise(&z, 300, p).unwrap();
        let eu = model.predict_noise(&z, 300, Condition::Unconditional).unwrap();
        let g1 = guided_noise(&model, &z, 300, p, GuidanceConfig::new(1.0).unwrap()).unwrap();
        let g0 = guided_noise(&model, &z, 300, p, GuidanceConfig::new(0.0).unwrap()).unwrap();
        assert_eq!(g1, ec);
        assert_eq!(g0, eu);
        let g3 = guided_noise(&model, &z, 300, p, GuidanceConfig::new(3.0).unwrap()).unwrap();
        assert_abs_diff_eq!(g3[0], eu[0] + 3.0 * (ec[0] - eu[0]), epsilon = 1e-15);
        assert!(GuidanceConfig::new(-1.0).is_err());
        assert!(GuidanceConfig::new(f64::NAN).is_err());
    }

    #[test]
    fn mixture_json_shape() {
        let json = r#"{"dimension":1,"components":[{"weight":1.0,"mean":[0.5],"variance":[2.0]}]}"#;
        let m: GaussianMixtureModel = serde_json::from_str(json).unwrap();
        assert_eq!(m.num_components(), 1);
        let back = serde_json::to_string(&m).unwrap();
        assert_eq!(back, json);
        let bad = r#"{"dimension":1,"components":[{"weight":0.5,"mean":[0.5],"variance":[2.0]}]}"#;
        assert!(serde_json::from_str::<GaussianMixtureModel>(bad).is_err());
    }
}
