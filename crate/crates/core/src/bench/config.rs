//! Experiment configuration (JSON).

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::codec::CodecSpec;
use crate::denoiser::{GaussianMixtureModel, GuidanceConfig};
use crate::error::{Error, Result};
use crate::inversion::{AdjustmentConfig, FixedPointConfig};
use crate::schedule::ScheduleConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: String,
    #[serde(default)]
    pub rng_seed: u64,
    #[serde(default = "defaults::num_trials")]
    pub num_trials: usize,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    pub mixture: GaussianMixtureModel,
    pub codec: CodecSpec,
    #[serde(default)]
    pub guidance: GuidanceSettings,
    #[serde(default = "defaults::max_iterations")]
    pub max_iterations: usize,
    #[serde(default = "defaults::residual_tolerance")]
    pub residual_tolerance: f64,
    #[serde(default)]
    pub adjust: AdjustmentConfig,
    #[serde(default)]
    pub sweep: SweepSettings,
    #[serde(default)]
    pub interpolation: InterpolationSettings,
    #[serde(default)]
    pub contraction: ContractionSettings,
    /// Peak value for PSNR on decoded pixels.
    #[serde(default = "defaults::psnr_peak")]
    pub psnr_peak: f64,
    /// Overridden by `--out`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
}

mod defaults {
    pub fn num_trials() -> usize {
        200
    }
    pub fn max_iterations() -> usize {
        5
    }
    pub fn residual_tolerance() -> f64 {
        1e-6
    }
    pub fn psnr_peak() -> f64 {
        1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuidanceSettings {
    /// Scale used by the iteration sweep and the contraction audit.
    pub scale: f64,
    /// Scales visited by the reconstruction and consistency experiments.
    pub sweep: Vec<f64>,
}

impl Default for GuidanceSettings {
    fn default() -> Self {
        Self {
            scale: 4.0,
            sweep: vec![1.0, 2.0, 4.0, 7.5],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSettings {
    pub max_iterations: Vec<usize>,
}

impl Default for SweepSettings {
    fn default() -> Self {
        Self {
            max_iterations: (1..=8).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InterpolationSettings {
    pub num_pairs: usize,
    pub path_points: usize,
    pub num_centroid_sets: usize,
    pub centroid_size: usize,
}

impl Default for InterpolationSettings {
    fn default() -> Self {
        Self {
            num_pairs: 50,
            path_points: 9,
            num_centroid_sets: 20,
            centroid_size: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContractionSettings {
    pub num_trials: usize,
    pub num_probes: usize,
    /// Probe radius as a multiple of the iterate hull radius around `z_prev`.
    pub radius_factor: f64,
    pub min_radius: f64,
    /// Steps with an estimate below this must show non-increasing residuals.
    pub gate: f64,
}

impl Default for ContractionSettings {
    fn default() -> Self {
        Self {
            num_trials: 20,
            num_probes: 8,
            radius_factor: 1.25,
            min_radius: 1e-6,
            gate: 0.9,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn fixed_point(&self) -> FixedPointConfig {
        FixedPointConfig {
            max_iterations: self.max_iterations,
            residual_tolerance: self.residual_tolerance,
            track_trace: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        let schedule = self.schedule.build()?;
        if self.num_trials == 0 {
            return bad("num_trials must be positive".into());
        }
        if self.codec.latent_dim != self.mixture.dimension() {
            return bad(format!(
                "codec.latent_dim ({}) differs from mixture.dimension ({})",
                self.codec.latent_dim,
                self.mixture.dimension()
            ));
        }
        self.codec.quantization()?;
        GuidanceConfig::new(self.guidance.scale)?;
        if self.guidance.sweep.is_empty() {
            return bad("guidance.sweep must not be empty".into());
        }
        for &w in &self.guidance.sweep {
            GuidanceConfig::new(w)?;
        }
        self.fixed_point().validate()?;
        self.adjust.validate(schedule.num_sampling_steps())?;
        if self.sweep.max_iterations.is_empty() || self.sweep.max_iterations.contains(&0) {
            return bad("sweep.max_iterations must be non-empty and positive".into());
        }
        let i = &self.interpolation;
        if i.num_pairs == 0 || i.path_points < 2 || i.centroid_size == 0 {
            return bad("interpolation needs num_pairs > 0, path_points >= 2, centroid_size > 0".into());
        }
        let c = &self.contraction;
        if c.num_probes < 2 || !(c.radius_factor > 0.0) || !(c.min_radius > 0.0) || !(c.gate > 0.0) {
            return bad("contraction needs num_probes >= 2 and positive radius_factor, min_radius, gate".into());
        }
        if !(self.psnr_peak > 0.0 && self.psnr_peak.is_finite()) {
            return bad(format!("psnr_peak must be positive, got {}", self.psnr_peak));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, ignoring the output directory.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = None;
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        Sha256::digest(&bytes)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}
