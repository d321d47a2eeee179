//! The four experiments and the contraction audit.

use std::time::Instant;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::ExperimentConfig;
use super::metrics::{metric_l2, metric_psnr};
use super::report::{
    monotone_after_first, ContractionAudit, ContractionStep, ExperimentReport, FailedTrial, Method,
    MetricValue, Row, TraceRecord,
};
use crate::codec::{Quantization, ToyCodec};
use crate::denoiser::{Condition, Denoiser, GuidanceConfig, MixtureDenoiser};
use crate::error::{Error, Result};
use crate::inversion::{
    ddim_invert, estimate_contraction, estimate_contraction_in_hull, fp_invert_step, invert, prompt_aware_adjust,
    FixedPointConfig,
};
use crate::latent::LatentVector;
use crate::sampler::generate_final;
use crate::seedspace::{centroid, slerp_path, SeedSet};

const STREAM_CALIBRATION: u64 = 1;
const STREAM_TRIALS: u64 = 2;
const STREAM_PAIRS: u64 = 3;
const STREAM_CENTROIDS: u64 = 4;
const STREAM_CONTRACTION: u64 = 5;

/// A configured model, codec and trial generator.
pub struct Bench {
    pub cfg: ExperimentConfig,
    pub model: MixtureDenoiser,
    pub codec: ToyCodec,
    pub config_hash: String,
    prompts: WeightedIndex<f64>,
}

/// Inputs shared by the reconstruction, sweep and consistency experiments.
#[derive(Debug, Clone)]
pub struct TrialSample {
    pub seed: LatentVector,
    pub cond: Condition,
}

struct Inverted {
    seed: LatentVector,
    nfe: usize,
    wall: f64,
}

impl Bench {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let schedule = cfg.schedule.build()?;
        let model = MixtureDenoiser::new(cfg.mixture.clone(), schedule);
        let prompts = WeightedIndex::new(cfg.mixture.weights())
            .map_err(|e| Error::InvalidMixture(e.to_string()))?;
        let config_hash = cfg.hash();
        let mut bench = Self {
            codec: ToyCodec::from_matrix(nalgebra::DMatrix::identity(1, 1), 0.0)?,
            cfg,
            model,
            config_hash,
            prompts,
        };
        bench.codec = match bench.cfg.codec.quantization()? {
            Quantization::Step(_) => ToyCodec::from_spec(&bench.cfg.codec)?,
            Quantization::TargetFraction(_) => {
                let g = GuidanceConfig::new(bench.cfg.guidance.scale)?;
                let latents = (0..bench.cfg.num_trials)
                    .map(|i| {
                        let s = bench.sample(STREAM_CALIBRATION, i);
                        generate_final(&bench.model, &s.seed, s.cond, g)
                    })
                    .collect::<Result<Vec<_>>>()?;
                ToyCodec::from_spec_calibrated(&bench.cfg.codec, &latents)?
            }
        };
        Ok(bench)
    }

    /// Independent RNG for `(stream, index)`, whatever order trials run in.
    pub fn rng(&self, stream: u64, index: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.rng_seed);
        rng.set_stream((stream << 40) | index as u64);
        rng
    }

    fn draw_prompt(&self, rng: &mut ChaCha8Rng) -> Condition {
        Condition::ComponentPrompt(self.prompts.sample(rng))
    }

    fn sample(&self, stream: u64, index: usize) -> TrialSample {
        let mut rng = self.rng(stream, index);
        let cond = self.draw_prompt(&mut rng);
        let seed = LatentVector::standard_normal(self.model.dim(), &mut rng);
        TrialSample { seed, cond }
    }

    /// The seed and prompt of trial `i`.
    pub fn trial(&self, i: usize) -> TrialSample {
        self.sample(STREAM_TRIALS, i)
    }

    fn report(&self, experiment: &str) -> ExperimentReport {
        ExperimentReport::new(experiment, &self.cfg.scenario, &self.config_hash, self.cfg.rng_seed)
    }

    fn row(&self, method: Method, guidance: f64, metric: &str, value: f64, trial: usize, wall: f64) -> Row {
        Row {
            scenario: self.cfg.scenario.clone(),
            method,
            guidance,
            metric: metric.to_string(),
            value: MetricValue(value),
            trial,
            wall_time_s: wall,
        }
    }

    fn run_trials<F>(&self, n: usize, report: &mut ExperimentReport, f: F)
    where
        F: Fn(usize) -> Result<Vec<Row>> + Sync,
    {
        let results: Vec<(usize, Result<Vec<Row>>)> =
            (0..n).into_par_iter().map(|i| (i, f(i))).collect();
        for (i, r) in results {
            match r {
                Ok(rows) => report.rows.extend(rows),
                Err(e) => {
                    log::warn!("{} trial {i} failed: {e}", report.experiment);
                    report.failed_trials.push(FailedTrial {
                        trial: i,
                        error: e.to_string(),
                    });
                }
            }
        }
        report.sort();
    }

    fn fixed_point(&self, max_iterations: usize) -> FixedPointConfig {
        FixedPointConfig {
            max_iterations,
            ..self.cfg.fixed_point()
        }
    }

    fn invert_by(
        &self,
        method: Method,
        z0: &LatentVector,
        cond: Condition,
        g: GuidanceConfig,
        fp: &FixedPointConfig,
    ) -> Result<Inverted> {
        let start = Instant::now();
        let (seed, nfe) = match method {
            Method::Ddim => (
                ddim_invert(&self.model, z0, cond, g)?,
                self.model.schedule().num_sampling_steps(),
            ),
            Method::Fpi => {
                let inv = invert(&self.model, z0, cond, g, fp)?;
                (inv.seed, inv.trace.nfe())
            }
            Method::FpiAdjust => {
                let adj = prompt_aware_adjust(&self.model, z0, cond, g, &self.cfg.adjust)?;
                let inv = invert(&self.model, &adj, cond, g, fp)?;
                let extra = 2 * self.cfg.adjust.steps_per_cycle * self.cfg.adjust.num_cycles;
                (inv.seed, inv.trace.nfe() + extra)
            }
        };
        Ok(Inverted {
            seed,
            nfe,
            wall: start.elapsed().as_secs_f64(),
        })
    }

    fn psnr(&self, a: &LatentVector, b: &LatentVector) -> Result<f64> {
        let xa = self.codec.decode(a)?;
        let xb = self.codec.decode(b)?;
        metric_psnr(xa.as_slice(), xb.as_slice(), self.cfg.psnr_peak)
    }

    /// Generate, encode, invert by each method, regenerate.
    ///
    /// Metrics per (trial, method, guidance): `seed_l2` (inversion of the
    /// clean latent against the true seed), `regen_l2` and `regen_psnr`
    /// (regeneration from the inverted encoding against the clean latent),
    /// `codec_floor_l2` and `nfe`.
    pub fn run_reconstruction_benchmark(&self) -> ExperimentReport {
        let mut report = self.report("reconstruct");
        let fp = self.cfg.fixed_point();
        self.run_trials(self.cfg.num_trials, &mut report, |i| {
            let s = self.trial(i);
            let mut rows = Vec::new();
            for &w in &self.cfg.guidance.sweep {
                let g = GuidanceConfig::new(w)?;
                let z0 = generate_final(&self.model, &s.seed, s.cond, g)?;
                let ze = self.codec.round_trip(&z0)?;
                let floor = metric_l2(ze.as_slice(), z0.as_slice())?;
                for method in Method::ALL {
                    let clean = self.invert_by(method, &z0, s.cond, g, &fp)?;
                    let enc = self.invert_by(method, &ze, s.cond, g, &fp)?;
                    let regen = generate_final(&self.model, &enc.seed, s.cond, g)?;
                    let wall = enc.wall;
                    rows.push(self.row(method, w, "seed_l2", clean.seed.distance(&s.seed), i, clean.wall));
                    rows.push(self.row(method, w, "regen_l2", regen.distance(&z0), i, wall));
                    rows.push(self.row(method, w, "regen_psnr", self.psnr(&regen, &z0)?, i, wall));
                    rows.push(self.row(method, w, "codec_floor_l2", floor, i, wall));
                    rows.push(self.row(method, w, "nfe", enc.nfe as f64, i, wall));
                }
            }
            Ok(rows)
        });
        report
    }

    /// Reconstruction quality against the iteration budget at the default
    /// guidance scale, plus residual traces and the contraction audit.
    ///
    /// Swept metrics are named `<metric>@<max_iterations>`; the `ddim` rows
    /// carry the unswept `regen_psnr` and `regen_l2`.
    pub fn run_iteration_sweep(&self) -> ExperimentReport {
        let mut report = self.report("sweep-iters");
        let w = self.cfg.guidance.scale;
        let fp0 = self.cfg.fixed_point();
        self.run_trials(self.cfg.num_trials, &mut report, |i| {
            let g = GuidanceConfig::new(w)?;
            let s = self.trial(i);
            let z0 = generate_final(&self.model, &s.seed, s.cond, g)?;
            let ze = self.codec.round_trip(&z0)?;
            let adjusted = prompt_aware_adjust(&self.model, &ze, s.cond, g, &self.cfg.adjust)?;
            let mut rows = Vec::new();
            let d = self.invert_by(Method::Ddim, &ze, s.cond, g, &fp0)?;
            let regen = generate_final(&self.model, &d.seed, s.cond, g)?;
            rows.push(self.row(Method::Ddim, w, "regen_psnr", self.psnr(&regen, &z0)?, i, d.wall));
            rows.push(self.row(Method::Ddim, w, "regen_l2", regen.distance(&z0), i, d.wall));
            for &n in &self.cfg.sweep.max_iterations {
                let fp = self.fixed_point(n);
                for (method, input) in [(Method::Fpi, &ze), (Method::FpiAdjust, &adjusted)] {
                    let start = Instant::now();
                    let inv = invert(&self.model, input, s.cond, g, &fp)?;
                    let wall = start.elapsed().as_secs_f64();
                    let regen = generate_final(&self.model, &inv.seed, s.cond, g)?;
                    rows.push(self.row(method, w, &format!("regen_psnr@{n}"), self.psnr(&regen, &z0)?, i, wall));
                    rows.push(self.row(method, w, &format!("regen_l2@{n}"), regen.distance(&z0), i, wall));
                    rows.push(self.row(method, w, &format!("nfe@{n}"), inv.trace.nfe() as f64, i, wall));
                }
            }
            Ok(rows)
        });

        let max_n = *self.cfg.sweep.max_iterations.iter().max().expect("validated non-empty");
        let trace_cfg = FixedPointConfig {
            max_iterations: max_n,
            residual_tolerance: 0.0,
            track_trace: false,
        };
        let traced = (|| -> Result<Vec<TraceRecord>> {
            let g = GuidanceConfig::new(w)?;
            let s = self.trial(0);
            let z0 = generate_final(&self.model, &s.seed, s.cond, g)?;
            let ze = self.codec.round_trip(&z0)?;
            let mut out = Vec::new();
            for (label, input) in [("clean", &z0), ("encoded", &ze)] {
                let inv = invert(&self.model, input, s.cond, g, &trace_cfg)?;
                out.push(TraceRecord {
                    label: label.into(),
                    method: Method::Fpi,
                    guidance: w,
                    trial: 0,
                    steps: inv.trace.steps,
                });
            }
            Ok(out)
        })();
        match traced {
            Ok(t) => report.traces = t,
            Err(e) => report.failed_trials.push(FailedTrial {
                trial: 0,
                error: format!("trace: {e}"),
            }),
        }

        match self.run_contraction_audit() {
            Ok((audit, rows)) => {
                report.rows.extend(rows);
                report.contraction = Some(audit);
            }
            Err((trial, e)) => report.failed_trials.push(FailedTrial {
                trial,
                error: format!("contraction audit: {e}"),
            }),
        }
        report.sort();
        report
    }

    /// Estimates the Lipschitz constant of every fixed-point step of clean
    /// and encoded inversions at every guidance scale, and checks residual
    /// monotonicity where the estimate is below the gate.
    pub fn run_contraction_audit(
        &self,
    ) -> std::result::Result<(ContractionAudit, Vec<Row>), (usize, Error)> {
        let c = &self.cfg.contraction;
        let fp = FixedPointConfig {
            track_trace: true,
            ..self.cfg.fixed_point()
        };
        let per_trial: Vec<std::result::Result<(Vec<ContractionStep>, Vec<Row>), (usize, Error)>> =
            (0..c.num_trials)
                .into_par_iter()
                .map(|i| self.audit_trial(i, &fp).map_err(|e| (i, e)))
                .collect();
        let mut audit = ContractionAudit {
            gate: c.gate,
            steps: Vec::new(),
        };
        let mut rows = Vec::new();
        for r in per_trial {
            let (steps, r) = r?;
            audit.steps.extend(steps);
            rows.extend(r);
        }
        Ok((audit, rows))
    }

    fn audit_trial(&self, i: usize, fp: &FixedPointConfig) -> Result<(Vec<ContractionStep>, Vec<Row>)> {
        let c = &self.cfg.contraction;
        let s = self.trial(i);
        let mut rng = self.rng(STREAM_CONTRACTION, i);
        let mut steps = Vec::new();
        let mut rows = Vec::new();
        for &w in &self.cfg.guidance.sweep {
            let g = GuidanceConfig::new(w)?;
            let z0 = generate_final(&self.model, &s.seed, s.cond, g)?;
            let ze = self.codec.round_trip(&z0)?;
            for (label, input) in [("clean", z0), ("encoded", ze)] {
                let mut z = input;
                let mut max_rho: f64 = 0.0;
                let mut violations = 0usize;
                let mut gated = 0usize;
                for (t, t_prev) in self.model.schedule().ascending_pairs() {
                    let step = fp_invert_step(&self.model, &z, t, t_prev, s.cond, g, fp)?;
                    let hull = step
                        .iterates
                        .as_ref()
                        .map(|it| it.iter().map(|x| x.distance(&z)).fold(0.0, f64::max))
                        .unwrap_or(0.0);
                    let radius = (c.radius_factor * hull).max(c.min_radius);
                    let rho_ball = estimate_contraction(
                        &self.model, &z, t, t_prev, s.cond, g, radius, c.num_probes, &mut rng,
                    )?;
                    let iterates = step.iterates.as_deref().unwrap_or_default();
                    let rho_hull = if iterates.iter().skip(1).any(|x| x != &iterates[0]) {
                        estimate_contraction_in_hull(
                            &self.model, &z, t, t_prev, s.cond, g, iterates, c.num_probes, &mut rng,
                        )?
                    } else {
                        0.0
                    };
                    let rho = rho_ball.max(rho_hull);
                    let monotone = monotone_after_first(&step.residuals);
                    max_rho = max_rho.max(rho);
                    if rho < c.gate {
                        gated += 1;
                        if !monotone {
                            violations += 1;
                        }
                    }
                    steps.push(ContractionStep {
                        trial: i,
                        guidance: w,
                        input: label.into(),
                        timestep: t,
                        rho,
                        rho_ball,
                        rho_hull,
                        probe_radius: radius,
                        residuals: step.residuals.clone(),
                        monotone,
                    });
                    z = step.latent;
                }
                rows.push(self.row(Method::Fpi, w, &format!("max_rho_{label}"), max_rho, i, 0.0));
                rows.push(self.row(Method::Fpi, w, &format!("gated_steps_{label}"), gated as f64, i, 0.0));
                rows.push(self.row(Method::Fpi, w, &format!("monotone_violations_{label}"), violations as f64, i, 0.0));
            }
        }
        Ok((steps, rows))
    }

    /// Encoding error, raw-encoding reconstruction error and adjusted-latent
    /// error.
    ///
    /// `fpi` rows: `encode_l2` (`‖z_0 − z_0^E‖`), `regen_l2`
    /// (`‖z_0 − ẑ_0^E‖`). `fpi+adjust` rows: `adjusted_l2` (`‖z_0 − z̃_0‖`),
    /// `regen_l2`. `ddim` rows: `regen_l2`.
    pub fn run_consistency_experiment(&self) -> ExperimentReport {
        let mut report = self.report("consistency");
        let fp = self.cfg.fixed_point();
        self.run_trials(self.cfg.num_trials, &mut report, |i| {
            let s = self.trial(i);
            let mut rows = Vec::new();
            for &w in &self.cfg.guidance.sweep {
                let g = GuidanceConfig::new(w)?;
                let z0 = generate_final(&self.model, &s.seed, s.cond, g)?;
                let ze = self.codec.round_trip(&z0)?;
                let adjusted = prompt_aware_adjust(&self.model, &ze, s.cond, g, &self.cfg.adjust)?;

                let start = Instant::now();
                let raw = invert(&self.model, &ze, s.cond, g, &fp)?;
                let wall = start.elapsed().as_secs_f64();
                let raw_regen = generate_final(&self.model, &raw.seed, s.cond, g)?;
                rows.push(self.row(Method::Fpi, w, "encode_l2", ze.distance(&z0), i, wall));
                rows.push(self.row(Method::Fpi, w, "regen_l2", raw_regen.distance(&z0), i, wall));

                let start = Instant::now();
                let adj = invert(&self.model, &adjusted, s.cond, g, &fp)?;
                let wall = start.elapsed().as_secs_f64();
                let adj_regen = generate_final(&self.model, &adj.seed, s.cond, g)?;
                rows.push(self.row(Method::FpiAdjust, w, "adjusted_l2", adjusted.distance(&z0), i, wall));
                rows.push(self.row(Method::FpiAdjust, w, "regen_l2", adj_regen.distance(&z0), i, wall));

                let d = self.invert_by(Method::Ddim, &ze, s.cond, g, &fp)?;
                let d_regen = generate_final(&self.model, &d.seed, s.cond, g)?;
                rows.push(self.row(Method::Ddim, w, "regen_l2", d_regen.distance(&z0), i, d.wall));
            }
            Ok(rows)
        });
        report
    }

    /// Slerp paths between inverted seeds of pairs of same-prompt samples,
    /// and norm-matched centroids of inverted seed sets, scored by the log
    /// density of the regenerated latents under the data distribution.
    ///
    /// Pair metrics (trial = pair index): `path_log_density` (mean over the
    /// path), `log_density@k` for path point `k`, `endpoint_l2`,
    /// `linear_fallbacks`. Centroid metrics (trial = set index):
    /// `centroid_log_density`.
    pub fn run_interpolation_experiment(&self) -> ExperimentReport {
        let mut report = self.report("interpolate");
        let w = self.cfg.guidance.scale;
        let fp = self.cfg.fixed_point();
        let ic = &self.cfg.interpolation;
        let methods = [Method::Ddim, Method::Fpi];
        self.run_trials(ic.num_pairs, &mut report, |p| {
            let g = GuidanceConfig::new(w)?;
            let mut rng = self.rng(STREAM_PAIRS, p);
            let cond = self.draw_prompt(&mut rng);
            let a = LatentVector::standard_normal(self.model.dim(), &mut rng);
            let b = LatentVector::standard_normal(self.model.dim(), &mut rng);
            let za = generate_final(&self.model, &a, cond, g)?;
            let zb = generate_final(&self.model, &b, cond, g)?;
            let mut rows = Vec::new();
            for method in methods {
                let ia = self.invert_by(method, &za, cond, g, &fp)?;
                let ib = self.invert_by(method, &zb, cond, g, &fp)?;
                let wall = ia.wall + ib.wall;
                let path = slerp_path(&ia.seed, &ib.seed, ic.path_points)?;
                let mut densities = Vec::with_capacity(path.len());
                let mut regens = Vec::with_capacity(path.len());
                for pt in &path {
                    let z = generate_final(&self.model, &pt.latent, cond, g)?;
                    densities.push(self.model.log_marginal_density(&z, 0, Condition::Unconditional)?);
                    regens.push(z);
                }
                let fallbacks = path.iter().filter(|p| p.linear_fallback).count();
                let endpoint = regens[0]
                    .distance(&za)
                    .max(regens[regens.len() - 1].distance(&zb));
                let mean = densities.iter().sum::<f64>() / densities.len() as f64;
                rows.push(self.row(method, w, "path_log_density", mean, p, wall));
                for (k, d) in densities.iter().enumerate() {
                    rows.push(self.row(method, w, &format!("log_density@{k}"), *d, p, wall));
                }
                rows.push(self.row(method, w, "endpoint_l2", endpoint, p, wall));
                rows.push(self.row(method, w, "linear_fallbacks", fallbacks as f64, p, wall));
            }
            Ok(rows)
        });

        let mut centroids = self.report("interpolate");
        self.run_trials(ic.num_centroid_sets, &mut centroids, |c| {
            let g = GuidanceConfig::new(w)?;
            let mut rng = self.rng(STREAM_CENTROIDS, c);
            let cond = self.draw_prompt(&mut rng);
            let z0s = (0..ic.centroid_size)
                .map(|_| {
                    let s = LatentVector::standard_normal(self.model.dim(), &mut rng);
                    generate_final(&self.model, &s, cond, g)
                })
                .collect::<Result<Vec<_>>>()?;
            let mut rows = Vec::new();
            for method in methods {
                let mut wall = 0.0;
                let mut seeds = Vec::with_capacity(z0s.len());
                for z in &z0s {
                    let inv = self.invert_by(method, z, cond, g, &fp)?;
                    wall += inv.wall;
                    seeds.push(inv.seed);
                }
                let center = centroid(&SeedSet::new(seeds)?)?;
                let z = generate_final(&self.model, &center, cond, g)?;
                let ld = self.model.log_marginal_density(&z, 0, Condition::Unconditional)?;
                rows.push(self.row(method, w, "centroid_log_density", ld, c, wall));
            }
            Ok(rows)
        });
        report.rows.extend(centroids.rows);
        for mut f in centroids.failed_trials {
            f.error = format!("centroid set: {}", f.error);
            report.failed_trials.push(f);
        }
        report.sort();
        report
    }
}
