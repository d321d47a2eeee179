//! Experiment harness: configuration, the experiments, metrics, and
//! CSV/JSON/SVG emission.

pub mod config;
pub mod experiments;
pub mod metrics;
pub mod plot;
pub mod report;

use std::path::{Path, PathBuf};

pub use config::ExperimentConfig;
pub use experiments::Bench;
pub use report::{ExperimentReport, Method, MetricValue, Row};

use crate::error::Result;
use plot::{line_plot, Series};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Reconstruct,
    SweepIters,
    Consistency,
    Interpolate,
    All,
}

impl Command {
    fn experiments(self) -> Vec<Command> {
        match self {
            Command::All => vec![
                Command::Reconstruct,
                Command::SweepIters,
                Command::Consistency,
                Command::Interpolate,
            ],
            c => vec![c],
        }
    }

    pub fn stem(self) -> &'static str {
        match self {
            Command::Reconstruct => "reconstruct",
            Command::SweepIters => "sweep_iters",
            Command::Consistency => "consistency",
            Command::Interpolate => "interpolate",
            Command::All => "all",
        }
    }
}

#[derive(Debug, Default)]
pub struct RunOutcome {
    pub reports: Vec<ExperimentReport>,
    pub files: Vec<PathBuf>,
}

impl RunOutcome {
    pub fn failed_trials(&self) -> usize {
        self.reports.iter().map(|r| r.failed_trials.len()).sum()
    }
}

/// Runs `command` and writes its reports (and plots, if asked) into `out`.
pub fn run(bench: &Bench, command: Command, out: &Path, plots: bool) -> Result<RunOutcome> {
    let mut outcome = RunOutcome::default();
    for c in command.experiments() {
        log::info!("running {}", c.stem());
        let report = match c {
            Command::Reconstruct => bench.run_reconstruction_benchmark(),
            Command::SweepIters => bench.run_iteration_sweep(),
            Command::Consistency => bench.run_consistency_experiment(),
            Command::Interpolate => bench.run_interpolation_experiment(),
            Command::All => unreachable!("expanded above"),
        };
        outcome.files.extend(report.emit(out, c.stem())?);
        if plots {
            for (name, svg) in plots_for(c, bench, &report) {
                let path = out.join(name);
                std::fs::write(&path, svg)?;
                outcome.files.push(path);
            }
        }
        outcome.reports.push(report);
    }
    Ok(outcome)
}

fn plots_for(c: Command, bench: &Bench, r: &ExperimentReport) -> Vec<(String, String)> {
    let sweep = &bench.cfg.guidance.sweep;
    let w = bench.cfg.guidance.scale;
    let mut out = Vec::new();
    match c {
        Command::Reconstruct => {
            let series = Method::ALL
                .iter()
                .map(|&m| Series {
                    name: m.to_string(),
                    points: sweep
                        .iter()
                        .filter_map(|&g| r.median(m, g, "regen_l2").map(|v| (g, v)))
                        .collect(),
                })
                .collect::<Vec<_>>();
            out.push((
                "reconstruct.svg".into(),
                line_plot("Median regeneration error", "guidance scale", "L2 to z_0", &series, true),
            ));
        }
        Command::SweepIters => {
            let iters = &bench.cfg.sweep.max_iterations;
            let mut series: Vec<Series> = [Method::Fpi, Method::FpiAdjust]
                .iter()
                .map(|&m| Series {
                    name: m.to_string(),
                    points: iters
                        .iter()
                        .filter_map(|&n| {
                            r.median(m, w, &format!("regen_psnr@{n}")).map(|v| (n as f64, v))
                        })
                        .collect(),
                })
                .collect();
            if let Some(d) = r.median(Method::Ddim, w, "regen_psnr") {
                series.push(Series {
                    name: "ddim".into(),
                    points: iters.iter().map(|&n| (n as f64, d)).collect(),
                });
            }
            out.push((
                "sweep_iters.svg".into(),
                line_plot("Median PSNR vs iteration budget", "max iterations", "PSNR (dB)", &series, false),
            ));
            for t in &r.traces {
                let n = t.steps.len();
                let picks: Vec<usize> = (0..6).map(|k| k * (n - 1) / 5).collect();
                let series = picks
                    .iter()
                    .map(|&k| Series {
                        name: format!("t={}", t.steps[k].timestep),
                        points: t.steps[k]
                            .residuals
                            .iter()
                            .enumerate()
                            .map(|(i, v)| (i as f64, *v))
                            .collect(),
                    })
                    .collect::<Vec<_>>();
                out.push((
                    format!("residual_curves_{}.svg", t.label),
                    line_plot(
                        &format!("Fixed-point residuals ({} input, w={})", t.label, t.guidance),
                        "iteration",
                        "residual",
                        &series,
                        true,
                    ),
                ));
            }
        }
        Command::Consistency => {
            let pick = [
                (Method::Fpi, "encode_l2", "encoding"),
                (Method::Fpi, "regen_l2", "fpi from encoding"),
                (Method::FpiAdjust, "adjusted_l2", "adjusted encoding"),
                (Method::FpiAdjust, "regen_l2", "fpi from adjusted"),
            ];
            let series = pick
                .iter()
                .map(|&(m, metric, name)| Series {
                    name: name.into(),
                    points: sweep
                        .iter()
                        .filter_map(|&g| r.mean(m, g, metric).map(|v| (g, v)))
                        .collect(),
                })
                .collect::<Vec<_>>();
            out.push((
                "consistency.svg".into(),
                line_plot("Mean distance to z_0", "guidance scale", "L2", &series, true),
            ));
        }
        Command::Interpolate => {
            let k = bench.cfg.interpolation.path_points;
            let series = [Method::Ddim, Method::Fpi]
                .iter()
                .map(|&m| Series {
                    name: m.to_string(),
                    points: (0..k)
                        .filter_map(|i| {
                            r.mean(m, w, &format!("log_density@{i}"))
                                .map(|v| (i as f64 / (k - 1) as f64, v))
                        })
                        .collect(),
                })
                .collect::<Vec<_>>();
            out.push((
                "interpolate.svg".into(),
                line_plot("Mean log density along slerp paths", "u", "log p(z_0)", &series, false),
            ));
        }
        Command::All => {}
    }
    out
}
