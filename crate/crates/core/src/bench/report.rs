//! Metric rows, reports and their CSV/JSON serialization.

use std::cmp::Ordering;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::metrics::{mean, median};
use crate::error::Result;
use crate::inversion::StepTrace;

pub const CSV_HEADER: [&str; 7] = [
    "scenario",
    "method",
    "guidance",
    "metric",
    "value",
    "trial",
    "wall_time_s",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "ddim")]
    Ddim,
    #[serde(rename = "fpi")]
    Fpi,
    #[serde(rename = "fpi+adjust")]
    FpiAdjust,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Ddim, Method::Fpi, Method::FpiAdjust];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Ddim => "ddim",
            Method::Fpi => "fpi",
            Method::FpiAdjust => "fpi+adjust",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A metric value; `+∞` (an exact PSNR match) is written as `"exact"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricValue(pub f64);

pub const EXACT: &str = "exact";

impl Serialize for MetricValue {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0 == f64::INFINITY {
            s.serialize_str(EXACT)
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for MetricValue {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = MetricValue;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "a number or \"{EXACT}\"")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<MetricValue, E> {
                Ok(MetricValue(v))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<MetricValue, E> {
                Ok(MetricValue(v as f64))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<MetricValue, E> {
                Ok(MetricValue(v as f64))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<MetricValue, E> {
                if v == EXACT {
                    return Ok(MetricValue(f64::INFINITY));
                }
                v.parse().map(MetricValue).map_err(E::custom)
            }
        }
        d.deserialize_any(V)
    }
}

/// One metric record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub scenario: String,
    pub method: Method,
    pub guidance: f64,
    pub metric: String,
    pub value: MetricValue,
    pub trial: usize,
    pub wall_time_s: f64,
}

impl Row {
    fn sort_key_cmp(&self, other: &Self) -> Ordering {
        self.scenario
            .cmp(&other.scenario)
            .then(self.method.cmp(&other.method))
            .then(self.guidance.total_cmp(&other.guidance))
            .then(self.metric.cmp(&other.metric))
            .then(self.trial.cmp(&other.trial))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: Method,
    pub guidance: f64,
    pub metric: String,
    pub count: usize,
    pub mean: MetricValue,
    pub median: MetricValue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedTrial {
    pub trial: usize,
    pub error: String,
}

/// Residual history of one inversion, for plots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub label: String,
    pub method: Method,
    pub guidance: f64,
    pub trial: usize,
    pub steps: Vec<StepTrace>,
}

/// One audited inversion step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionStep {
    pub trial: usize,
    pub guidance: f64,
    pub input: String,
    pub timestep: usize,
    /// `max(rho_ball, rho_hull)`
    pub rho: f64,
    pub rho_ball: f64,
    pub rho_hull: f64,
    pub probe_radius: f64,
    pub residuals: Vec<f64>,
    pub monotone: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ContractionAudit {
    pub gate: f64,
    pub steps: Vec<ContractionStep>,
}

impl ContractionAudit {
    /// Steps below the gate whose residuals increase.
    pub fn violations(&self) -> Vec<&ContractionStep> {
        self.steps
            .iter()
            .filter(|s| s.rho < self.gate && !s.monotone)
            .collect()
    }

    pub fn gated(&self) -> usize {
        self.steps.iter().filter(|s| s.rho < self.gate).count()
    }

    pub fn exempt(&self) -> usize {
        self.steps.len() - self.gated()
    }
}

/// The residuals from the first iterate onward (`r_1, r_2, …`) never grow,
/// up to floating-point noise. `r_0`, the residual of `z_prev` itself, is
/// not constrained.
pub fn monotone_after_first(residuals: &[f64]) -> bool {
    residuals.len() < 2 || is_non_increasing(&residuals[1..])
}

/// Non-increasing up to floating-point noise.
pub fn is_non_increasing(residuals: &[f64]) -> bool {
    residuals
        .windows(2)
        .all(|w| w[1] <= w[0] * (1.0 + 1e-12) + 1e-15)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: String,
    pub scenario: String,
    pub config_hash: String,
    pub rng_seed: u64,
    pub rows: Vec<Row>,
    #[serde(default)]
    pub failed_trials: Vec<FailedTrial>,
    #[serde(default)]
    pub traces: Vec<TraceRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contraction: Option<ContractionAudit>,
}

impl ExperimentReport {
    pub fn new(experiment: &str, scenario: &str, config_hash: &str, rng_seed: u64) -> Self {
        Self {
            experiment: experiment.into(),
            scenario: scenario.into(),
            config_hash: config_hash.into(),
            rng_seed,
            rows: Vec::new(),
            failed_trials: Vec::new(),
            traces: Vec::new(),
            contraction: None,
        }
    }

    pub fn sort(&mut self) {
        self.rows.sort_by(|a, b| a.sort_key_cmp(b));
        self.failed_trials.sort_by_key(|f| f.trial);
    }

    /// Values of one metric, in trial order.
    pub fn values(&self, method: Method, guidance: f64, metric: &str) -> Vec<f64> {
        let mut rows: Vec<&Row> = self
            .rows
            .iter()
            .filter(|r| r.method == method && r.guidance == guidance && r.metric == metric)
            .collect();
        rows.sort_by_key(|r| r.trial);
        rows.iter().map(|r| r.value.0).collect()
    }

    pub fn median(&self, method: Method, guidance: f64, metric: &str) -> Option<f64> {
        median(&self.values(method, guidance, metric))
    }

    pub fn mean(&self, method: Method, guidance: f64, metric: &str) -> Option<f64> {
        mean(&self.values(method, guidance, metric))
    }

    /// Per (method, guidance, metric) aggregates, in row order.
    pub fn summary(&self) -> Vec<SummaryRow> {
        let mut keys: Vec<(Method, f64, String)> = Vec::new();
        for r in &self.rows {
            if !keys
                .iter()
                .any(|(m, g, k)| *m == r.method && *g == r.guidance && *k == r.metric)
            {
                keys.push((r.method, r.guidance, r.metric.clone()));
            }
        }
        keys.into_iter()
            .map(|(method, guidance, metric)| {
                let v = self.values(method, guidance, &metric);
                SummaryRow {
                    method,
                    guidance,
                    count: v.len(),
                    mean: MetricValue(mean(&v).unwrap_or(f64::NAN)),
                    median: MetricValue(median(&v).unwrap_or(f64::NAN)),
                    metric,
                }
            })
            .collect()
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
        wtr.write_record(CSV_HEADER)?;
        for r in &self.rows {
            wtr.serialize(r)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(r: R) -> Result<Vec<Row>> {
        let mut rdr = csv::Reader::from_reader(r);
        let header: Vec<String> = rdr.headers()?.iter().map(String::from).collect();
        if header != CSV_HEADER {
            return Err(crate::error::Error::Serialization(format!(
                "unexpected csv header {header:?}"
            )));
        }
        let mut rows = Vec::new();
        for rec in rdr.deserialize() {
            rows.push(rec?);
        }
        Ok(rows)
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        let rows: Vec<serde_json::Value> = self
            .rows
            .iter()
            .map(|r| {
                let mut v = serde_json::to_value(r).expect("row serializes");
                v["config_hash"] = serde_json::Value::String(self.config_hash.clone());
                v
            })
            .collect();
        let mut v = serde_json::to_value(self).expect("report serializes");
        v["rows"] = serde_json::Value::Array(rows);
        v["summary"] = serde_json::to_value(self.summary()).expect("summary serializes");
        v
    }

    /// Writes `<stem>.csv` and `<stem>.json` into `dir`.
    pub fn emit(&self, dir: &Path, stem: &str) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let csv_path = dir.join(format!("{stem}.csv"));
        self.write_csv(std::fs::File::create(&csv_path)?)?;
        let json_path = dir.join(format!("{stem}.json"));
        let text = serde_json::to_string_pretty(&self.to_json_value())?;
        std::fs::write(&json_path, text + "\n")?;
        Ok(vec![csv_path, json_path])
    }
}
