//! Result records and their on-disk form: `result.json` plus one
//! `series_<name>.csv` per series.
//!
//! Nothing time-dependent is written, so a `(config, seed)` pair always
//! produces byte-identical files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Pipeline, SCHEMA_VERSION};
use crate::error::{Error, Result};
use crate::kernels::{BetaFit, BoundTerms, C3Estimate, MDCertificate, SpectralData};
use crate::martingale::{IncrementReport, LlogLReport, LpErrorReport, Verdict};
use crate::zoo::IfsRateReport;

/// One pass/fail judgement inside a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub verdict: Verdict,
    pub value: f64,
    pub target: Option<f64>,
    pub stderr: Option<f64>,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, verdict: Verdict, value: f64) -> Self {
        Self { name: name.into(), verdict, value, target: None, stderr: None, detail: String::new() }
    }

    pub fn target(mut self, target: f64) -> Self {
        self.target = Some(target);
        self
    }

    pub fn stderr(mut self, se: f64) -> Self {
        self.stderr = Some(se);
        self
    }

    pub fn detail(mut self, d: impl Into<String>) -> Self {
        self.detail = d.into();
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesRow {
    pub m: Option<usize>,
    pub n: usize,
    pub estimate: f64,
    pub stderr: f64,
    pub bound: Option<f64>,
}

/// A per-`n` (or per-`(m, n)`) table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub name: String,
    pub rows: Vec<SeriesRow>,
}

impl Series {
    pub fn new(name: impl Into<String>) -> Self {
        Self { name: name.into(), rows: Vec::new() }
    }

    pub fn push(&mut self, n: usize, estimate: f64, stderr: f64, bound: Option<f64>) {
        self.rows.push(SeriesRow { m: None, n, estimate, stderr, bound });
    }

    pub fn push_mn(&mut self, m: usize, n: usize, estimate: f64, stderr: f64, bound: Option<f64>) {
        self.rows.push(SeriesRow { m: Some(m), n, estimate, stderr, bound });
    }

    fn keyed_by_m(&self) -> bool {
        self.rows.iter().any(|r| r.m.is_some())
    }

    /// CSV text with columns `[m,] n, estimate, stderr, bound` (empty bound when absent).
    pub fn to_csv(&self) -> Result<String> {
        let with_m = self.keyed_by_m();
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::Io(e.to_string());
        let mut header = vec!["n", "estimate", "stderr", "bound"];
        if with_m {
            header.insert(0, "m");
        }
        w.write_record(&header).map_err(io)?;
        for r in &self.rows {
            let mut rec = vec![
                r.n.to_string(),
                r.estimate.to_string(),
                r.stderr.to_string(),
                r.bound.map(|b| b.to_string()).unwrap_or_default(),
            ];
            if with_m {
                rec.insert(0, r.m.map(|m| m.to_string()).unwrap_or_default());
            }
            w.write_record(&rec).map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateSummary {
    pub replicate: usize,
    /// Generation sizes, empty when the replicate hit the particle cap.
    pub sizes: Vec<usize>,
    pub total_particles: usize,
    pub capped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Telemetry {
    pub completed_replicates: usize,
    pub capped_replicates: usize,
    pub total_particles: u64,
    pub max_generation_size: usize,
}

impl Telemetry {
    pub fn from_summaries(s: &[ReplicateSummary]) -> Self {
        Self {
            completed_replicates: s.iter().filter(|r| !r.capped).count(),
            capped_replicates: s.iter().filter(|r| r.capped).count(),
            total_particles: s.iter().map(|r| r.total_particles as u64).sum(),
            max_generation_size: s.iter().flat_map(|r| r.sizes.iter().copied()).max().unwrap_or(0),
        }
    }
}

/// The structured reports a pipeline may produce.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Reports {
    pub spectral: Option<SpectralData>,
    pub beta: Option<BetaFit>,
    pub dispersion: Option<C3Estimate>,
    pub certificate: Option<MDCertificate>,
    pub bound_terms: Vec<(usize, usize, BoundTerms)>,
    pub lp_errors: Vec<LpErrorReport>,
    pub increments: Option<IncrementReport>,
    pub llogl: Vec<LlogLReport>,
    pub ifs: Option<IfsRateReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub schema_version: u32,
    pub pipeline: Pipeline,
    pub config: ExperimentConfig,
    /// Conjunction of all check verdicts.
    pub verdict: Verdict,
    pub checks: Vec<Check>,
    pub reports: Reports,
    pub series: Vec<Series>,
    pub replicates: Vec<ReplicateSummary>,
    pub telemetry: Telemetry,
}

impl RunResult {
    pub fn new(pipeline: Pipeline, config: ExperimentConfig) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            pipeline,
            config,
            verdict: Verdict::Holds,
            checks: Vec::new(),
            reports: Reports::default(),
            series: Vec::new(),
            replicates: Vec::new(),
            telemetry: Telemetry::default(),
        }
    }

    pub fn check(&mut self, c: Check) {
        self.verdict = self.verdict.and(c.verdict);
        self.checks.push(c);
    }

    pub fn series(&self, name: &str) -> Option<&Series> {
        self.series.iter().find(|s| s.name == name)
    }

    pub fn find_check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn set_replicates(&mut self, summaries: Vec<ReplicateSummary>) {
        self.telemetry = Telemetry::from_summaries(&summaries);
        self.replicates = summaries;
        if self.telemetry.capped_replicates > 0 {
            let capped = self.telemetry.capped_replicates;
            self.check(
                Check::new("particle_cap", Verdict::Inconclusive, capped as f64)
                    .detail(format!("{capped} replicate(s) exceeded the particle cap and were left out of the aggregates")),
            );
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Io(e.to_string()))
    }

    /// Writes `result.json` and the series files into `dir`; returns the paths written.
    pub fn write_to(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut written = Vec::with_capacity(1 + self.series.len());
        let json = dir.join("result.json");
        std::fs::write(&json, self.to_json()? + "\n")?;
        written.push(json);
        for s in &self.series {
            let path = dir.join(format!("series_{}.csv", s.name));
            std::fs::write(&path, s.to_csv()?)?;
            written.push(path);
        }
        Ok(written)
    }
}
