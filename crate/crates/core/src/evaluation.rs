//! Coverage and length metrics, and the scenario x method x replication sweep.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conformal::{ConformalConfig, ScoreKind};
use crate::error::{Error, Result};
use crate::ite::{fit_counterfactual, method_label, run_variant, stage_one_seed, ItePipelineConfig, Variant, PROPENSITY_CLIP};
use crate::rng::{derive_seed, derive_seed_str};
use crate::simulation::{gen_scenario, oracle_width_at, ScenarioConfig};
use crate::stats::{mean, sample_sd};

/// Fraction of `truth` values inside their closed interval.
pub fn empirical_coverage(intervals: &[(f64, f64)], truth: &[f64]) -> Result<f64> {
    if intervals.len() != truth.len() {
        return Err(Error::Shape(format!(
            "{} intervals but {} truths",
            intervals.len(),
            truth.len()
        )));
    }
    if intervals.is_empty() {
        return Err(Error::InvalidArgument("no intervals".into()));
    }
    let hits = intervals
        .iter()
        .zip(truth)
        .filter(|&(&(lo, hi), &t)| lo <= t && t <= hi)
        .count();
    Ok(hits as f64 / truth.len() as f64)
}

pub fn average_length(intervals: &[(f64, f64)]) -> Result<f64> {
    if intervals.is_empty() {
        return Err(Error::InvalidArgument("no intervals".into()));
    }
    Ok(intervals.iter().map(|(lo, hi)| hi - lo).sum::<f64>() / intervals.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSpec {
    pub score: ScoreKind,
    pub variant: Variant,
}

impl MethodSpec {
    pub fn label(&self) -> String {
        method_label(self.score, self.variant)
    }

    /// Exact, naive and inexact for both scores, plus the density X variant.
    pub fn standard() -> Vec<Self> {
        let mut out = Vec::new();
        for score in [ScoreKind::Cd, ScoreKind::Cqr] {
            for variant in [Variant::Exact, Variant::Naive, Variant::Inexact] {
                out.push(Self { score, variant });
            }
        }
        out.push(Self {
            score: ScoreKind::Cd,
            variant: Variant::X,
        });
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenarios: Vec<ScenarioConfig>,
    pub methods: Vec<MethodSpec>,
    pub alpha: f64,
    pub replications: usize,
    pub base_seed: u64,
    pub conformal: ConformalConfig,
    pub propensity_clip: f64,
    pub heuristic_alpha1: Option<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenarios: ScenarioConfig::standard(0),
            methods: MethodSpec::standard(),
            alpha: 0.1,
            replications: 20,
            base_seed: 20_240_101,
            conformal: ConformalConfig::default(),
            propensity_clip: PROPENSITY_CLIP,
            heuristic_alpha1: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::InvalidArgument("replications must be at least 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidArgument("methods list is empty".into()));
        }
        if self.scenarios.is_empty() {
            return Err(Error::InvalidArgument("scenarios list is empty".into()));
        }
        for s in &self.scenarios {
            s.validate()?;
        }
        for m in &self.methods {
            self.pipeline(*m).validate()?;
        }
        Ok(())
    }

    pub fn pipeline(&self, method: MethodSpec) -> ItePipelineConfig {
        ItePipelineConfig {
            alpha: self.alpha,
            score: method.score,
            variant: method.variant,
            conformal: self.conformal.clone(),
            propensity_clip: self.propensity_clip,
            heuristic_alpha1: self.heuristic_alpha1,
        }
    }

    /// Data seed of one (scenario, replication) cell; every method in the
    /// cell sees the same data and the same pipeline seed.
    pub fn cell_seed(&self, scenario: &ScenarioConfig, replication: usize) -> u64 {
        let s = derive_seed(derive_seed_str(self.base_seed, &scenario.label()), scenario.seed);
        derive_seed(s, replication as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub method: String,
    pub scenario: String,
    pub coverage: f64,
    pub coverage_se: f64,
    pub avg_len: f64,
    pub len_se: f64,
}

/// One test point of one method in the first replication.
#[derive(Debug, Clone, PartialEq)]
pub struct PointRecord {
    pub scenario: String,
    pub method: String,
    pub index: usize,
    pub x1: f64,
    pub lo: f64,
    pub hi: f64,
    pub truth: f64,
    pub oracle_width: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellFailure {
    pub scenario: String,
    pub method: String,
    pub replication: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub rows: Vec<MetricsRow>,
    pub points: Vec<PointRecord>,
    pub failures: Vec<CellFailure>,
}

/// `(mean, sd / sqrt(R))` of per-replication values.
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    (mean(values), sample_sd(values) / (values.len() as f64).sqrt())
}

struct CellResult {
    scenario: usize,
    replication: usize,
    method: usize,
    outcome: std::result::Result<(f64, f64), String>,
    points: Vec<PointRecord>,
}

fn run_cell(cfg: &ExperimentConfig, si: usize, rep: usize) -> Vec<CellResult> {
    let scenario = &cfg.scenarios[si];
    let label = scenario.label();
    let seed = cfg.cell_seed(scenario, rep);
    let fail_all = |msg: String| -> Vec<CellResult> {
        (0..cfg.methods.len())
            .map(|mi| CellResult {
                scenario: si,
                replication: rep,
                method: mi,
                outcome: Err(msg.clone()),
                points: Vec::new(),
            })
            .collect()
    };
    let data = match gen_scenario(&ScenarioConfig {
        seed: derive_seed_str(seed, "data"),
        ..scenario.clone()
    }) {
        Ok(d) => d,
        Err(e) => return fail_all(format!("data generation: {e}")),
    };
    let truth = data.test.true_ite().expect("simulated data carries the true effect").to_vec();
    let x_test = data.test.features();
    let pipeline_seed = derive_seed_str(seed, "pipeline");

    // methods sharing score and stage-one level share one stage-one fit
    let mut groups: BTreeMap<(u8, u64), Vec<usize>> = BTreeMap::new();
    for (mi, m) in cfg.methods.iter().enumerate() {
        let p = cfg.pipeline(*m);
        let key = (u8::from(m.score == ScoreKind::Cqr), p.budget().alpha1.to_bits());
        groups.entry(key).or_default().push(mi);
    }
    let mut out = Vec::new();
    for members in groups.values() {
        let first = cfg.pipeline(cfg.methods[members[0]]);
        let fit = fit_counterfactual(&data.train, &first, first.budget().alpha1, stage_one_seed(pipeline_seed));
        let mut s1 = None;
        for &mi in members {
            let method = cfg.methods[mi];
            let result = fit
                .as_ref()
                .map_err(|e| e.to_string())
                .and_then(|cf| {
                    run_variant(cf, &mut s1, &cfg.pipeline(method), x_test, pipeline_seed).map_err(|e| e.to_string())
                });
            let mut points = Vec::new();
            let outcome = result.and_then(|iv| {
                if rep == 0 {
                    for (i, &(lo, hi)) in iv.iter().enumerate() {
                        let x = data.test.row(i).to_vec();
                        points.push(PointRecord {
                            scenario: label.clone(),
                            method: method.label(),
                            index: i,
                            x1: x[0],
                            lo,
                            hi,
                            truth: truth[i],
                            oracle_width: oracle_width_at(scenario, &x, cfg.alpha).map_err(|e| e.to_string())?,
                        });
                    }
                }
                Ok((
                    empirical_coverage(&iv, &truth).map_err(|e| e.to_string())?,
                    average_length(&iv).map_err(|e| e.to_string())?,
                ))
            });
            out.push(CellResult {
                scenario: si,
                replication: rep,
                method: mi,
                outcome,
                points,
            });
        }
    }
    out
}

/// Runs every (scenario, replication) cell, each evaluating all methods,
/// and aggregates per (scenario, method) in configuration order. Failed
/// cells are reported, not fatal.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let cells: Vec<(usize, usize)> = (0..cfg.scenarios.len())
        .flat_map(|s| (0..cfg.replications).map(move |r| (s, r)))
        .collect();
    let mut results: Vec<CellResult> = cells
        .par_iter()
        .flat_map_iter(|&(s, r)| run_cell(cfg, s, r))
        .collect();
    results.sort_by_key(|c| (c.scenario, c.method, c.replication));

    let mut rows = Vec::new();
    let mut points = Vec::new();
    let mut failures = Vec::new();
    for (si, scenario) in cfg.scenarios.iter().enumerate() {
        for (mi, method) in cfg.methods.iter().enumerate() {
            let (mut cov, mut len) = (Vec::new(), Vec::new());
            for c in results.iter_mut().filter(|c| c.scenario == si && c.method == mi) {
                match &c.outcome {
                    Ok((cv, l)) => {
                        cov.push(*cv);
                        len.push(*l);
                    }
                    Err(message) => failures.push(CellFailure {
                        scenario: scenario.label(),
                        method: method.label(),
                        replication: c.replication,
                        message: message.clone(),
                    }),
                }
                points.append(&mut c.points);
            }
            if cov.is_empty() {
                continue;
            }
            let (coverage, coverage_se) = mean_and_se(&cov);
            let (avg_len, len_se) = mean_and_se(&len);
            rows.push(MetricsRow {
                method: method.label(),
                scenario: scenario.label(),
                coverage,
                coverage_se,
                avg_len,
                len_se,
            });
        }
    }
    Ok(ExperimentReport { rows, points, failures })
}

/// Six significant digits, printed without an exponent.
pub fn sig6(v: f64) -> String {
    if !v.is_finite() {
        return v.to_string();
    }
    let rounded: f64 = format!("{v:.5e}").parse().expect("formatted float parses");
    rounded.to_string()
}

pub const METRICS_HEADER: [&str; 6] = ["method", "scenario", "coverage", "coverage_se", "avg_len", "len_se"];

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    Ok(csv::Writer::from_writer(file))
}

/// Writes the metrics table to `path`.
pub fn write_metrics(rows: &[MetricsRow], path: &Path) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::InvalidArgument("no metrics rows to write".into()));
    }
    let mut w = csv_writer(path)?;
    w.write_record(METRICS_HEADER)?;
    for r in rows {
        w.write_record([
            r.method.clone(),
            r.scenario.clone(),
            sig6(r.coverage),
            sig6(r.coverage_se),
            sig6(r.avg_len),
            sig6(r.len_se),
        ])?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut r = csv::Reader::from_reader(file);
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Writes `metrics.csv`, `points.csv` and, when any cell failed,
/// `failures.csv` into `dir`.
pub fn write_report(report: &ExperimentReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_metrics(&report.rows, &dir.join("metrics.csv"))?;

    let path = dir.join("points.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["scenario", "method", "index", "x1", "lo", "hi", "truth", "covered", "oracle_width"])?;
    for p in &report.points {
        let covered = p.lo <= p.truth && p.truth <= p.hi;
        w.write_record([
            p.scenario.clone(),
            p.method.clone(),
            p.index.to_string(),
            sig6(p.x1),
            sig6(p.lo),
            sig6(p.hi),
            sig6(p.truth),
            u8::from(covered).to_string(),
            sig6(p.oracle_width),
        ])?;
    }
    w.flush().map_err(io_err(&path))?;

    let path = dir.join("failures.csv");
    if report.failures.is_empty() {
        if path.exists() {
            fs::remove_file(&path).map_err(io_err(&path))?;
        }
        return Ok(());
    }
    let mut w = csv_writer(&path)?;
    w.write_record(["scenario", "method", "replication", "error"])?;
    for f in &report.failures {
        w.write_record([f.scenario.clone(), f.method.clone(), f.replication.to_string(), f.message.clone()])?;
    }
    w.flush().map_err(io_err(&path))?;
    Ok(())
}

/// Fixed-width text table of the metrics.
pub fn format_table(rows: &[MetricsRow]) -> String {
    let mut s = format!(
        "{:<24} {:<14} {:>18} {:>18}\n",
        "scenario", "method", "coverage (se)", "length (se)"
    );
    for r in rows {
        s.push_str(&format!(
            "{:<24} {:<14} {:>9.3} ({:.3}) {:>9.3} ({:.3})\n",
            r.scenario, r.method, r.coverage, r.coverage_se, r.avg_len, r.len_se
        ));
    }
    s
}
