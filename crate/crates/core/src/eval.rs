//! Imputation metrics and the experiment drivers for the synthetic
//! benchmarks.

use std::io::Write;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ColumnKind, ObservedMatrix};
use crate::em::{fit, EmConfig};
use crate::error::{Error, Result};
use crate::inference::{impute, rank_by_reliability, top_count, ImputationResult, ImputeConfig, DEFAULT_ALPHA};
use crate::marginals::MarginalModel;
use crate::synth::{derive_seed, simulate, SynthSpec};

/// `‖P(X − X̂)‖_F / ‖P(X)‖_F` over `entries`.
pub fn nrmse(truth: &DMatrix<f64>, imputed: &DMatrix<f64>, entries: &[(usize, usize)]) -> Result<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for &(i, j) in entries {
        let x = truth[(i, j)];
        num += (x - imputed[(i, j)]).powi(2);
        den += x * x;
    }
    if den == 0.0 {
        return Err(Error::ZeroDenominator);
    }
    Ok((num / den).sqrt())
}

/// Mean absolute error over `entries`.
pub fn mae(truth: &DMatrix<f64>, imputed: &DMatrix<f64>, entries: &[(usize, usize)]) -> Result<f64> {
    if entries.is_empty() {
        return Err(Error::EmptySet);
    }
    let total: f64 = entries.iter().map(|&(i, j)| (truth[(i, j)] - imputed[(i, j)]).abs()).sum();
    Ok(total / entries.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Nrmse,
    Mae,
}

impl Metric {
    /// MAE for ordinal data, NRMSE otherwise.
    pub fn for_kind(kind: ColumnKind) -> Self {
        match kind {
            ColumnKind::Ordinal => Metric::Mae,
            _ => Metric::Nrmse,
        }
    }

    pub fn eval(self, truth: &DMatrix<f64>, imputed: &DMatrix<f64>, entries: &[(usize, usize)]) -> Result<f64> {
        match self {
            Metric::Nrmse => nrmse(truth, imputed, entries),
            Metric::Mae => mae(truth, imputed, entries),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Metric::Nrmse => "nrmse",
            Metric::Mae => "mae",
        }
    }
}

/// `5, 10, ..., 100`.
pub fn default_grid() -> Vec<f64> {
    (1..=20).map(|i| 5.0 * i as f64).collect()
}

/// Error over the `m%` most reliable imputations, for each `m` in `grid`.
pub fn error_vs_reliability_curve(result: &ImputationResult, truth: &DMatrix<f64>, grid: &[f64], metric: Metric) -> Result<Vec<(f64, f64)>> {
    let positions = result.positions();
    let full = rank_by_reliability(&result.reliability, &positions, 100.0)?;
    grid.iter()
        .map(|&m| {
            if !(m > 0.0 && m <= 100.0) {
                return Err(Error::InvalidConfig(format!("m = {m} is outside (0, 100]")));
            }
            let count = top_count(positions.len(), m);
            let subset: Vec<(usize, usize)> = full[..count].iter().map(|&e| positions[e]).collect();
            Ok((m, metric.eval(truth, &result.completed, &subset)?))
        })
        .collect()
}

/// Fraction of interval-carrying entries whose true value lies in
/// `[lo, hi]`, and the mean interval length.
pub fn coverage_and_length(result: &ImputationResult, truth: &DMatrix<f64>) -> Result<(f64, f64)> {
    let mut hits = 0usize;
    let mut length = 0.0;
    let mut count = 0usize;
    for e in &result.entries {
        if let Some((lo, hi)) = e.interval {
            let x = truth[(e.row, e.col)];
            if lo <= x && x <= hi {
                hits += 1;
            }
            length += hi - lo;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::EmptySet);
    }
    Ok((hits as f64 / count as f64, length / count as f64))
}

/// Anything that fills in the missing entries of a matrix.
pub trait Imputer: Sync {
    /// Completed matrix; must be deterministic in `seed`.
    fn impute(&self, data: &ObservedMatrix, seed: u64) -> Result<DMatrix<f64>>;
}

/// Fit-then-impute with the copula model.
#[derive(Debug, Clone, PartialEq)]
pub struct CopulaImputer {
    pub kind: ColumnKind,
    pub em: EmConfig,
    pub alpha: f64,
}

impl CopulaImputer {
    pub fn new(kind: ColumnKind, rank: usize) -> Self {
        Self { kind, em: EmConfig::new(rank), alpha: DEFAULT_ALPHA }
    }

    /// Full result including uncertainty.
    pub fn run(&self, data: &ObservedMatrix, seed: u64) -> Result<ImputationResult> {
        let marginals = MarginalModel::fit(data, self.kind)?;
        let em = self.em.clone().with_seed(seed);
        let fitted = fit(data, &marginals, &em)?;
        let cfg = ImputeConfig { alpha: self.alpha, ..ImputeConfig::default() };
        impute(data, &marginals, &fitted.params, Some(&fitted.row_moments), &cfg)
    }
}

impl Imputer for CopulaImputer {
    fn impute(&self, data: &ObservedMatrix, seed: u64) -> Result<DMatrix<f64>> {
        Ok(self.run(data, seed)?.completed)
    }
}

/// Variance of each missing entry's imputation across `folds` refits, each
/// with one fold of the observed entries additionally hidden. Scores follow
/// `data.missing_entries()`; smaller means more reliable.
pub fn kfold_reliability(data: &ObservedMatrix, imputer: &dyn Imputer, folds: usize, seed: u64) -> Result<Vec<f64>> {
    if folds < 2 {
        return Err(Error::InvalidConfig(format!("{folds} fold(s); need at least 2")));
    }
    let mut observed = data.observed_entries();
    if observed.len() < folds {
        return Err(Error::InvalidConfig(format!("{} observed entries for {folds} folds", observed.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    observed.shuffle(&mut rng);
    let missing = data.missing_entries();
    let runs = (0..folds)
        .into_par_iter()
        .map(|f| {
            let hidden: Vec<(usize, usize)> = observed.iter().skip(f).step_by(folds).copied().collect();
            let completed = imputer.impute(&data.with_masked(&hidden), seed)?;
            Ok(missing.iter().map(|&(i, j)| completed[(i, j)]).collect::<Vec<f64>>())
        })
        .collect::<Result<Vec<_>>>()?;
    let nf = folds as f64;
    Ok((0..missing.len())
        .map(|e| {
            let mean = runs.iter().map(|r| r[e]).sum::<f64>() / nf;
            runs.iter().map(|r| (r[e] - mean).powi(2)).sum::<f64>() / nf
        })
        .collect())
}

/// A metric over replicates with its mean and standard error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub metric: String,
    pub values: Vec<f64>,
    pub mean: f64,
    pub std_error: f64,
    pub settings: Vec<(String, String)>,
}

impl ExperimentReport {
    pub fn new(metric: impl Into<String>, values: Vec<f64>, settings: Vec<(String, String)>) -> Result<Self> {
        let n = values.len();
        if n < 2 {
            return Err(Error::InvalidConfig(format!("{n} replicate(s); need at least 2 for a standard error")));
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        if !mean.is_finite() {
            return Err(Error::InvalidConfig(format!("non-finite mean over {n} replicates")));
        }
        Ok(Self { metric: metric.into(), values, mean, std_error: (var / n as f64).sqrt(), settings })
    }

    /// `metric,replicate,value` rows, then `mean` and `std_error` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["metric", "replicate", "value"])?;
        for (r, v) in self.values.iter().enumerate() {
            w.write_record([self.metric.as_str(), &r.to_string(), &v.to_string()])?;
        }
        w.write_record([self.metric.as_str(), "mean", &self.mean.to_string()])?;
        w.write_record([self.metric.as_str(), "std_error", &self.std_error.to_string()])?;
        w.flush()?;
        Ok(())
    }
}

/// PPCA is the copula model with affine marginals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Lrgc,
    Ppca,
}

impl Method {
    pub fn column_kind(self, data_kind: ColumnKind) -> ColumnKind {
        match self {
            Method::Lrgc => data_kind,
            Method::Ppca => ColumnKind::Linear,
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lrgc" => Ok(Method::Lrgc),
            "ppca" => Ok(Method::Ppca),
            other => Err(Error::InvalidConfig(format!("unknown method '{other}'"))),
        }
    }
}

/// Settings shared by every replicate of an experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub protocol: String,
    pub method: Method,
    /// Defaults to the protocol's generating rank.
    pub rank: Option<usize>,
    pub reps: usize,
    pub seed: u64,
    pub alpha: f64,
    pub grid: Vec<f64>,
    pub max_iter: usize,
    pub rel_tol: f64,
}

impl ExperimentConfig {
    pub fn new(protocol: &str, method: Method, reps: usize, seed: u64) -> Self {
        let em = EmConfig::new(1);
        Self {
            protocol: protocol.into(),
            method,
            rank: None,
            reps,
            seed,
            alpha: DEFAULT_ALPHA,
            grid: default_grid(),
            max_iter: em.max_iter,
            rel_tol: em.rel_tol,
        }
    }

    fn settings(&self, rank: usize) -> Vec<(String, String)> {
        vec![
            ("protocol".into(), self.protocol.clone()),
            ("method".into(), format!("{:?}", self.method).to_lowercase()),
            ("rank".into(), rank.to_string()),
            ("reps".into(), self.reps.to_string()),
            ("seed".into(), self.seed.to_string()),
            ("alpha".into(), self.alpha.to_string()),
        ]
    }
}

/// Everything measured on one replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateOutcome {
    pub replicate: usize,
    pub metric: Metric,
    pub error: f64,
    /// Present when the imputations carry intervals.
    pub coverage: Option<(f64, f64)>,
    pub curve: Vec<(f64, f64)>,
    pub iterations: usize,
}

/// Runs replicate `r` from simulation through scoring.
pub fn run_replicate(cfg: &ExperimentConfig, r: usize) -> Result<ReplicateOutcome> {
    let spec = SynthSpec::protocol(&cfg.protocol, derive_seed(cfg.seed, r as u64))?;
    let (synth, observed) = simulate(&spec)?;
    let kind = cfg.method.column_kind(spec.kind.column_kind());
    let rank = cfg.rank.unwrap_or(spec.k);
    let marginals = MarginalModel::fit(&observed, kind)?;
    let em = EmConfig::new(rank).with_seed(derive_seed(spec.seed, 2)).with_max_iter(cfg.max_iter).with_rel_tol(cfg.rel_tol);
    let fitted = fit(&observed, &marginals, &em)?;
    let icfg = ImputeConfig { alpha: cfg.alpha, ..ImputeConfig::default() };
    let result = impute(&observed, &marginals, &fitted.params, Some(&fitted.row_moments), &icfg)?;

    let metric = Metric::for_kind(spec.kind.column_kind());
    let positions = result.positions();
    let error = metric.eval(&synth.complete, &result.completed, &positions)?;
    let coverage = if kind.has_interval() { Some(coverage_and_length(&result, &synth.complete)?) } else { None };
    let curve = error_vs_reliability_curve(&result, &synth.complete, &cfg.grid, metric)?;
    Ok(ReplicateOutcome { replicate: r, metric, error, coverage, curve, iterations: fitted.diagnostics.iterations.len() })
}

/// All replicates, in replicate order.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ReplicateOutcome>> {
    (0..cfg.reps).into_par_iter().map(|r| run_replicate(cfg, r)).collect()
}

fn rank_of(cfg: &ExperimentConfig) -> Result<usize> {
    Ok(cfg.rank.unwrap_or(SynthSpec::protocol(&cfg.protocol, 0)?.k))
}

/// Imputation error over replicates.
pub fn error_report(cfg: &ExperimentConfig, outcomes: &[ReplicateOutcome]) -> Result<ExperimentReport> {
    let metric = outcomes.first().map_or("error", |o| o.metric.name());
    ExperimentReport::new(metric, outcomes.iter().map(|o| o.error).collect(), cfg.settings(rank_of(cfg)?))
}

/// Interval coverage and mean length over replicates.
pub fn interval_reports(cfg: &ExperimentConfig, outcomes: &[ReplicateOutcome]) -> Result<(ExperimentReport, ExperimentReport)> {
    let pairs: Vec<(f64, f64)> = outcomes
        .iter()
        .map(|o| o.coverage.ok_or_else(|| Error::InvalidConfig("protocol has no confidence intervals".into())))
        .collect::<Result<_>>()?;
    let settings = cfg.settings(rank_of(cfg)?);
    Ok((
        ExperimentReport::new("coverage", pairs.iter().map(|p| p.0).collect(), settings.clone())?,
        ExperimentReport::new("length", pairs.iter().map(|p| p.1).collect(), settings)?,
    ))
}

/// Mean and standard error of the error-vs-reliability curve at each grid
/// point.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveReport {
    pub metric: Metric,
    pub points: Vec<ExperimentReport>,
    pub grid: Vec<f64>,
}

impl CurveReport {
    /// `m,mean,std_error` rows, one per grid point.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["m", self.metric.name(), "std_error"])?;
        for (m, p) in self.grid.iter().zip(&self.points) {
            w.write_record([m.to_string(), p.mean.to_string(), p.std_error.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn curve_report(cfg: &ExperimentConfig, outcomes: &[ReplicateOutcome]) -> Result<CurveReport> {
    let metric = outcomes.first().map(|o| o.metric).ok_or(Error::EmptySet)?;
    let settings = cfg.settings(rank_of(cfg)?);
    let points = (0..cfg.grid.len())
        .map(|g| {
            let name = format!("{}@{}", metric.name(), cfg.grid[g]);
            ExperimentReport::new(name, outcomes.iter().map(|o| o.curve[g].1).collect(), settings.clone())
        })
        .collect::<Result<_>>()?;
    Ok(CurveReport { metric, points, grid: cfg.grid.clone() })
}

pub fn run_error(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    error_report(cfg, &run_experiment(cfg)?)
}

pub fn run_intervals(cfg: &ExperimentConfig) -> Result<(ExperimentReport, ExperimentReport)> {
    interval_reports(cfg, &run_experiment(cfg)?)
}

pub fn run_curve(cfg: &ExperimentConfig) -> Result<CurveReport> {
    curve_report(cfg, &run_experiment(cfg)?)
}
