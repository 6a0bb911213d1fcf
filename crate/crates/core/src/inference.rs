//! Imputation from the conditional latent mean and its uncertainty:
//! confidence intervals for continuous columns, probability lower bounds for
//! ordinal columns, and a per-entry reliability score.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::data::{ColumnKind, ObservedMatrix};
use crate::em::{initial_moments, row_constraints, CopulaParams};
use crate::error::{Error, Result};
use crate::marginals::{Marginal, MarginalModel, OrdinalMarginal};
use crate::normal;
use crate::truncnorm::{LatentRowMoments, RowSystem};

const ROW_CHUNK: usize = 64;

/// Confidence level used when none is given.
pub const DEFAULT_ALPHA: f64 = 0.05;

/// `E[z_M | x_O]` and the diagonal of `Cov[z_M | x_O]`, aligned with the
/// requested missing columns.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalMoments {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Conditional latent moments of the missing coordinates of one row.
///
/// `row_moments` holds `E[z_O | x_O]` and the diagonal of its covariance;
/// points (continuous data) have zero variance. A row with nothing observed
/// gets the prior moments `(0, σ² + ‖w_j‖²)`.
pub fn conditional_moments_row(
    params: &CopulaParams,
    observed: &[usize],
    missing: &[usize],
    row_moments: &LatentRowMoments,
) -> Result<ConditionalMoments> {
    if row_moments.len() != observed.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} latent moments for {} observed entries",
            row_moments.len(),
            observed.len()
        )));
    }
    let w = &params.w;
    if observed.is_empty() {
        let var = missing.iter().map(|&j| params.sigma2 + w.row(j).norm_squared()).collect();
        return Ok(ConditionalMoments { mean: vec![0.0; missing.len()], var });
    }
    let system = RowSystem::new(w, params.sigma2, observed)?;
    let u = system.project(&row_moments.mean);

    // Var z_j = σ² + w_jᵀ C w_j with C = σ² M⁻¹ + G diag(v) Gᵀ.
    let mut c = system.chol.inverse() * params.sigma2;
    if !row_moments.is_exact() {
        let mut gv = system.g.clone();
        for (mut col, &v) in gv.column_iter_mut().zip(&row_moments.var_diag) {
            col *= v;
        }
        c += &gv * system.g.transpose();
    }

    let mut mean = Vec::with_capacity(missing.len());
    let mut var = Vec::with_capacity(missing.len());
    for &j in missing {
        let wj: DVector<f64> = w.row(j).transpose();
        mean.push(wj.dot(&u));
        var.push(params.sigma2 + (&c * &wj).dot(&wj));
    }
    Ok(ConditionalMoments { mean, var })
}

/// Data-scale imputations `g_j(E[z_j | x_O])` for the missing columns.
pub fn impute_row(marginals: &MarginalModel, missing: &[usize], moments: &ConditionalMoments) -> Vec<f64> {
    missing.iter().zip(&moments.mean).map(|(&j, &m)| marginals.column(j).forward(m)).collect()
}

/// Two-sided `1 − α` interval `(g(m − z*√v), g(m + z*√v))`.
pub fn confidence_interval(marginal: &Marginal, latent_mean: f64, latent_var: f64, alpha: f64) -> Result<(f64, f64)> {
    check_alpha(alpha)?;
    if matches!(marginal, Marginal::Ordinal(_)) {
        return Err(Error::InvalidConfig("confidence intervals apply to continuous or linear columns".into()));
    }
    let half = normal::quantile(1.0 - alpha / 2.0) * latent_var.max(0.0).sqrt();
    Ok((marginal.forward(latent_mean - half), marginal.forward(latent_mean + half)))
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("alpha = {alpha} is outside (0, 1)")))
    }
}

/// Lower bound on `Pr(|x̂_j − x_j| ≤ d)` in level units, `1 − v / d_j²`,
/// where `d_j` is the latent distance from the mean to the nearest cut
/// bounding the `±d` band around the imputed code. Not clamped, so it can
/// be negative.
pub fn ordinal_prob_bound(marginal: &OrdinalMarginal, latent_mean: f64, latent_var: f64, imputed_code: usize, d: usize) -> f64 {
    let k = marginal.n_levels();
    let lower = marginal.cut(imputed_code.saturating_sub(1 + d));
    let upper = marginal.cut((imputed_code + d).min(k));
    let dist = (latent_mean - lower).abs().min((upper - latent_mean).abs());
    if dist == 0.0 {
        return if latent_var > 0.0 { f64::NEG_INFINITY } else { 1.0 };
    }
    1.0 - latent_var / (dist * dist)
}

/// Leave-one-out interval-length ratio for each continuous entry:
/// `‖D‖ over the other entries / ‖X̂‖ over the other entries`. `None` where
/// the denominator vanishes.
pub fn continuous_reliability(lengths: &[f64], imputed: &[f64]) -> Vec<Option<f64>> {
    let sd: f64 = lengths.iter().map(|d| d * d).sum();
    let sx: f64 = imputed.iter().map(|x| x * x).sum();
    lengths
        .iter()
        .zip(imputed)
        .map(|(d, x)| {
            let den = sx - x * x;
            if den > 0.0 {
                Some((sd - d * d).max(0.0).sqrt() / den.sqrt())
            } else {
                None
            }
        })
        .collect()
}

/// Indices of the `ceil(m% · N)` most reliable entries, most reliable first.
/// Larger scores are more reliable; undefined scores rank last; ties go to
/// the smaller `(row, col)`.
pub fn rank_by_reliability(scores: &[Option<f64>], positions: &[(usize, usize)], m_percent: f64) -> Result<Vec<usize>> {
    if scores.len() != positions.len() {
        return Err(Error::DimensionMismatch("one position per score required".into()));
    }
    if !(m_percent > 0.0 && m_percent <= 100.0) {
        return Err(Error::InvalidConfig(format!("m = {m_percent} is outside (0, 100]")));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        let by_score = match (scores[a], scores[b]) {
            (Some(x), Some(y)) => y.total_cmp(&x),
            (Some(_), None) => std::cmp::Ordering::Less,
            (None, Some(_)) => std::cmp::Ordering::Greater,
            (None, None) => std::cmp::Ordering::Equal,
        };
        by_score.then(positions[a].cmp(&positions[b]))
    });
    order.truncate(top_count(scores.len(), m_percent));
    Ok(order)
}

/// `ceil(m/100 · n)`, robust to products like `0.2 · 500` landing a hair
/// above an integer.
pub fn top_count(n: usize, m_percent: f64) -> usize {
    let raw = m_percent * n as f64 / 100.0;
    let count = (raw - 1e-9 * raw.max(1.0)).ceil().max(0.0) as usize;
    count.min(n)
}

/// High-probability bound on the mean squared imputation error of a row
/// with known parameters and `L`-Lipschitz marginals: the MSE exceeds the
/// returned value with probability at most `e^{−t}`.
pub fn mse_tail_bound(params: &CopulaParams, observed: &[usize], missing: &[usize], lipschitz: f64, t: f64) -> Result<f64> {
    if missing.is_empty() {
        return Err(Error::EmptySet);
    }
    let k = params.rank();
    let s2 = params.sigma2;
    let pick = |idx: &[usize]| DMatrix::from_fn(idx.len(), k, |r, c| params.w[(idx[r], c)]);
    let min_sv_obs = if observed.len() < k {
        0.0
    } else {
        pick(observed).singular_values().iter().copied().fold(f64::INFINITY, f64::min)
    };
    let max_sv_mis = pick(missing).singular_values().iter().copied().fold(0.0, f64::max);
    let denom = s2 + min_sv_obs * min_sv_obs;
    let first = (1.0 + (1.0 - s2) / denom).sqrt();
    let second = (2.0 * (1.0 + max_sv_mis * max_sv_mis / denom) * t / missing.len() as f64).sqrt();
    Ok(lipschitz * lipschitz * s2 * (first + second).powi(2))
}

/// Uncertainty attached to one imputed entry.
#[derive(Debug, Clone, PartialEq)]
pub struct MissingEntryUQ {
    pub row: usize,
    pub col: usize,
    pub latent_mean: f64,
    pub latent_var: f64,
    pub imputed: f64,
    /// Present for continuous and linear columns.
    pub interval: Option<(f64, f64)>,
    /// Present for ordinal columns.
    pub prob_bound: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ImputationResult {
    /// Completed `n x p` matrix: observed entries unchanged, missing entries
    /// imputed.
    pub completed: DMatrix<f64>,
    /// One record per missing entry, row-major.
    pub entries: Vec<MissingEntryUQ>,
    /// Reliability of each entry of `entries`; `None` where undefined.
    pub reliability: Vec<Option<f64>>,
    pub alpha: f64,
    pub kind: ColumnKind,
}

impl ImputationResult {
    pub fn positions(&self) -> Vec<(usize, usize)> {
        self.entries.iter().map(|e| (e.row, e.col)).collect()
    }

    /// Reliability scores, failing on the first undefined one.
    pub fn reliability_strict(&self) -> Result<Vec<f64>> {
        self.reliability
            .iter()
            .zip(&self.entries)
            .map(|(r, e)| r.ok_or(Error::UndefinedReliability { row: e.row, col: e.col }))
            .collect()
    }

    /// Indices into `entries` of the `m%` most reliable imputations.
    pub fn most_reliable(&self, m_percent: f64) -> Result<Vec<usize>> {
        rank_by_reliability(&self.reliability, &self.positions(), m_percent)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImputeConfig {
    pub alpha: f64,
    /// Jacobi sweeps used to settle ordinal latent moments when no moments
    /// from the fit are supplied.
    pub cold_start_sweeps: usize,
}

impl Default for ImputeConfig {
    fn default() -> Self {
        Self { alpha: DEFAULT_ALPHA, cold_start_sweeps: 50 }
    }
}

/// Imputes every missing entry of `data` with uncertainty and reliability.
///
/// `row_moments` are the latent moments left by the fit on the same data;
/// without them ordinal rows are re-estimated from scratch under `params`.
pub fn impute(
    data: &ObservedMatrix,
    marginals: &MarginalModel,
    params: &CopulaParams,
    row_moments: Option<&[LatentRowMoments]>,
    cfg: &ImputeConfig,
) -> Result<ImputationResult> {
    check_alpha(cfg.alpha)?;
    let (n, p) = (data.nrows(), data.ncols());
    if marginals.ncols() != p || params.ncols() != p {
        return Err(Error::DimensionMismatch(format!(
            "data has {p} columns, marginals {}, loadings {}",
            marginals.ncols(),
            params.ncols()
        )));
    }
    let rows = row_constraints(data, marginals)?;
    let moments: Vec<LatentRowMoments> = match row_moments {
        Some(m) => {
            if m.len() != n || m.iter().zip(&rows).any(|(m, r)| m.len() != r.observed.len()) {
                return Err(Error::DimensionMismatch("latent moments do not match the data".into()));
            }
            m.to_vec()
        }
        None => {
            let init = initial_moments(&rows)?;
            rows.par_iter()
                .zip(init.par_iter())
                .map(|(r, m)| {
                    if r.observed.is_empty() || m.is_exact() {
                        Ok(m.clone())
                    } else {
                        RowSystem::new(&params.w, params.sigma2, &r.observed)?.jacobi(&r.intervals, m, cfg.cold_start_sweeps)
                    }
                })
                .collect::<Result<Vec<_>>>()?
        }
    };

    let kind = marginals.kind();
    let z_star = normal::quantile(1.0 - cfg.alpha / 2.0);
    let row_ids: Vec<usize> = (0..n).collect();
    let chunks = row_ids
        .par_chunks(ROW_CHUNK)
        .map(|ids| {
            let mut out = Vec::new();
            for &i in ids {
                let missing = data.missing_in_row(i);
                if missing.is_empty() {
                    continue;
                }
                let cm = conditional_moments_row(params, &rows[i].observed, &missing, &moments[i])?;
                for (idx, &j) in missing.iter().enumerate() {
                    let (m, v) = (cm.mean[idx], cm.var[idx]);
                    let marginal = marginals.column(j);
                    let imputed = marginal.forward(m);
                    let (interval, prob_bound) = match marginal {
                        Marginal::Ordinal(om) => (None, Some(ordinal_prob_bound(om, m, v, om.g_forward_code(m), 0))),
                        _ => {
                            let half = z_star * v.sqrt();
                            (Some((marginal.forward(m - half), marginal.forward(m + half))), None)
                        }
                    };
                    out.push(MissingEntryUQ { row: i, col: j, latent_mean: m, latent_var: v, imputed, interval, prob_bound });
                }
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    let entries: Vec<MissingEntryUQ> = chunks.into_iter().flatten().collect();

    let mut completed = DMatrix::from_fn(n, p, |i, j| data.get(i, j).unwrap_or(f64::NAN));
    for e in &entries {
        completed[(e.row, e.col)] = e.imputed;
    }

    let reliability = match kind {
        ColumnKind::Ordinal => entries.iter().map(|e| e.prob_bound).collect(),
        _ => {
            let lengths: Vec<f64> = entries.iter().map(|e| e.interval.map_or(0.0, |(lo, hi)| hi - lo)).collect();
            let imputed: Vec<f64> = entries.iter().map(|e| e.imputed).collect();
            continuous_reliability(&lengths, &imputed)
        }
    };

    Ok(ImputationResult { completed, entries, reliability, alpha: cfg.alpha, kind })
}
