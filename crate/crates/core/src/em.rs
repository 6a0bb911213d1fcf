//! Approximate EM fitting of the copula correlation parameters `(W, σ²)`.
//!
//! Each iteration runs the E-step row by row, refreshing ordinal latent
//! moments with a Jacobi sweep while accumulating per-column sufficient
//! statistics. The least-squares M-step result is then rescaled back onto the
//! unit-diagonal constraint set. Per-iteration cost
//! is `O(|Ω|k² + nk³ + pk³)`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::ObservedMatrix;
use crate::error::{Error, Result};
use crate::marginals::{LatentInterval, MarginalModel};
use crate::truncnorm::{LatentRowMoments, RowSystem};

/// Tolerance of the unit-diagonal check on loaded or constructed parameters.
pub const UNIT_DIAGONAL_TOL: f64 = 1e-8;

/// Rows per parallel work unit. Statistics are merged in chunk order, so the
/// result does not depend on the number of threads.
const ROW_CHUNK: usize = 64;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Loading matrix `W` (`p x k`) and noise variance `σ²`, with
/// `‖w_j‖² + σ² = 1` for every row.
#[derive(Debug, Clone, PartialEq)]
pub struct CopulaParams {
    pub w: DMatrix<f64>,
    pub sigma2: f64,
}

impl CopulaParams {
    /// Validates the unit-diagonal and noise-range invariants.
    pub fn new(w: DMatrix<f64>, sigma2: f64) -> Result<Self> {
        let params = Self { w, sigma2 };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma2 > 0.0 && self.sigma2 < 1.0) {
            return Err(Error::Schema(format!("sigma2 = {} is outside (0, 1)", self.sigma2)));
        }
        let dev = self.max_diagonal_deviation();
        if !(dev <= UNIT_DIAGONAL_TOL) {
            return Err(Error::Schema(format!("W Wᵀ + σ²I deviates from unit diagonal by {dev:e}")));
        }
        Ok(())
    }

    /// `max_j |‖w_j‖² + σ² − 1|`.
    pub fn max_diagonal_deviation(&self) -> f64 {
        self.w
            .row_iter()
            .map(|r| (r.norm_squared() + self.sigma2 - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub fn ncols(&self) -> usize {
        self.w.nrows()
    }

    pub fn rank(&self) -> usize {
        self.w.ncols()
    }
}

/// EM settings. Rank is the only modelling choice; the rest control the loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    pub rank: usize,
    pub max_iter: usize,
    /// Stop once `‖W_t − W_{t−1}‖²_F / ‖W_{t−1}‖²_F` falls below this.
    pub rel_tol: f64,
    /// Jacobi sweeps per E-step for ordinal rows.
    pub jacobi_sweeps: usize,
    pub seed: u64,
}

impl EmConfig {
    pub fn new(rank: usize) -> Self {
        Self { rank, max_iter: 50, rel_tol: 1e-3, jacobi_sweeps: 1, seed: 0 }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    pub fn with_rel_tol(mut self, rel_tol: f64) -> Self {
        self.rel_tol = rel_tol;
        self
    }

    pub fn with_jacobi_sweeps(mut self, sweeps: usize) -> Self {
        self.jacobi_sweeps = sweeps;
        self
    }

    pub fn validate(&self, ncols: usize) -> Result<()> {
        if self.rank < 1 || self.rank >= ncols {
            return Err(Error::BadRank { rank: self.rank, ncols });
        }
        if self.max_iter < 1 {
            return Err(Error::InvalidConfig("max_iter must be at least 1".into()));
        }
        if !(self.rel_tol > 0.0) {
            return Err(Error::InvalidConfig("rel_tol must be positive".into()));
        }
        if self.jacobi_sweeps < 1 {
            return Err(Error::InvalidConfig("jacobi_sweeps must be at least 1".into()));
        }
        Ok(())
    }
}

/// Random feasible starting point: spherically symmetric rows scaled to
/// `‖w_j‖² = 1 − σ₀²` with `σ₀² = 0.5`.
pub fn init_params(p: usize, k: usize, seed: u64) -> Result<CopulaParams> {
    if k < 1 || k >= p {
        return Err(Error::BadRank { rank: k, ncols: p });
    }
    let sigma2: f64 = 0.5;
    let target = (1.0 - sigma2).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = DMatrix::zeros(p, k);
    for j in 0..p {
        loop {
            let row: Vec<f64> = (0..k).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                for (c, x) in row.iter().enumerate() {
                    w[(j, c)] = x / norm * target;
                }
                break;
            }
        }
    }
    Ok(CopulaParams { w, sigma2 })
}

/// Conditional expectations contributed by one row.
#[derive(Debug, Clone)]
pub struct RowEStep {
    pub moments: LatentRowMoments,
    /// `E[t]`, length `k`.
    pub e_t: DVector<f64>,
    /// `E[t z_Oᵀ]`, `k x |O|`.
    pub e_tz: DMatrix<f64>,
    /// `E[t tᵀ]`, `k x k`.
    pub e_tt: DMatrix<f64>,
    /// `E[z_Oᵀ z_O]`.
    pub e_zz: f64,
}

/// E-step for one row with at least one observation.
///
/// Ordinal rows first refresh their latent moments with `sweeps` Jacobi
/// sweeps from `prev`; rows whose constraints are all points use them as is.
pub fn e_step_row(
    observed: &[usize],
    intervals: &[LatentInterval],
    params: &CopulaParams,
    prev: &LatentRowMoments,
    sweeps: usize,
) -> Result<RowEStep> {
    let system = RowSystem::new(&params.w, params.sigma2, observed)?;
    let moments = system.jacobi(intervals, prev, sweeps)?;
    Ok(row_expectations(&system, moments))
}

fn row_expectations(system: &RowSystem, moments: LatentRowMoments) -> RowEStep {
    let k = system.rank();
    let e_t = system.project(&moments.mean);
    let z = DVector::from_column_slice(&moments.mean);
    let mut e_tz = &e_t * z.transpose();
    let mut e_tt = system.chol.inverse() * system.sigma2;
    e_tt += &e_t * e_t.transpose();
    if !moments.is_exact() {
        // G diag(v) and G diag(v) Gᵀ
        let mut gv = system.g.clone();
        for (mut col, &v) in gv.column_iter_mut().zip(&moments.var_diag) {
            col *= v;
        }
        e_tz += &gv;
        e_tt += &gv * system.g.transpose();
    }
    debug_assert_eq!(e_tt.nrows(), k);
    let e_zz = moments.mean.iter().map(|x| x * x).sum::<f64>() + moments.var_diag.iter().sum::<f64>();
    RowEStep { moments, e_t, e_tz, e_tt, e_zz }
}

/// Per-column sums `A_j = Σ E[z_ij t_i]` and `B_j = Σ E[t_i t_iᵀ]` over the
/// rows observing column `j`, plus the totals needed for `σ²`.
#[derive(Debug, Clone, PartialEq)]
pub struct SufficientStats {
    p: usize,
    k: usize,
    a: Vec<f64>,
    b: Vec<f64>,
    col_count: Vec<usize>,
    pub e_zz: f64,
    pub n_obs: usize,
}

impl SufficientStats {
    pub fn zeros(p: usize, k: usize) -> Self {
        Self { p, k, a: vec![0.0; p * k], b: vec![0.0; p * k * k], col_count: vec![0; p], e_zz: 0.0, n_obs: 0 }
    }

    pub fn accumulate(&mut self, observed: &[usize], row: &RowEStep) {
        let k = self.k;
        for (jj, &j) in observed.iter().enumerate() {
            let a = &mut self.a[j * k..(j + 1) * k];
            for (dst, src) in a.iter_mut().zip(row.e_tz.column(jj).iter()) {
                *dst += src;
            }
            let b = &mut self.b[j * k * k..(j + 1) * k * k];
            for (dst, src) in b.iter_mut().zip(row.e_tt.iter()) {
                *dst += src;
            }
            self.col_count[j] += 1;
        }
        self.e_zz += row.e_zz;
        self.n_obs += observed.len();
    }

    pub fn merge(&mut self, other: &SufficientStats) {
        for (d, s) in self.a.iter_mut().zip(&other.a) {
            *d += s;
        }
        for (d, s) in self.b.iter_mut().zip(&other.b) {
            *d += s;
        }
        for (d, s) in self.col_count.iter_mut().zip(&other.col_count) {
            *d += s;
        }
        self.e_zz += other.e_zz;
        self.n_obs += other.n_obs;
    }

    /// Builds statistics directly from per-column sums, mostly for testing.
    pub fn from_parts(a: Vec<DVector<f64>>, b: Vec<DMatrix<f64>>, col_count: Vec<usize>, e_zz: f64, n_obs: usize) -> Result<Self> {
        let p = a.len();
        let k = a.first().map_or(0, |v| v.len());
        if b.len() != p || col_count.len() != p {
            return Err(Error::DimensionMismatch("A, B and counts must have one entry per column".into()));
        }
        let mut stats = Self::zeros(p, k);
        for j in 0..p {
            stats.a[j * k..(j + 1) * k].copy_from_slice(a[j].as_slice());
            stats.b[j * k * k..(j + 1) * k * k].copy_from_slice(b[j].as_slice());
        }
        stats.col_count = col_count;
        stats.e_zz = e_zz;
        stats.n_obs = n_obs;
        Ok(stats)
    }

    pub fn a(&self, j: usize) -> DVector<f64> {
        DVector::from_column_slice(&self.a[j * self.k..(j + 1) * self.k])
    }

    pub fn b(&self, j: usize) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.k, self.k, &self.b[j * self.k * self.k..(j + 1) * self.k * self.k])
    }
}

/// M-step output before the unit-diagonal rescale.
#[derive(Debug, Clone, PartialEq)]
pub struct UnconstrainedParams {
    pub w: DMatrix<f64>,
    pub sigma2: f64,
}

/// Closed-form maximizer of the expected joint log-likelihood:
/// `ŵ_jᵀ = A_jᵀ B_j⁻¹` and the mean expected squared residual for `σ²`.
pub fn m_step(stats: &SufficientStats) -> Result<UnconstrainedParams> {
    let (p, k) = (stats.p, stats.k);
    if stats.n_obs == 0 {
        return Err(Error::NoObservations);
    }
    let mut w = DMatrix::zeros(p, k);
    let mut cross = 0.0;
    let mut quad = 0.0;
    for j in 0..p {
        if stats.col_count[j] == 0 {
            return Err(Error::EmptyColumn { column: j });
        }
        let a = stats.a(j);
        let b = stats.b(j);
        let wj = b.clone().cholesky().ok_or(Error::SingularSystem)?.solve(&a);
        cross += wj.dot(&a);
        quad += (b * &wj).dot(&wj);
        w.set_row(j, &wj.transpose());
    }
    let residual = stats.e_zz - 2.0 * cross + quad;
    // An exactly noiseless fit would give zero; keep σ² strictly positive.
    let sigma2 = (residual / stats.n_obs as f64).max(1e-12);
    Ok(UnconstrainedParams { w, sigma2 })
}

/// Maps an unconstrained maximizer onto the unit-diagonal set:
/// `σ²_new = mean_j σ̂² / (‖ŵ_j‖² + σ̂²)`, rows rescaled to `‖w_j‖² = 1 − σ²_new`.
pub fn rescale(unconstrained: &UnconstrainedParams) -> Result<CopulaParams> {
    let s2 = unconstrained.sigma2;
    let p = unconstrained.w.nrows();
    let mut norms = Vec::with_capacity(p);
    for (j, row) in unconstrained.w.row_iter().enumerate() {
        let n2 = row.norm_squared();
        if !(n2 > 0.0) {
            return Err(Error::ZeroRow { row: j });
        }
        norms.push(n2);
    }
    let sigma2 = norms.iter().map(|n2| s2 / (n2 + s2)).sum::<f64>() / p as f64;
    let target = (1.0 - sigma2).sqrt();
    let mut w = unconstrained.w.clone();
    for (mut row, n2) in w.row_iter_mut().zip(&norms) {
        row *= target / n2.sqrt();
    }
    Ok(CopulaParams { w, sigma2 })
}

/// Exact Gaussian log-likelihood of latent rows observed at known points,
/// under the (not necessarily unit-diagonal) model `N(0, W Wᵀ + σ²I)`.
pub fn log_likelihood_points(w: &DMatrix<f64>, sigma2: f64, rows: &[(Vec<usize>, Vec<f64>)]) -> Result<f64> {
    let k = w.ncols();
    let parts = rows
        .par_chunks(ROW_CHUNK)
        .map(|chunk| {
            let mut total = 0.0;
            for (observed, z) in chunk {
                if observed.is_empty() {
                    continue;
                }
                let system = RowSystem::new(w, sigma2, observed)?;
                let m = observed.len() as f64;
                let log_det_m: f64 = 2.0 * system.chol.l_dirty().diagonal().iter().take(k).map(|d| d.ln()).sum::<f64>();
                let log_det = (m - k as f64) * sigma2.ln() + log_det_m;
                let zv = DVector::from_column_slice(z);
                let wtz = system.w_obs.tr_mul(&zv);
                let u = system.chol.solve(&wtz);
                let quad = (zv.norm_squared() - wtz.dot(&u)) / sigma2;
                total += -0.5 * (m * LN_2PI + log_det + quad);
            }
            Ok(total)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(parts.into_iter().sum())
}

/// Per-iteration fit record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub rel_change: f64,
    pub sigma2: f64,
    /// Observed log-likelihood at the parameters entering the iteration
    /// (continuous and linear data only).
    pub loglik: Option<f64>,
    /// Observed log-likelihood after the M-step, before rescaling.
    pub loglik_unconstrained: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub iterations: Vec<IterationRecord>,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: CopulaParams,
    /// Latent moments of every row from the last E-step; empty for rows with
    /// no observations.
    pub row_moments: Vec<LatentRowMoments>,
    pub diagnostics: FitDiagnostics,
}

/// Observed indices and latent constraints of one row.
#[derive(Debug, Clone)]
pub(crate) struct RowConstraints {
    pub observed: Vec<usize>,
    pub intervals: Vec<LatentInterval>,
}

pub(crate) fn row_constraints(data: &ObservedMatrix, marginals: &MarginalModel) -> Result<Vec<RowConstraints>> {
    (0..data.nrows())
        .map(|i| {
            let observed = data.observed_in_row(i);
            let intervals = marginals.row_intervals(data, i, &observed)?;
            Ok(RowConstraints { observed, intervals })
        })
        .collect()
}

pub(crate) fn initial_moments(rows: &[RowConstraints]) -> Result<Vec<LatentRowMoments>> {
    rows.iter().map(|r| LatentRowMoments::initial(&r.intervals)).collect()
}

/// Fits `(W, σ²)` to `data` given already fitted marginals.
pub fn fit(data: &ObservedMatrix, marginals: &MarginalModel, cfg: &EmConfig) -> Result<FitResult> {
    let (n, p) = (data.nrows(), data.ncols());
    cfg.validate(p)?;
    if marginals.ncols() != p {
        return Err(Error::DimensionMismatch(format!("{} marginals for {p} columns", marginals.ncols())));
    }
    data.check_columns_nonempty()?;
    let k = cfg.rank;

    let rows = row_constraints(data, marginals)?;
    let mut moments = initial_moments(&rows)?;
    let all_points = rows.iter().all(|r| r.intervals.iter().all(LatentInterval::is_point));
    let points: Vec<(Vec<usize>, Vec<f64>)> = if all_points {
        rows.iter().map(|r| (r.observed.clone(), r.intervals.iter().map(|iv| iv.lower).collect())).collect()
    } else {
        Vec::new()
    };

    let mut params = init_params(p, k, cfg.seed)?;
    let mut diagnostics = FitDiagnostics::default();
    debug_assert_eq!(moments.len(), n);

    for iteration in 1..=cfg.max_iter {
        let chunk_stats = rows
            .par_chunks(ROW_CHUNK)
            .zip(moments.par_chunks_mut(ROW_CHUNK))
            .map(|(row_chunk, moment_chunk)| {
                let mut stats = SufficientStats::zeros(p, k);
                for (row, mom) in row_chunk.iter().zip(moment_chunk.iter_mut()) {
                    if row.observed.is_empty() {
                        continue;
                    }
                    let estep = e_step_row(&row.observed, &row.intervals, &params, mom, cfg.jacobi_sweeps)?;
                    stats.accumulate(&row.observed, &estep);
                    *mom = estep.moments;
                }
                Ok(stats)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut stats = SufficientStats::zeros(p, k);
        for s in &chunk_stats {
            stats.merge(s);
        }

        let unconstrained = m_step(&stats)?;
        let (loglik, loglik_unconstrained) = if all_points {
            (
                Some(log_likelihood_points(&params.w, params.sigma2, &points)?),
                Some(log_likelihood_points(&unconstrained.w, unconstrained.sigma2, &points)?),
            )
        } else {
            (None, None)
        };
        let next = rescale(&unconstrained)?;
        let rel_change = (&next.w - &params.w).norm_squared() / params.w.norm_squared();
        diagnostics.iterations.push(IterationRecord {
            iteration,
            rel_change,
            sigma2: next.sigma2,
            loglik,
            loglik_unconstrained,
        });
        params = next;
        if rel_change < cfg.rel_tol {
            diagnostics.converged = true;
            break;
        }
    }

    Ok(FitResult { params, row_moments: moments, diagnostics })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ColumnKind;
    use approx::assert_abs_diff_eq;

    #[test]
    fn init_params_is_feasible_and_deterministic() {
        let a = init_params(4, 2, 7).unwrap();
        assert_eq!(a.sigma2, 0.5);
        for row in a.w.row_iter() {
            assert_abs_diff_eq!(row.norm_squared(), 0.5, epsilon = 1e-14);
        }
        let b = init_params(4, 2, 7).unwrap();
        assert_eq!(a, b);
        assert!(matches!(init_params(2, 2, 7), Err(Error::BadRank { .. })));
        assert!(matches!(init_params(3, 0, 7), Err(Error::BadRank { .. })));
    }

    #[test]
    fn e_step_continuous_example() {
        let params = CopulaParams { w: DMatrix::from_row_slice(2, 1, &[0.6, 0.6]), sigma2: 0.64 };
        let intervals = [LatentInterval::point(1.0), LatentInterval::point(-1.0)];
        let prev = LatentRowMoments::initial(&intervals).unwrap();
        let row = e_step_row(&[0, 1], &intervals, &params, &prev, 1).unwrap();
        assert_abs_diff_eq!(row.e_t[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(row.e_tt[(0, 0)], 0.64 / 1.36, epsilon = 1e-14);
        assert_abs_diff_eq!(row.e_zz, 2.0, epsilon = 1e-15);
    }

    #[test]
    fn e_step_ordinal_zero_loadings() {
        let params = CopulaParams { w: DMatrix::zeros(3, 2), sigma2: 0.9 };
        let intervals = [LatentInterval::new(0.0, f64::INFINITY), LatentInterval::new(f64::NEG_INFINITY, 0.3), LatentInterval::new(-1.0, 1.0)];
        let prev = LatentRowMoments::initial(&intervals).unwrap();
        let row = e_step_row(&[0, 1, 2], &intervals, &params, &prev, 1).unwrap();
        assert!(row.e_t.iter().all(|v| v.abs() < 1e-15));
        assert_abs_diff_eq!(row.e_tt, DMatrix::identity(2, 2), epsilon = 1e-14);
    }

    #[test]
    fn m_step_scalar() {
        let stats = SufficientStats::from_parts(
            vec![DVector::from_element(1, 2.0)],
            vec![DMatrix::from_element(1, 1, 4.0)],
            vec![1],
            1.0,
            1,
        )
        .unwrap();
        let un = m_step(&stats).unwrap();
        assert_abs_diff_eq!(un.w[(0, 0)], 0.5, epsilon = 1e-15);
        // residual = 1 - 2·0.5·2 + 0.25·4 = 0
        assert!(un.sigma2 > 0.0 && un.sigma2 < 1e-10);
    }

    #[test]
    fn m_step_zero_loading_residual() {
        let stats = SufficientStats::from_parts(
            vec![DVector::zeros(2), DVector::zeros(2)],
            vec![DMatrix::identity(2, 2), DMatrix::identity(2, 2)],
            vec![3, 2],
            7.5,
            5,
        )
        .unwrap();
        let un = m_step(&stats).unwrap();
        assert!(un.w.iter().all(|v| *v == 0.0));
        assert_abs_diff_eq!(un.sigma2, 1.5, epsilon = 1e-15);
    }

    #[test]
    fn m_step_recovers_noiseless_loadings() {
        // z_i = W t_i exactly, t known: A_j = Σ z_ij t_i, B_j = Σ t_i t_iᵀ.
        let w = DMatrix::from_row_slice(3, 2, &[0.3, -0.7, 0.5, 0.2, -0.1, 0.9]);
        let ts: Vec<DVector<f64>> = (0..6).map(|i| DVector::from_vec(vec![(i as f64).sin(), (i as f64 * 0.7).cos()])).collect();
        let mut a = vec![DVector::zeros(2); 3];
        let mut b = vec![DMatrix::zeros(2, 2); 3];
        let mut e_zz = 0.0;
        for t in &ts {
            let z = &w * t;
            for j in 0..3 {
                a[j] += t * z[j];
                b[j] += t * t.transpose();
            }
            e_zz += z.norm_squared();
        }
        let stats = SufficientStats::from_parts(a, b, vec![6; 3], e_zz, 18).unwrap();
        let un = m_step(&stats).unwrap();
        assert_abs_diff_eq!(un.w, w, epsilon = 1e-10);
    }

    #[test]
    fn m_step_empty_column() {
        let stats = SufficientStats::zeros(2, 1);
        assert!(matches!(m_step(&stats), Err(Error::NoObservations)));
        let mut stats = SufficientStats::from_parts(
            vec![DVector::from_element(1, 1.0), DVector::zeros(1)],
            vec![DMatrix::identity(1, 1), DMatrix::identity(1, 1)],
            vec![1, 0],
            1.0,
            1,
        )
        .unwrap();
        assert!(matches!(m_step(&stats), Err(Error::EmptyColumn { column: 1 })));
        stats.col_count[1] = 1;
        assert!(m_step(&stats).is_ok());
    }

    #[test]
    fn rescale_example() {
        let un = UnconstrainedParams { w: DMatrix::from_row_slice(2, 1, &[3f64.sqrt(), 1.0]), sigma2: 1.0 };
        let params = rescale(&un).unwrap();
        assert_abs_diff_eq!(params.sigma2, 0.375, epsilon = 1e-15);
        for row in params.w.row_iter() {
            assert_abs_diff_eq!(row.norm_squared(), 0.625, epsilon = 1e-15);
        }
    }

    #[test]
    fn rescale_fixed_point_and_zero_row() {
        let w = DMatrix::from_row_slice(2, 2, &[0.6, 0.0, 0.0, -0.6]);
        let un = UnconstrainedParams { w: w.clone(), sigma2: 0.64 };
        let params = rescale(&un).unwrap();
        assert_abs_diff_eq!(params.sigma2, 0.64, epsilon = 1e-15);
        assert_abs_diff_eq!(params.w, w, epsilon = 1e-15);

        let un = UnconstrainedParams { w: DMatrix::from_row_slice(2, 1, &[0.0, 1.0]), sigma2: 0.5 };
        assert!(matches!(rescale(&un), Err(Error::ZeroRow { row: 0 })));
    }

    #[test]
    fn log_likelihood_matches_dense_density() {
        let w = DMatrix::from_row_slice(3, 1, &[0.6, 0.5, -0.4]);
        let sigma2 = 0.5;
        let rows = vec![(vec![0, 2], vec![0.3, -1.1]), (vec![1], vec![0.7])];
        let ll = log_likelihood_points(&w, sigma2, &rows).unwrap();
        let mut expected = 0.0;
        for (obs, z) in &rows {
            let wo = DMatrix::from_fn(obs.len(), 1, |r, c| w[(obs[r], c)]);
            let cov = &wo * wo.transpose() + DMatrix::identity(obs.len(), obs.len()) * sigma2;
            let zv = DVector::from_column_slice(z);
            let inv = cov.clone().try_inverse().unwrap();
            let quad = (zv.transpose() * inv * &zv)[(0, 0)];
            expected += -0.5 * (obs.len() as f64 * LN_2PI + cov.determinant().ln() + quad);
        }
        assert_abs_diff_eq!(ll, expected, epsilon = 1e-12);
    }

    #[test]
    fn fit_rejects_bad_config() {
        let data = ObservedMatrix::complete(4, 3, vec![1.0, 2.0, 3.0, 2.0, 1.5, 0.5, 3.0, 0.0, 1.0, 4.0, 1.0, 2.5]).unwrap();
        let marginals = MarginalModel::fit(&data, ColumnKind::Continuous).unwrap();
        assert!(matches!(fit(&data, &marginals, &EmConfig::new(1).with_max_iter(0)), Err(Error::InvalidConfig(_))));
        assert!(matches!(fit(&data, &marginals, &EmConfig::new(3)), Err(Error::BadRank { .. })));
        let res = fit(&data, &marginals, &EmConfig::new(1).with_max_iter(1)).unwrap();
        assert_eq!(res.diagnostics.iterations.len(), 1);
        assert!(res.params.max_diagonal_deviation() < 1e-12);
    }
}
