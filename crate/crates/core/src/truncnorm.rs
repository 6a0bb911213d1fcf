//! Univariate truncated normal moments and the per-row approximation of
//! `E[z_O | x_O]` and `diag Cov[z_O | x_O]` for ordinal observations.
//!
//! The row approximation treats each coordinate as a univariate truncated
//! normal conditional on the current mean of all other coordinates, and
//! updates all coordinates simultaneously (one Jacobi sweep). Off-diagonal
//! covariance is taken as zero, as is the variance of the conditional mean.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::marginals::LatentInterval;
use crate::normal;

/// Mean and variance of a truncated normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncMoments {
    pub mean: f64,
    pub var: f64,
}

/// Moments of `N(mu, sigma2)` conditioned on `(a, b]`.
///
/// Never returns NaN: one-sided tails are evaluated through the Mills ratio,
/// intervals too narrow for the closed form use a second-order expansion, and
/// anything that still fails to produce finite values collapses to the
/// nearest finite point of the interval with zero variance.
pub fn truncnorm_moments(mu: f64, sigma2: f64, a: f64, b: f64) -> Result<TruncMoments> {
    if !(a < b) {
        return Err(Error::EmptyInterval { lower: a, upper: b });
    }
    if !(sigma2 > 0.0) || !mu.is_finite() {
        return Err(Error::InvalidConfig(format!("truncated normal needs finite mean and positive variance, got ({mu}, {sigma2})")));
    }
    let sigma = sigma2.sqrt();
    let alpha = (a - mu) / sigma;
    let beta = (b - mu) / sigma;

    let (m, v) = match standardized_moments(alpha, beta) {
        Some((m, v)) if m.is_finite() && v.is_finite() => (m.clamp(alpha, beta), v.clamp(0.0, 1.0)),
        _ => (fallback_point(alpha, beta), 0.0),
    };
    let mean = (mu + sigma * m).clamp(a, b);
    Ok(TruncMoments { mean, var: sigma2 * v })
}

fn fallback_point(alpha: f64, beta: f64) -> f64 {
    match (alpha.is_finite(), beta.is_finite()) {
        (true, true) => 0.5 * (alpha + beta),
        (true, false) => alpha,
        (false, true) => beta,
        (false, false) => 0.0,
    }
}

/// Moments of a standard normal truncated to `(alpha, beta]`.
fn standardized_moments(alpha: f64, beta: f64) -> Option<(f64, f64)> {
    let width = beta - alpha;
    if width.is_finite() {
        let mid = 0.5 * (alpha + beta);
        if width * mid.abs().max(1.0) < 1e-3 {
            // Density is close to exp(-mid·x) across the interval.
            return Some((mid - mid * width * width / 12.0, width * width / 12.0));
        }
    }
    if alpha >= 0.0 {
        upper_tail_moments(alpha, beta)
    } else if beta <= 0.0 {
        upper_tail_moments(-beta, -alpha).map(|(m, v)| (-m, v))
    } else {
        // The interval contains zero, so the mass is not small.
        let mass = 1.0 - normal::sf(-alpha) - normal::sf(beta);
        if !(mass > 0.0) {
            return None;
        }
        let (pa, apa) = density_terms(alpha);
        let (pb, bpb) = density_terms(beta);
        let m = (pa - pb) / mass;
        let v = 1.0 + (apa - bpb) / mass - m * m;
        Some((m, v))
    }
}

/// `(φ(x), x·φ(x))`, both zero at infinity.
fn density_terms(x: f64) -> (f64, f64) {
    if x.is_infinite() {
        (0.0, 0.0)
    } else {
        let p = normal::pdf(x);
        (p, x * p)
    }
}

/// Moments for `0 <= a < b <= ∞`, written in terms of Mills ratios so that
/// neither `φ` nor the tail mass has to be represented directly.
fn upper_tail_moments(a: f64, b: f64) -> Option<(f64, f64)> {
    let ra = normal::mills_ratio(a);
    if b.is_infinite() {
        let psi_a = 1.0 / ra;
        let m = psi_a;
        let v = 1.0 + a * psi_a - m * m;
        return Some((m, v));
    }
    // φ(b)/φ(a)
    let ratio = (-0.5 * (b - a) * (b + a)).exp();
    let denom = ra - ratio * normal::mills_ratio(b);
    if !(denom > 0.0) {
        return None;
    }
    let psi_a = 1.0 / denom;
    let psi_b = ratio * psi_a;
    let m = psi_a - psi_b;
    let v = 1.0 + a * psi_a - b * psi_b - m * m;
    Some((m, v))
}

/// Per-row latent moments over the observed coordinates: `E[z_O | x_O]` and
/// the diagonal of `Cov[z_O | x_O]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentRowMoments {
    pub mean: Vec<f64>,
    pub var_diag: Vec<f64>,
}

impl LatentRowMoments {
    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    /// Starting point for the first EM iteration: each coordinate takes the
    /// moments of `N(0, 1)` truncated to its own interval.
    pub fn initial(intervals: &[LatentInterval]) -> Result<Self> {
        let mut mean = Vec::with_capacity(intervals.len());
        let mut var_diag = Vec::with_capacity(intervals.len());
        for iv in intervals {
            if iv.is_point() {
                mean.push(iv.lower);
                var_diag.push(0.0);
            } else {
                let tm = truncnorm_moments(0.0, 1.0, iv.lower, iv.upper)?;
                mean.push(tm.mean);
                var_diag.push(tm.var);
            }
        }
        Ok(Self { mean, var_diag })
    }

    /// Whether every coordinate is an exactly known point.
    pub fn is_exact(&self) -> bool {
        self.var_diag.iter().all(|&v| v == 0.0)
    }
}

/// Linear algebra shared by the E-step, the Jacobi sweep and missing-entry
/// conditioning for one row: `W_O`, the Cholesky factor of
/// `M_O = σ²I_k + W_Oᵀ W_O` and `G = M_O⁻¹ W_Oᵀ`.
#[derive(Debug, Clone)]
pub struct RowSystem {
    pub w_obs: DMatrix<f64>,
    pub chol: Cholesky<f64, Dyn>,
    pub g: DMatrix<f64>,
    pub sigma2: f64,
}

impl RowSystem {
    /// Builds the system for observed rows `observed` of the loading matrix.
    pub fn new(w: &DMatrix<f64>, sigma2: f64, observed: &[usize]) -> Result<Self> {
        let k = w.ncols();
        let w_obs = DMatrix::from_fn(observed.len(), k, |r, c| w[(observed[r], c)]);
        Self::from_w_obs(w_obs, sigma2)
    }

    pub fn from_w_obs(w_obs: DMatrix<f64>, sigma2: f64) -> Result<Self> {
        let k = w_obs.ncols();
        let mut m = w_obs.tr_mul(&w_obs);
        for d in 0..k {
            m[(d, d)] += sigma2;
        }
        let chol = m.cholesky().ok_or(Error::SingularSystem)?;
        let g = chol.solve(&w_obs.transpose());
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularSystem);
        }
        Ok(Self { w_obs, chol, g, sigma2 })
    }

    pub fn n_obs(&self) -> usize {
        self.w_obs.nrows()
    }

    pub fn rank(&self) -> usize {
        self.w_obs.ncols()
    }

    /// `M_O⁻¹ W_Oᵀ z`.
    pub fn project(&self, z: &[f64]) -> DVector<f64> {
        &self.g * DVector::from_column_slice(z)
    }

    /// Mean and variance of each `z_j`, `j ∈ O`, conditional on every other
    /// observed coordinate being fixed at `latent_mean`.
    ///
    /// Uses the diagonal of `(σ²I + W_O W_Oᵀ)⁻¹ = σ⁻²(I − W_O M_O⁻¹ W_Oᵀ)`, so
    /// no `|O| x |O|` matrix is ever formed.
    pub fn conditional_mu_sigma(&self, latent_mean: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let u = self.project(latent_mean);
        let n = self.n_obs();
        let mut mu = Vec::with_capacity(n);
        let mut s2 = Vec::with_capacity(n);
        for j in 0..n {
            let row = self.w_obs.row(j);
            let h = row.dot(&self.g.column(j).transpose());
            let wu = row.dot(&u.transpose());
            let keep = 1.0 - h;
            if !(keep > 0.0) {
                return Err(Error::SingularSystem);
            }
            let z = latent_mean[j];
            mu.push(z - (z - wu) / keep);
            s2.push(self.sigma2 / keep);
        }
        Ok((mu, s2))
    }

    /// Jacobi sweeps over the row's coordinates, starting from `prev`.
    pub fn jacobi(&self, intervals: &[LatentInterval], prev: &LatentRowMoments, sweeps: usize) -> Result<LatentRowMoments> {
        if intervals.iter().all(LatentInterval::is_point) {
            return Ok(LatentRowMoments {
                mean: intervals.iter().map(|iv| iv.lower).collect(),
                var_diag: vec![0.0; intervals.len()],
            });
        }
        let mut current = prev.clone();
        for _ in 0..sweeps {
            let (mu, s2) = self.conditional_mu_sigma(&current.mean)?;
            let mut next = LatentRowMoments { mean: Vec::with_capacity(mu.len()), var_diag: Vec::with_capacity(mu.len()) };
            for ((iv, &m), &s) in intervals.iter().zip(&mu).zip(&s2) {
                if iv.is_point() {
                    next.mean.push(iv.lower);
                    next.var_diag.push(0.0);
                } else {
                    let tm = truncnorm_moments(m, s, iv.lower, iv.upper)?;
                    next.mean.push(tm.mean);
                    next.var_diag.push(tm.var);
                }
            }
            current = next;
        }
        Ok(current)
    }
}

/// `(μ_ij, σ²_ij)` for every observed coordinate of a row; see
/// [`RowSystem::conditional_mu_sigma`].
pub fn conditional_mu_sigma(w_obs: &DMatrix<f64>, sigma2: f64, latent_mean: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    RowSystem::from_w_obs(w_obs.clone(), sigma2)?.conditional_mu_sigma(latent_mean)
}

/// One E-step update of the row's latent moments: `sweeps` Jacobi sweeps
/// (one in the EM loop) starting from the previous iteration's moments.
pub fn ordinal_row_estep(
    intervals: &[LatentInterval],
    w_obs: &DMatrix<f64>,
    sigma2: f64,
    prev: &LatentRowMoments,
    sweeps: usize,
) -> Result<LatentRowMoments> {
    if intervals.len() != w_obs.nrows() || prev.len() != intervals.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} intervals, {} loading rows, {} previous moments",
            intervals.len(),
            w_obs.nrows(),
            prev.len()
        )));
    }
    RowSystem::from_w_obs(w_obs.clone(), sigma2)?.jacobi(intervals, prev, sweeps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};
    use std::f64::consts::PI;

    const INF: f64 = f64::INFINITY;

    #[test]
    fn untruncated() {
        let tm = truncnorm_moments(0.0, 1.0, -INF, INF).unwrap();
        assert_abs_diff_eq!(tm.mean, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(tm.var, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn half_normal() {
        let tm = truncnorm_moments(0.0, 1.0, 0.0, INF).unwrap();
        assert_abs_diff_eq!(tm.mean, (2.0 / PI).sqrt(), epsilon = 1e-14);
        assert_abs_diff_eq!(tm.var, 1.0 - 2.0 / PI, epsilon = 1e-14);
        let tm = truncnorm_moments(0.0, 1.0, -INF, 0.0).unwrap();
        assert_abs_diff_eq!(tm.mean, -(2.0 / PI).sqrt(), epsilon = 1e-14);
    }

    #[test]
    fn symmetric_window() {
        // Variance frozen from 1 - 2φ(1)/(2Φ(1)-1), evaluated with scipy.
        let tm = truncnorm_moments(0.0, 1.0, -1.0, 1.0).unwrap();
        assert_abs_diff_eq!(tm.mean, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(tm.var, 0.291_125_094_772_793_14, epsilon = 1e-12);
    }

    #[test]
    fn empty_interval() {
        assert!(matches!(truncnorm_moments(0.0, 1.0, 1.0, 1.0), Err(Error::EmptyInterval { .. })));
        assert!(matches!(truncnorm_moments(0.0, 1.0, 2.0, 1.0), Err(Error::EmptyInterval { .. })));
    }

    #[test]
    fn extreme_tails_stay_finite() {
        for &(a, b) in &[(40.0, INF), (39.0, 40.0), (-INF, -40.0), (-40.0, -39.5), (35.0, 35.0 + 1e-9), (1e6, INF)] {
            let tm = truncnorm_moments(0.0, 1.0, a, b).unwrap();
            assert!(tm.mean.is_finite() && tm.var.is_finite(), "({a}, {b}) -> {tm:?}");
            assert!(tm.mean >= a && tm.mean <= b);
            assert!(tm.var >= 0.0 && tm.var <= 1.0);
        }
        // Far upper tail: mean ≈ a + 1/a, variance ≈ 1/a².
        let tm = truncnorm_moments(0.0, 1.0, 40.0, INF).unwrap();
        assert_abs_diff_eq!(tm.mean, 40.0 + 1.0 / 40.0, epsilon = 1e-4);
        assert_abs_diff_eq!(tm.var, 1.0 / 1600.0, epsilon = 1e-5);
    }

    #[test]
    fn shifted_and_scaled() {
        let tm = truncnorm_moments(2.0, 4.0, 2.0, INF).unwrap();
        assert_abs_diff_eq!(tm.mean, 2.0 + 2.0 * (2.0 / PI).sqrt(), epsilon = 1e-13);
        assert_abs_diff_eq!(tm.var, 4.0 * (1.0 - 2.0 / PI), epsilon = 1e-13);
    }

    #[test]
    fn bivariate_conditional() {
        let w = DMatrix::from_row_slice(2, 1, &[0.6, 0.6]);
        let z2 = 0.8;
        let (mu, s2) = conditional_mu_sigma(&w, 0.64, &[1.0, z2]).unwrap();
        assert_abs_diff_eq!(mu[0], 0.36 * z2, epsilon = 1e-12);
        assert_abs_diff_eq!(s2[0], 1.0 - 0.36 * 0.36, epsilon = 1e-12);
        assert_abs_diff_eq!(mu[1], 0.36 * 1.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_loadings_decouple() {
        let w = DMatrix::zeros(3, 2);
        let (mu, s2) = conditional_mu_sigma(&w, 0.3, &[1.0, -2.0, 0.5]).unwrap();
        for j in 0..3 {
            assert_abs_diff_eq!(mu[j], 0.0, epsilon = 1e-15);
            assert_abs_diff_eq!(s2[j], 0.3, epsilon = 1e-15);
        }
    }

    #[test]
    fn conditional_variance_bounds() {
        let w = DMatrix::from_row_slice(4, 2, &[0.5, 0.5, 0.7, -0.2, 0.1, 0.8, -0.6, 0.3]);
        // unit-diagonal companion noise
        let sigma2 = 1.0 - w.row_iter().map(|r| r.norm_squared()).fold(0.0, f64::max);
        let (_, s2) = conditional_mu_sigma(&w, sigma2, &[0.1, 0.2, 0.3, 0.4]).unwrap();
        for v in s2 {
            assert!(v >= sigma2 - 1e-12 && v <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn unconstrained_row_keeps_conditional_moments() {
        let w = DMatrix::from_row_slice(2, 1, &[0.6, 0.6]);
        let intervals = vec![LatentInterval::unbounded(); 2];
        let prev = LatentRowMoments { mean: vec![0.5, -0.5], var_diag: vec![1.0, 1.0] };
        let (mu, s2) = conditional_mu_sigma(&w, 0.64, &prev.mean).unwrap();
        let next = ordinal_row_estep(&intervals, &w, 0.64, &prev, 1).unwrap();
        for j in 0..2 {
            assert_abs_diff_eq!(next.mean[j], mu[j], epsilon = 1e-12);
            assert_abs_diff_eq!(next.var_diag[j], s2[j], epsilon = 1e-12);
        }
    }

    #[test]
    fn decoupled_half_normals() {
        let sigma2: f64 = 0.49;
        let w = DMatrix::zeros(3, 1);
        let intervals = vec![LatentInterval::new(0.0, INF); 3];
        let prev = LatentRowMoments::initial(&intervals).unwrap();
        let next = ordinal_row_estep(&intervals, &w, sigma2, &prev, 1).unwrap();
        for j in 0..3 {
            assert_abs_diff_eq!(next.mean[j], (2.0 / PI).sqrt() * sigma2.sqrt(), epsilon = 1e-13);
            assert_abs_diff_eq!(next.var_diag[j], sigma2 * (1.0 - 2.0 / PI), epsilon = 1e-13);
        }
    }

    #[test]
    fn single_coordinate_is_exact() {
        let w = DMatrix::from_row_slice(1, 1, &[0.8]);
        let iv = LatentInterval::new(-0.3, 1.2);
        let prev = LatentRowMoments { mean: vec![0.0], var_diag: vec![0.0] };
        let next = ordinal_row_estep(&[iv], &w, 0.36, &prev, 1).unwrap();
        let exact = truncnorm_moments(0.0, 1.0, -0.3, 1.2).unwrap();
        assert_abs_diff_eq!(next.mean[0], exact.mean, epsilon = 1e-12);
        assert_abs_diff_eq!(next.var_diag[0], exact.var, epsilon = 1e-12);
    }

    #[test]
    fn points_pass_through() {
        let w = DMatrix::from_row_slice(2, 1, &[0.6, 0.6]);
        let intervals = vec![LatentInterval::point(0.3), LatentInterval::new(0.0, INF)];
        let prev = LatentRowMoments::initial(&intervals).unwrap();
        let next = ordinal_row_estep(&intervals, &w, 0.64, &prev, 3).unwrap();
        assert_eq!(next.mean[0], 0.3);
        assert_eq!(next.var_diag[0], 0.0);
        assert!(next.mean[1] > 0.0);
    }

    /// Integration oracle: composite Simpson over the truncation interval,
    /// infinite ends cut at ±12.
    fn simpson_moments(alpha: f64, beta: f64, points: usize) -> (f64, f64) {
        let lo = alpha.max(-12.0);
        let hi = beta.min(12.0);
        let n = points + points % 2;
        let h = (hi - lo) / n as f64;
        let (mut z0, mut z1, mut z2) = (0.0, 0.0, 0.0);
        for i in 0..=n {
            let x = lo + i as f64 * h;
            let wgt = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
            let d = wgt * (-0.5 * x * x).exp();
            z0 += d;
            z1 += d * x;
            z2 += d * x * x;
        }
        let mean = z1 / z0;
        (mean, z2 / z0 - mean * mean)
    }

    #[test]
    fn agrees_with_quadrature() {
        let grid = [-6.0, -4.5, -2.0, -0.7, 0.0, 0.3, 1.5, 3.0, 5.2, 6.0];
        for (ia, &a) in grid.iter().enumerate() {
            for &b in &grid[ia + 1..] {
                let tm = truncnorm_moments(0.0, 1.0, a, b).unwrap();
                let (m, v) = simpson_moments(a, b, 20_000);
                assert_abs_diff_eq!(tm.mean, m, epsilon = 1e-8);
                assert_abs_diff_eq!(tm.var, v, epsilon = 1e-8);
            }
        }
    }

    /// Rejection-sampling oracle for E[z_O | x_O] under a k = 1 model.
    fn mc_row_mean(w: &[f64], sigma2: f64, intervals: &[LatentInterval], draws: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = w.len();
        let mut sum = vec![0.0; p];
        let mut accepted = 0usize;
        let sd = sigma2.sqrt();
        let mut z = vec![0.0; p];
        for _ in 0..draws {
            let t: f64 = StandardNormal.sample(&mut rng);
            for j in 0..p {
                let e: f64 = StandardNormal.sample(&mut rng);
                z[j] = w[j] * t + sd * e;
            }
            if intervals.iter().zip(&z).all(|(iv, &v)| iv.lower < v && v <= iv.upper) {
                accepted += 1;
                for j in 0..p {
                    sum[j] += z[j];
                }
            }
        }
        sum.iter().map(|s| s / accepted as f64).collect()
    }

    #[test]
    fn converged_sweeps_match_rejection_sampling() {
        let cases: Vec<(Vec<f64>, Vec<LatentInterval>)> = vec![
            (vec![0.8, 0.7], vec![LatentInterval::new(0.0, INF), LatentInterval::new(-INF, 0.5)]),
            (
                vec![0.7, 0.6, 0.8],
                vec![LatentInterval::new(-0.5, 0.7), LatentInterval::new(0.2, INF), LatentInterval::new(-INF, -0.3)],
            ),
            (
                vec![0.5, -0.6, 0.4],
                vec![LatentInterval::new(-INF, 0.0), LatentInterval::new(-1.0, 1.0), LatentInterval::new(0.4, INF)],
            ),
        ];
        let sigma2 = 0.36;
        for (seed, (w, intervals)) in cases.into_iter().enumerate() {
            let wm = DMatrix::from_column_slice(w.len(), 1, &w);
            let prev = LatentRowMoments::initial(&intervals).unwrap();
            let approx = ordinal_row_estep(&intervals, &wm, sigma2, &prev, 200).unwrap();
            let mc = mc_row_mean(&w, sigma2, &intervals, 1_000_000, seed as u64);
            for j in 0..w.len() {
                assert!((approx.mean[j] - mc[j]).abs() < 0.05, "case {seed} coord {j}: {} vs {}", approx.mean[j], mc[j]);
            }
        }
    }
}
