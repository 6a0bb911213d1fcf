//! Per-column monotone maps between the data scale and the latent Gaussian
//! scale.
//!
//! Each marginal exposes a forward map `g` (latent to data) and an inverse
//! map returning the set of latent values consistent with an observation:
//! a single point for continuous and linear columns, an interval for ordinal
//! columns.

use serde::{Deserialize, Serialize};

use crate::data::{ColumnKind, ObservedMatrix};
use crate::error::{Error, Result};
use crate::normal;

/// The latent preimage `(lower, upper]` of an observed value. Continuous
/// observations give a degenerate interval with `lower == upper`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatentInterval {
    pub lower: f64,
    pub upper: f64,
}

impl LatentInterval {
    pub fn new(lower: f64, upper: f64) -> Self {
        Self { lower, upper }
    }

    pub fn point(z: f64) -> Self {
        Self { lower: z, upper: z }
    }

    /// The unconstrained interval of a missing entry.
    pub fn unbounded() -> Self {
        Self { lower: f64::NEG_INFINITY, upper: f64::INFINITY }
    }

    pub fn is_point(&self) -> bool {
        self.lower == self.upper
    }

    /// Whether `z` lies in the closure of the interval.
    pub fn contains_closed(&self, z: f64) -> bool {
        self.lower <= z && z <= self.upper
    }
}

/// Scaled empirical CDF marginal for a continuous column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuousMarginal {
    sorted_values: Vec<f64>,
}

impl ContinuousMarginal {
    pub fn fit(column_observed: &[f64]) -> Result<Self> {
        Self::fit_indexed(column_observed, 0)
    }

    fn fit_indexed(column_observed: &[f64], column: usize) -> Result<Self> {
        if column_observed.len() < 2 {
            return Err(Error::DegenerateColumn {
                column,
                reason: format!("{} observed value(s), need at least 2", column_observed.len()),
            });
        }
        let mut sorted_values = column_observed.to_vec();
        sorted_values.sort_by(f64::total_cmp);
        if sorted_values.first() == sorted_values.last() {
            return Err(Error::DegenerateColumn { column, reason: "zero variance".into() });
        }
        Ok(Self { sorted_values })
    }

    pub fn sorted_values(&self) -> &[f64] {
        &self.sorted_values
    }

    pub fn n_obs(&self) -> usize {
        self.sorted_values.len()
    }

    /// Unscaled empirical CDF: fraction of observations `<= x`.
    pub fn ecdf(&self, x: f64) -> f64 {
        self.count_le(x) as f64 / self.n_obs() as f64
    }

    fn count_le(&self, x: f64) -> usize {
        self.sorted_values.partition_point(|&v| v <= x)
    }

    /// `Φ⁻¹(n/(n+1) · F̂(x))`.
    pub fn g_inverse(&self, x: f64) -> Result<f64> {
        let count = self.count_le(x);
        if count == 0 {
            return Err(Error::NonFiniteLatent { value: x });
        }
        Ok(normal::quantile(count as f64 / (self.n_obs() as f64 + 1.0)))
    }

    /// Empirical quantile at probability `Φ(z)`, linearly interpolated between
    /// order statistics placed at probabilities `(i−1)/(n−1)`.
    pub fn g_forward(&self, z: f64) -> f64 {
        let n = self.n_obs();
        // 1-based fractional position of the quantile
        let h = 1.0 + normal::cdf(z) * (n as f64 - 1.0);
        if h <= 1.0 {
            return self.sorted_values[0];
        }
        if h >= n as f64 {
            return self.sorted_values[n - 1];
        }
        let lo = h.floor();
        let frac = h - lo;
        let lo = lo as usize;
        let a = self.sorted_values[lo - 1];
        let b = self.sorted_values[lo];
        a + frac * (b - a)
    }
}

/// Step-function marginal for an ordinal column. Levels are stored in sorted
/// order and addressed by 1-based codes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrdinalMarginal {
    levels: Vec<f64>,
    cut_points: Vec<f64>,
}

impl OrdinalMarginal {
    pub fn fit(column_observed: &[f64]) -> Result<Self> {
        Self::fit_indexed(column_observed, 0)
    }

    fn fit_indexed(column_observed: &[f64], column: usize) -> Result<Self> {
        let mut sorted = column_observed.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mut levels = sorted.clone();
        levels.dedup();
        if levels.len() < 2 {
            return Err(Error::DegenerateColumn {
                column,
                reason: format!("{} distinct level(s) observed, need at least 2", levels.len()),
            });
        }
        let n = sorted.len() as f64;
        let cut_points = levels[..levels.len() - 1]
            .iter()
            .map(|&level| {
                let count = sorted.partition_point(|&v| v <= level);
                normal::quantile(count as f64 / n)
            })
            .collect();
        Ok(Self { levels, cut_points })
    }

    /// Builds a marginal from explicit levels and cut points.
    pub fn from_parts(levels: Vec<f64>, cut_points: Vec<f64>) -> Result<Self> {
        if levels.len() < 2 || cut_points.len() + 1 != levels.len() {
            return Err(Error::Schema(format!(
                "ordinal marginal needs K >= 2 levels and K-1 cut points, got {} and {}",
                levels.len(),
                cut_points.len()
            )));
        }
        let increasing = |v: &[f64]| v.windows(2).all(|w| w[0] < w[1]);
        if !increasing(&levels) || !increasing(&cut_points) || cut_points.iter().any(|s| !s.is_finite()) {
            return Err(Error::Schema("levels and cut points must be finite and strictly increasing".into()));
        }
        Ok(Self { levels, cut_points })
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn cut_points(&self) -> &[f64] {
        &self.cut_points
    }

    /// Number of levels K.
    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    /// The 1-based code of an observed level value.
    pub fn code_of(&self, x: f64) -> Result<usize> {
        self.levels
            .binary_search_by(|v| v.total_cmp(&x))
            .map(|idx| idx + 1)
            .map_err(|_| Error::UnknownLevel { level: x })
    }

    pub fn level_value(&self, code: usize) -> f64 {
        self.levels[code - 1]
    }

    /// Cut point `s_k` for `k` in `0..=K`, with `s_0 = -∞` and `s_K = +∞`.
    pub fn cut(&self, k: usize) -> f64 {
        if k == 0 {
            f64::NEG_INFINITY
        } else if k >= self.n_levels() {
            f64::INFINITY
        } else {
            self.cut_points[k - 1]
        }
    }

    /// `(s_{c-1}, s_c]` for the code `c` of `x`.
    pub fn g_inverse(&self, x: f64) -> Result<LatentInterval> {
        let code = self.code_of(x)?;
        Ok(LatentInterval::new(self.cut(code - 1), self.cut(code)))
    }

    /// `1 + #{s : z > s}`.
    pub fn g_forward_code(&self, z: f64) -> usize {
        1 + self.cut_points.partition_point(|&s| s < z)
    }

    pub fn g_forward(&self, z: f64) -> f64 {
        self.level_value(self.g_forward_code(z))
    }
}

/// Affine marginal `g(z) = mean + scale·z`, used in PPCA mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearMarginal {
    pub mean: f64,
    pub scale: f64,
}

impl LinearMarginal {
    pub fn fit(column_observed: &[f64]) -> Result<Self> {
        Self::fit_indexed(column_observed, 0)
    }

    fn fit_indexed(column_observed: &[f64], column: usize) -> Result<Self> {
        let n = column_observed.len();
        if n < 2 {
            return Err(Error::DegenerateColumn {
                column,
                reason: format!("{n} observed value(s), need at least 2"),
            });
        }
        let mean = column_observed.iter().sum::<f64>() / n as f64;
        let ss: f64 = column_observed.iter().map(|v| (v - mean).powi(2)).sum();
        let scale = (ss / (n as f64 - 1.0)).sqrt();
        if !(scale > 0.0) {
            return Err(Error::DegenerateColumn { column, reason: "zero variance".into() });
        }
        Ok(Self { mean, scale })
    }

    pub fn g_inverse(&self, x: f64) -> f64 {
        (x - self.mean) / self.scale
    }

    pub fn g_forward(&self, z: f64) -> f64 {
        self.mean + self.scale * z
    }
}

/// A fitted marginal of any kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Marginal {
    Continuous(ContinuousMarginal),
    Ordinal(OrdinalMarginal),
    Linear(LinearMarginal),
}

impl Marginal {
    pub fn fit(kind: ColumnKind, column_observed: &[f64], column: usize) -> Result<Self> {
        Ok(match kind {
            ColumnKind::Continuous => Marginal::Continuous(ContinuousMarginal::fit_indexed(column_observed, column)?),
            ColumnKind::Ordinal => Marginal::Ordinal(OrdinalMarginal::fit_indexed(column_observed, column)?),
            ColumnKind::Linear => Marginal::Linear(LinearMarginal::fit_indexed(column_observed, column)?),
        })
    }

    pub fn kind(&self) -> ColumnKind {
        match self {
            Marginal::Continuous(_) => ColumnKind::Continuous,
            Marginal::Ordinal(_) => ColumnKind::Ordinal,
            Marginal::Linear(_) => ColumnKind::Linear,
        }
    }

    /// Latent preimage of an observed value.
    pub fn latent(&self, x: f64) -> Result<LatentInterval> {
        match self {
            Marginal::Continuous(m) => m.g_inverse(x).map(LatentInterval::point),
            Marginal::Ordinal(m) => m.g_inverse(x),
            Marginal::Linear(m) => Ok(LatentInterval::point(m.g_inverse(x))),
        }
    }

    /// Data-scale value for latent `z`.
    pub fn forward(&self, z: f64) -> f64 {
        match self {
            Marginal::Continuous(m) => m.g_forward(z),
            Marginal::Ordinal(m) => m.g_forward(z),
            Marginal::Linear(m) => m.g_forward(z),
        }
    }
}

/// The marginals of every column of a matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalModel {
    kind: ColumnKind,
    columns: Vec<Marginal>,
}

impl MarginalModel {
    /// Fits one marginal per column from the observed entries.
    pub fn fit(data: &ObservedMatrix, kind: ColumnKind) -> Result<Self> {
        data.check_columns_nonempty()?;
        let columns = (0..data.ncols())
            .map(|j| Marginal::fit(kind, &data.column_observed(j), j))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { kind, columns })
    }

    pub fn from_columns(columns: Vec<Marginal>) -> Result<Self> {
        let kind = columns
            .first()
            .map(Marginal::kind)
            .ok_or_else(|| Error::Schema("marginal model has no columns".into()))?;
        if let Some(other) = columns.iter().find(|m| m.kind() != kind) {
            return Err(Error::MixedColumnKinds(format!("{kind} and {}", other.kind())));
        }
        Ok(Self { kind, columns })
    }

    pub fn kind(&self) -> ColumnKind {
        self.kind
    }

    pub fn ncols(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, j: usize) -> &Marginal {
        &self.columns[j]
    }

    pub fn columns(&self) -> &[Marginal] {
        &self.columns
    }

    /// Latent constraints for the observed entries of row `i`, aligned with
    /// `data.observed_in_row(i)`.
    pub fn row_intervals(&self, data: &ObservedMatrix, i: usize, observed: &[usize]) -> Result<Vec<LatentInterval>> {
        observed
            .iter()
            .map(|&j| self.columns[j].latent(data.get(i, j).expect("observed entry")))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn continuous_fit_sorts() {
        let m = ContinuousMarginal::fit(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(m.sorted_values(), &[1.0, 2.0, 3.0]);
        assert_eq!(m.n_obs(), 3);
        let m = ContinuousMarginal::fit(&[3.0, 1.0, 2.0, 2.0]).unwrap();
        assert_eq!(m.sorted_values(), &[1.0, 2.0, 2.0, 3.0]);
    }

    #[test]
    fn continuous_degenerate() {
        assert!(matches!(ContinuousMarginal::fit(&[5.0, 5.0, 5.0]), Err(Error::DegenerateColumn { .. })));
        assert!(matches!(ContinuousMarginal::fit(&[5.0]), Err(Error::DegenerateColumn { .. })));
    }

    #[test]
    fn continuous_inverse_values() {
        let m = ContinuousMarginal::fit(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        // Φ⁻¹(0.4) and Φ⁻¹(0.8)
        assert_abs_diff_eq!(m.g_inverse(2.0).unwrap(), -0.253_347_103_135_8, epsilon = 1e-10);
        assert_abs_diff_eq!(m.g_inverse(4.0).unwrap(), 0.841_621_233_572_9, epsilon = 1e-10);
        let m = ContinuousMarginal::fit(&[1.0, 2.0]).unwrap();
        assert!(matches!(m.g_inverse(0.5), Err(Error::NonFiniteLatent { .. })));
    }

    #[test]
    fn continuous_forward_values() {
        let m = ContinuousMarginal::fit(&[10.0, 20.0, 30.0, 40.0]).unwrap();
        assert_abs_diff_eq!(m.g_forward(0.0), 25.0, epsilon = 1e-12);
        // order statistics sit at probabilities 0, 1/3, 2/3, 1
        assert_abs_diff_eq!(m.g_forward(normal::quantile(1.0 / 3.0)), 20.0, epsilon = 1e-9);
        assert_abs_diff_eq!(m.g_forward(normal::quantile(0.25)), 17.5, epsilon = 1e-9);
        assert_abs_diff_eq!(m.g_forward(normal::quantile(0.9)), 37.0, epsilon = 1e-9);
        let m = ContinuousMarginal::fit(&[10.0, 20.0]).unwrap();
        assert_eq!(m.g_forward(40.0), 20.0);
        assert_eq!(m.g_forward(f64::INFINITY), 20.0);
        assert_eq!(m.g_forward(f64::NEG_INFINITY), 10.0);
    }

    #[test]
    fn ordinal_fit_cut_points() {
        let col: Vec<f64> = std::iter::repeat_n(1.0, 50).chain(std::iter::repeat_n(2.0, 50)).collect();
        let m = OrdinalMarginal::fit(&col).unwrap();
        assert_eq!(m.n_levels(), 2);
        assert_abs_diff_eq!(m.cut_points()[0], 0.0, epsilon = 1e-15);

        let col: Vec<f64> = std::iter::repeat_n(1.0, 25).chain(std::iter::repeat_n(2.0, 75)).collect();
        let m = OrdinalMarginal::fit(&col).unwrap();
        assert_abs_diff_eq!(m.cut_points()[0], -0.674_489_750_196_08, epsilon = 1e-10);

        assert!(matches!(OrdinalMarginal::fit(&[2.0, 2.0, 2.0]), Err(Error::DegenerateColumn { .. })));
    }

    #[test]
    fn ordinal_recodes_levels() {
        let m = OrdinalMarginal::fit(&[10.0, 30.0, 20.0, 30.0]).unwrap();
        assert_eq!(m.levels(), &[10.0, 20.0, 30.0]);
        assert_eq!(m.code_of(20.0).unwrap(), 2);
        assert!(matches!(m.code_of(15.0), Err(Error::UnknownLevel { .. })));
        assert!(matches!(m.g_inverse(15.0), Err(Error::UnknownLevel { .. })));
    }

    #[test]
    fn ordinal_inverse_intervals() {
        let m = OrdinalMarginal::from_parts(vec![1.0, 2.0], vec![0.0]).unwrap();
        assert_eq!(m.g_inverse(1.0).unwrap(), LatentInterval::new(f64::NEG_INFINITY, 0.0));
        assert_eq!(m.g_inverse(2.0).unwrap(), LatentInterval::new(0.0, f64::INFINITY));
        let m = OrdinalMarginal::from_parts(vec![1.0, 2.0, 3.0], vec![-0.5, 0.7]).unwrap();
        assert_eq!(m.g_inverse(2.0).unwrap(), LatentInterval::new(-0.5, 0.7));
    }

    #[test]
    fn ordinal_forward_counts_crossed_cuts() {
        let m = OrdinalMarginal::from_parts(vec![1.0, 2.0, 3.0], vec![-0.5, 0.7]).unwrap();
        assert_eq!(m.g_forward_code(0.0), 2);
        assert_eq!(m.g_forward_code(-1.0), 1);
        assert_eq!(m.g_forward_code(0.7), 2);
        assert_eq!(m.g_forward_code(0.70001), 3);
    }

    #[test]
    fn linear_marginal() {
        // Sample sd with denominator n-1: mean 1, sd √2.
        let m = LinearMarginal::fit(&[0.0, 2.0]).unwrap();
        assert_abs_diff_eq!(m.g_inverse(2.0), 1.0 / 2f64.sqrt(), epsilon = 1e-15);
        assert_eq!(m.g_forward(0.0), m.mean);
        assert!(matches!(LinearMarginal::fit(&[3.0, 3.0]), Err(Error::DegenerateColumn { .. })));
    }

    #[test]
    fn model_fit_rejects_empty_column() {
        let data = ObservedMatrix::from_rows(&[vec![Some(1.0), None], vec![Some(2.0), None]]).unwrap();
        assert!(matches!(MarginalModel::fit(&data, ColumnKind::Continuous), Err(Error::EmptyColumn { column: 1 })));
    }

    #[test]
    fn mixed_kinds_rejected() {
        let cols = vec![
            Marginal::Linear(LinearMarginal { mean: 0.0, scale: 1.0 }),
            Marginal::Ordinal(OrdinalMarginal::from_parts(vec![1.0, 2.0], vec![0.0]).unwrap()),
        ];
        assert!(matches!(MarginalModel::from_columns(cols), Err(Error::MixedColumnKinds(_))));
    }

    fn column_strategy() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-100.0f64..100.0, 2..60)
            .prop_filter("not constant", |v| v.iter().any(|&x| x != v[0]))
    }

    proptest! {
        #[test]
        fn continuous_forward_is_monotone(col in column_strategy(), a in -6.0f64..6.0, b in -6.0f64..6.0) {
            let m = ContinuousMarginal::fit(&col).unwrap();
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(m.g_forward(lo) <= m.g_forward(hi));
        }

        #[test]
        fn continuous_near_inverse(col in column_strategy()) {
            let m = ContinuousMarginal::fit(&col).unwrap();
            let sorted = m.sorted_values();
            let max_gap = sorted.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
            for &x in &col {
                if x == sorted[0] {
                    continue;
                }
                let back = m.g_forward(m.g_inverse(x).unwrap());
                prop_assert!((back - x).abs() <= max_gap + 1e-9);
            }
        }

        #[test]
        fn ordinal_cuts_increasing_and_consistent(col in prop::collection::vec(1u8..6, 2..80), frac in 0.01f64..0.99) {
            let col: Vec<f64> = col.into_iter().map(f64::from).collect();
            prop_assume!(col.iter().any(|&x| x != col[0]));
            let m = OrdinalMarginal::fit(&col).unwrap();
            prop_assert!(m.cut_points().windows(2).all(|w| w[0] < w[1]));
            prop_assert!(m.cut_points().iter().all(|s| s.is_finite()));
            for &level in m.levels() {
                let iv = m.g_inverse(level).unwrap();
                let lo = if iv.lower.is_finite() { iv.lower } else { iv.upper - 5.0 };
                let hi = if iv.upper.is_finite() { iv.upper } else { iv.lower + 5.0 };
                let z = lo + frac * (hi - lo);
                prop_assert_eq!(m.g_forward(z), level);
            }
        }

        #[test]
        fn linear_round_trip(col in column_strategy(), x in -1e3f64..1e3) {
            let m = LinearMarginal::fit(&col).unwrap();
            let back = m.g_forward(m.g_inverse(x));
            prop_assert!((back - x).abs() <= 1e-9 * (1.0 + x.abs()));
        }
    }
}
