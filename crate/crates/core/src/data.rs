use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the columns of a matrix are linked to the latent Gaussian scale.
///
/// A matrix is either all continuous or all ordinal. `Linear` is a whole-matrix
/// mode in which every marginal is affine, which reduces the model to PPCA.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Continuous,
    Ordinal,
    Linear,
}

impl ColumnKind {
    /// Whether missing entries of this kind get a confidence interval (as
    /// opposed to a probability bound).
    pub fn has_interval(self) -> bool {
        !matches!(self, ColumnKind::Ordinal)
    }
}

impl std::str::FromStr for ColumnKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "continuous" | "cont" => Ok(ColumnKind::Continuous),
            "ordinal" | "ord" | "binary" => Ok(ColumnKind::Ordinal),
            "linear" | "ppca" => Ok(ColumnKind::Linear),
            other => Err(Error::InvalidConfig(format!("unknown column kind '{other}'"))),
        }
    }
}

impl std::fmt::Display for ColumnKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ColumnKind::Continuous => "continuous",
            ColumnKind::Ordinal => "ordinal",
            ColumnKind::Linear => "linear",
        };
        f.write_str(s)
    }
}

/// An `n x p` data matrix together with its observed-entry mask.
///
/// Values are stored row-major. Entries outside the mask hold `NaN` and are
/// never read.
#[derive(Debug, Clone)]
pub struct ObservedMatrix {
    nrows: usize,
    ncols: usize,
    values: Vec<f64>,
    observed: Vec<bool>,
}

/// Equal when shapes, masks and observed values agree.
impl PartialEq for ObservedMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.nrows == other.nrows
            && self.ncols == other.ncols
            && self.observed == other.observed
            && self.values.iter().zip(&other.values).zip(&self.observed).all(|((a, b), &o)| !o || a == b)
    }
}

impl ObservedMatrix {
    pub fn new(nrows: usize, ncols: usize, values: Vec<f64>, observed: Vec<bool>) -> Result<Self> {
        if values.len() != nrows * ncols || observed.len() != nrows * ncols {
            return Err(Error::DimensionMismatch(format!(
                "expected {} entries for a {nrows}x{ncols} matrix, got {} values and {} mask bits",
                nrows * ncols,
                values.len(),
                observed.len()
            )));
        }
        let mut values = values;
        for (v, &o) in values.iter_mut().zip(&observed) {
            if !o {
                *v = f64::NAN;
            } else if !v.is_finite() {
                return Err(Error::Parse(format!("observed value {v} is not finite")));
            }
        }
        Ok(Self { nrows, ncols, values, observed })
    }

    /// Builds a matrix from optional cells, `None` marking a missing entry.
    pub fn from_rows(rows: &[Vec<Option<f64>>]) -> Result<Self> {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(nrows * ncols);
        let mut observed = Vec::with_capacity(nrows * ncols);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != ncols {
                return Err(Error::DimensionMismatch(format!(
                    "row {i} has {} cells, expected {ncols}",
                    row.len()
                )));
            }
            for cell in row {
                values.push(cell.unwrap_or(f64::NAN));
                observed.push(cell.is_some());
            }
        }
        Self::new(nrows, ncols, values, observed)
    }

    /// A fully observed matrix.
    pub fn complete(nrows: usize, ncols: usize, values: Vec<f64>) -> Result<Self> {
        let observed = vec![true; values.len()];
        Self::new(nrows, ncols, values, observed)
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn is_observed(&self, i: usize, j: usize) -> bool {
        self.observed[i * self.ncols + j]
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let idx = i * self.ncols + j;
        self.observed[idx].then(|| self.values[idx])
    }

    /// Column indices observed in row `i`, ascending.
    pub fn observed_in_row(&self, i: usize) -> Vec<usize> {
        (0..self.ncols).filter(|&j| self.is_observed(i, j)).collect()
    }

    /// Column indices missing in row `i`, ascending.
    pub fn missing_in_row(&self, i: usize) -> Vec<usize> {
        (0..self.ncols).filter(|&j| !self.is_observed(i, j)).collect()
    }

    /// Observed values of column `j`, in row order.
    pub fn column_observed(&self, j: usize) -> Vec<f64> {
        (0..self.nrows).filter_map(|i| self.get(i, j)).collect()
    }

    pub fn n_observed(&self) -> usize {
        self.observed.iter().filter(|&&o| o).count()
    }

    /// Missing entries as `(row, col)` pairs in row-major order.
    pub fn missing_entries(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.nrows {
            for j in 0..self.ncols {
                if !self.is_observed(i, j) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// Observed entries as `(row, col)` pairs in row-major order.
    pub fn observed_entries(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.n_observed());
        for i in 0..self.nrows {
            for j in 0..self.ncols {
                if self.is_observed(i, j) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// Returns a copy with the given entries additionally masked.
    pub fn with_masked(&self, entries: &[(usize, usize)]) -> Self {
        let mut out = self.clone();
        for &(i, j) in entries {
            let idx = i * self.ncols + j;
            out.observed[idx] = false;
            out.values[idx] = f64::NAN;
        }
        out
    }

    /// Every column must carry at least one observation.
    pub fn check_columns_nonempty(&self) -> Result<()> {
        if self.n_observed() == 0 {
            return Err(Error::NoObservations);
        }
        for j in 0..self.ncols {
            if (0..self.nrows).all(|i| !self.is_observed(i, j)) {
                return Err(Error::EmptyColumn { column: j });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_rows_tracks_mask() {
        let m = ObservedMatrix::from_rows(&[vec![Some(1.0), None], vec![None, Some(4.0)]]).unwrap();
        assert_eq!(m.get(0, 0), Some(1.0));
        assert_eq!(m.get(0, 1), None);
        assert_eq!(m.missing_entries(), vec![(0, 1), (1, 0)]);
        assert_eq!(m.observed_in_row(1), vec![1]);
        assert_eq!(m.column_observed(1), vec![4.0]);
    }

    #[test]
    fn ragged_rows_rejected() {
        let err = ObservedMatrix::from_rows(&[vec![Some(1.0)], vec![None, None]]);
        assert!(matches!(err, Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn empty_column_detected() {
        let m = ObservedMatrix::from_rows(&[vec![Some(1.0), None], vec![Some(2.0), None]]).unwrap();
        assert!(matches!(m.check_columns_nonempty(), Err(Error::EmptyColumn { column: 1 })));
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("ordinal".parse::<ColumnKind>().unwrap(), ColumnKind::Ordinal);
        assert_eq!("PPCA".parse::<ColumnKind>().unwrap(), ColumnKind::Linear);
        assert!("mixed".parse::<ColumnKind>().is_err());
    }
}
