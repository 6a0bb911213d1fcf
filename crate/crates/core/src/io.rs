//! Reading and writing datasets and model files.
//!
//! Observed cells are carried as their original strings so that a completed
//! dataset reproduces them byte for byte. Floats written by this module use
//! the shortest decimal form that parses back to the same value.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{ColumnKind, ObservedMatrix};
use crate::em::{CopulaParams, FitDiagnostics, FitResult};
use crate::error::{Error, Result};
use crate::inference::{ImputationResult, MissingEntryUQ};
use crate::marginals::{Marginal, MarginalModel};
use crate::synth::{SynthData, SynthSpec, TrueMarginal};

/// Current model and truth file format.
pub const FORMAT_VERSION: u32 = 1;

/// Ordinal inference threshold: at most this many distinct integer values.
pub const MAX_INFERRED_LEVELS: usize = 20;

pub fn format_f64(x: f64) -> String {
    // Debug keeps the shortest round-trip digits and switches to exponent
    // notation for very large or small magnitudes.
    format!("{x:?}")
}

fn is_missing(cell: &str) -> bool {
    let t = cell.trim();
    t.is_empty() || t == "NA"
}

/// A CSV dataset: header, raw cells and parsed values.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub names: Vec<String>,
    pub cells: Vec<Vec<String>>,
    pub matrix: ObservedMatrix,
}

impl Dataset {
    pub fn read<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let names: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let p = names.len();
        let mut cells = Vec::new();
        let mut rows = Vec::new();
        for (i, record) in rdr.records().enumerate() {
            let record = record?;
            if record.len() != p {
                return Err(Error::Parse(format!("row {} has {} cells, header has {p}", i + 1, record.len())));
            }
            let raw: Vec<String> = record.iter().map(str::to_string).collect();
            let parsed = raw
                .iter()
                .enumerate()
                .map(|(j, c)| {
                    if is_missing(c) {
                        Ok(None)
                    } else {
                        c.trim()
                            .parse::<f64>()
                            .ok()
                            .filter(|v| v.is_finite())
                            .map(Some)
                            .ok_or_else(|| Error::Parse(format!("row {}, column '{}': cannot parse '{c}'", i + 1, names[j])))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            cells.push(raw);
            rows.push(parsed);
        }
        let matrix = if rows.is_empty() {
            ObservedMatrix::new(0, p, Vec::new(), Vec::new())?
        } else {
            ObservedMatrix::from_rows(&rows)?
        };
        Ok(Self { names, cells, matrix })
    }

    pub fn read_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::read(BufReader::new(File::open(path)?))
    }

    /// Checks every column has an observation, naming the offenders.
    pub fn check_columns(&self) -> Result<()> {
        let empty: Vec<&str> = (0..self.matrix.ncols())
            .filter(|&j| self.matrix.column_observed(j).is_empty())
            .map(|j| self.names[j].as_str())
            .collect();
        if self.matrix.n_observed() == 0 {
            return Err(Error::NoObservations);
        }
        if !empty.is_empty() {
            return Err(Error::Schema(format!("columns with no observed entries: {}", empty.join(", "))));
        }
        Ok(())
    }

    /// Completed dataset: observed cells verbatim, missing cells from
    /// `completed`.
    pub fn write_completed<W: Write>(&self, out: W, completed: &DMatrix<f64>) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.names)?;
        for (i, row) in self.cells.iter().enumerate() {
            let record: Vec<String> = row
                .iter()
                .enumerate()
                .map(|(j, c)| if self.matrix.is_observed(i, j) { c.clone() } else { format_f64(completed[(i, j)]) })
                .collect();
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Ordinal if at most [`MAX_INFERRED_LEVELS`] distinct observed values, all
/// integers; continuous otherwise.
pub fn infer_column_kind(values: &[f64]) -> ColumnKind {
    let mut distinct: Vec<f64> = values.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() <= MAX_INFERRED_LEVELS && distinct.iter().all(|v| v.fract() == 0.0) {
        ColumnKind::Ordinal
    } else {
        ColumnKind::Continuous
    }
}

/// The single kind shared by all columns, inferred unless `declared`.
pub fn resolve_kind(data: &Dataset, declared: Option<ColumnKind>) -> Result<ColumnKind> {
    if let Some(kind) = declared {
        return Ok(kind);
    }
    let kinds: Vec<ColumnKind> = (0..data.matrix.ncols()).map(|j| infer_column_kind(&data.matrix.column_observed(j))).collect();
    let Some(&first) = kinds.first() else {
        return Err(Error::Schema("dataset has no columns".into()));
    };
    if kinds.iter().all(|&k| k == first) {
        return Ok(first);
    }
    let list = |kind: ColumnKind| {
        kinds
            .iter()
            .zip(&data.names)
            .filter(|(k, _)| **k == kind)
            .map(|(_, n)| n.as_str())
            .collect::<Vec<_>>()
            .join(", ")
    };
    Err(Error::MixedColumnKinds(format!(
        "ordinal [{}], continuous [{}]; pass an explicit type",
        list(ColumnKind::Ordinal),
        list(ColumnKind::Continuous)
    )))
}

/// Writes a fully observed matrix.
pub fn write_matrix<W: Write>(out: W, names: &[String], m: &DMatrix<f64>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(names)?;
    for i in 0..m.nrows() {
        w.write_record((0..m.ncols()).map(|j| format_f64(m[(i, j)])))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes a matrix with missing cells as `NA`.
pub fn write_observed<W: Write>(out: W, names: &[String], m: &ObservedMatrix) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(names)?;
    for i in 0..m.nrows() {
        w.write_record((0..m.ncols()).map(|j| m.get(i, j).map_or_else(|| "NA".to_string(), format_f64)))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a fully observed matrix, such as the complete data of a simulation.
pub fn read_matrix<R: Read>(reader: R) -> Result<(Vec<String>, DMatrix<f64>)> {
    let ds = Dataset::read(reader)?;
    let m = &ds.matrix;
    if m.n_observed() != m.nrows() * m.ncols() {
        return Err(Error::Schema("matrix has missing cells".into()));
    }
    let values = DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m.get(i, j).expect("complete"));
    Ok((ds.names, values))
}

pub fn default_names(p: usize) -> Vec<String> {
    (1..=p).map(|j| format!("V{j}")).collect()
}

/// Serialized fit: marginals, `W`, `σ²` and diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub columns: Vec<String>,
    pub kind: ColumnKind,
    pub marginals: Vec<Marginal>,
    pub nrows_w: usize,
    pub rank: usize,
    /// `W`, row-major.
    pub w: Vec<f64>,
    pub sigma2: f64,
    pub seed: u64,
    pub diagnostics: FitDiagnostics,
}

impl ModelFile {
    pub fn from_fit(columns: Vec<String>, marginals: &MarginalModel, fit: &FitResult, seed: u64) -> Self {
        let w = &fit.params.w;
        let row_major = (0..w.nrows()).flat_map(|i| (0..w.ncols()).map(move |c| w[(i, c)])).collect();
        Self {
            format_version: FORMAT_VERSION,
            columns,
            kind: marginals.kind(),
            marginals: marginals.columns().to_vec(),
            nrows_w: w.nrows(),
            rank: w.ncols(),
            w: row_major,
            sigma2: fit.params.sigma2,
            seed,
            diagnostics: fit.diagnostics.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Schema(format!("unsupported model format version {}", self.format_version)));
        }
        let p = self.columns.len();
        if self.marginals.len() != p || self.nrows_w != p {
            return Err(Error::Schema(format!(
                "{p} column names, {} marginals, W has {} rows",
                self.marginals.len(),
                self.nrows_w
            )));
        }
        if self.w.len() != self.nrows_w * self.rank {
            return Err(Error::Schema(format!("W holds {} values, expected {}x{}", self.w.len(), self.nrows_w, self.rank)));
        }
        if let Some(m) = self.marginals.iter().find(|m| m.kind() != self.kind) {
            return Err(Error::Schema(format!("marginal of kind {} in a {} model", m.kind(), self.kind)));
        }
        self.params()?;
        Ok(())
    }

    pub fn params(&self) -> Result<CopulaParams> {
        CopulaParams::new(DMatrix::from_row_slice(self.nrows_w, self.rank, &self.w), self.sigma2)
    }

    pub fn marginal_model(&self) -> Result<MarginalModel> {
        MarginalModel::from_columns(self.marginals.clone())
    }

    /// Fails with the offending names when `names` differ from the model's.
    pub fn check_columns(&self, names: &[String]) -> Result<()> {
        if names.len() != self.columns.len() {
            return Err(Error::Schema(format!(
                "data has {} columns, model has {}",
                names.len(),
                self.columns.len()
            )));
        }
        let bad: Vec<String> = names
            .iter()
            .zip(&self.columns)
            .filter(|(a, b)| a != b)
            .map(|(a, b)| format!("'{a}' (model: '{b}')"))
            .collect();
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Schema(format!("column mismatch: {}", bad.join(", "))))
        }
    }

    pub fn write<W: Write>(&self, out: W) -> Result<()> {
        let mut out = out;
        serde_json::to_writer_pretty(&mut out, self)?;
        out.write_all(b"\n")?;
        Ok(())
    }

    pub fn read<R: Read>(reader: R) -> Result<Self> {
        let model: Self = serde_json::from_reader(reader)?;
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read(BufReader::new(File::open(path)?))
    }
}

/// Generating parameters of a simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthFile {
    pub format_version: u32,
    pub spec: SynthSpec,
    pub rank: usize,
    /// `W`, row-major.
    pub w: Vec<f64>,
    pub sigma2: f64,
    /// Per-column cut points for ordinal kinds.
    pub cut_points: Option<Vec<Vec<f64>>>,
}

impl TruthFile {
    pub fn from_synth(spec: &SynthSpec, data: &SynthData) -> Self {
        let w = &data.params.w;
        let cut_points = data
            .marginals
            .iter()
            .map(|m| match m {
                TrueMarginal::Step(o) => Some(o.cut_points().to_vec()),
                _ => None,
            })
            .collect();
        Self {
            format_version: FORMAT_VERSION,
            spec: spec.clone(),
            rank: w.ncols(),
            w: (0..w.nrows()).flat_map(|i| (0..w.ncols()).map(move |c| w[(i, c)])).collect(),
            sigma2: data.params.sigma2,
            cut_points,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut w, self)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| "NA".to_string(), format_f64)
}

/// One row per imputed entry. Continuous results carry `lo, hi`, ordinal
/// results `prob_bound`; undefined reliabilities are written as `NA`.
pub fn write_uq<W: Write>(out: W, result: &ImputationResult) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let interval = result.kind.has_interval();
    let mut header = vec!["row", "col", "imputed", "latent_mean", "latent_var"];
    header.extend(if interval { ["lo", "hi"].as_slice() } else { ["prob_bound"].as_slice() });
    header.push("reliability");
    w.write_record(&header)?;
    for (e, r) in result.entries.iter().zip(&result.reliability) {
        let mut rec = vec![e.row.to_string(), e.col.to_string(), format_f64(e.imputed), format_f64(e.latent_mean), format_f64(e.latent_var)];
        if interval {
            rec.push(opt(e.interval.map(|i| i.0)));
            rec.push(opt(e.interval.map(|i| i.1)));
        } else {
            rec.push(opt(e.prob_bound));
        }
        rec.push(opt(*r));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a table written by [`write_uq`] back into a result over the
/// completed matrix `completed`.
pub fn read_uq<R: Read>(reader: R, completed: DMatrix<f64>, alpha: f64) -> Result<ImputationResult> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let need = |name: &str| col(name).ok_or_else(|| Error::Schema(format!("uq table lacks column '{name}'")));
    let (ri, ci, ii, mi, vi, reli) = (need("row")?, need("col")?, need("imputed")?, need("latent_mean")?, need("latent_var")?, need("reliability")?);
    let interval_cols = col("lo").zip(col("hi"));
    let bound_col = col("prob_bound");
    if interval_cols.is_none() && bound_col.is_none() {
        return Err(Error::Schema("uq table has neither lo/hi nor prob_bound".into()));
    }
    let parse = |s: &str, what: &str| -> Result<Option<f64>> {
        if is_missing(s) {
            Ok(None)
        } else {
            s.trim().parse::<f64>().map(Some).map_err(|_| Error::Parse(format!("{what}: cannot parse '{s}'")))
        }
    };
    let idx = |s: &str| -> Result<usize> { s.trim().parse().map_err(|_| Error::Parse(format!("bad index '{s}'"))) };
    let mut entries = Vec::new();
    let mut reliability = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let (row, c) = (idx(&rec[ri])?, idx(&rec[ci])?);
        if row >= completed.nrows() || c >= completed.ncols() {
            return Err(Error::DimensionMismatch(format!("uq entry ({row}, {c}) is outside the imputed matrix")));
        }
        let num = |k: usize, what: &str| parse(&rec[k], what)?.ok_or_else(|| Error::Parse(format!("{what} missing")));
        let interval = match interval_cols {
            Some((lo, hi)) => parse(&rec[lo], "lo")?.zip(parse(&rec[hi], "hi")?),
            None => None,
        };
        entries.push(MissingEntryUQ {
            row,
            col: c,
            imputed: num(ii, "imputed")?,
            latent_mean: num(mi, "latent_mean")?,
            latent_var: num(vi, "latent_var")?,
            interval,
            prob_bound: match bound_col {
                Some(b) => parse(&rec[b], "prob_bound")?,
                None => None,
            },
        });
        reliability.push(parse(&rec[reli], "reliability")?);
    }
    let kind = if interval_cols.is_some() { ColumnKind::Continuous } else { ColumnKind::Ordinal };
    Ok(ImputationResult { completed, entries, reliability, alpha, kind })
}
