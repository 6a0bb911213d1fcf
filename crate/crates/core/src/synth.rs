//! Synthetic data from a known low-rank Gaussian copula, and MCAR masks.

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{ColumnKind, ObservedMatrix};
use crate::em::CopulaParams;
use crate::error::{Error, Result};
use crate::marginals::{LinearMarginal, Marginal, MarginalModel, OrdinalMarginal};

/// Mask redraws allowed before giving up on covering every column.
const MASK_RETRIES: usize = 1000;

/// How latent columns are turned into data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "type")]
pub enum DataKind {
    /// `x = z`.
    ContinuousIdentity,
    /// `x = z³`, a high-rank continuous matrix.
    ContinuousCubic,
    /// Step function with `levels` levels coded `1..=levels`.
    Ordinal { levels: usize },
    /// Two levels coded `1, 2`.
    Binary,
}

impl DataKind {
    pub fn column_kind(self) -> ColumnKind {
        match self {
            DataKind::ContinuousIdentity | DataKind::ContinuousCubic => ColumnKind::Continuous,
            DataKind::Ordinal { .. } | DataKind::Binary => ColumnKind::Ordinal,
        }
    }

    pub fn levels(self) -> Option<usize> {
        match self {
            DataKind::Ordinal { levels } => Some(levels),
            DataKind::Binary => Some(2),
            _ => None,
        }
    }
}

/// Names accepted by [`SynthSpec::protocol`].
pub const PROTOCOLS: [&str; 6] = ["lowrank-cont", "highrank-cont", "ordinal-high", "ordinal-low", "binary-high", "binary-low"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n: usize,
    pub p: usize,
    pub k: usize,
    pub sigma2: f64,
    pub kind: DataKind,
    pub missing_ratio: f64,
    pub seed: u64,
}

impl SynthSpec {
    /// One of the six benchmark settings: continuous data at `n=500, p=200,
    /// k=10, σ²=0.1` with 40% missing, and 1-5 ordinal or binary data at
    /// `k=5` with 60% missing and `σ²` of 0.1 (high SNR) or 0.5 (low SNR).
    pub fn protocol(name: &str, seed: u64) -> Result<Self> {
        let (k, sigma2, kind, missing_ratio) = match name {
            "lowrank-cont" => (10, 0.1, DataKind::ContinuousIdentity, 0.4),
            "highrank-cont" => (10, 0.1, DataKind::ContinuousCubic, 0.4),
            "ordinal-high" => (5, 0.1, DataKind::Ordinal { levels: 5 }, 0.6),
            "ordinal-low" => (5, 0.5, DataKind::Ordinal { levels: 5 }, 0.6),
            "binary-high" => (5, 0.1, DataKind::Binary, 0.6),
            "binary-low" => (5, 0.5, DataKind::Binary, 0.6),
            other => {
                return Err(Error::InvalidConfig(format!(
                    "unknown protocol '{other}', expected one of {}",
                    PROTOCOLS.join(", ")
                )))
            }
        };
        Ok(Self { n: 500, p: 200, k, sigma2, kind, missing_ratio, seed })
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 || self.p < 2 {
            return Err(Error::InvalidConfig(format!("need n, p >= 2, got {}x{}", self.n, self.p)));
        }
        if self.k < 1 || self.k >= self.p {
            return Err(Error::BadRank { rank: self.k, ncols: self.p });
        }
        if !(self.sigma2 > 0.0 && self.sigma2 < 1.0) {
            return Err(Error::InvalidConfig(format!("sigma2 = {} is outside (0, 1)", self.sigma2)));
        }
        if !(self.missing_ratio > 0.0 && self.missing_ratio < 1.0) {
            return Err(Error::InvalidConfig(format!("missing ratio {} is outside (0, 1)", self.missing_ratio)));
        }
        if let Some(levels) = self.kind.levels() {
            if levels < 2 || levels > self.n {
                return Err(Error::InvalidConfig(format!("{levels} ordinal levels for {} rows", self.n)));
            }
        }
        Ok(())
    }
}

/// The data-generating marginal of one column.
#[derive(Debug, Clone, PartialEq)]
pub enum TrueMarginal {
    Identity,
    Cubic,
    Step(OrdinalMarginal),
}

impl TrueMarginal {
    pub fn forward(&self, z: f64) -> f64 {
        match self {
            TrueMarginal::Identity => z,
            TrueMarginal::Cubic => z * z * z,
            TrueMarginal::Step(m) => m.g_forward(z),
        }
    }

    /// The same map as a fittable marginal, where one exists.
    pub fn as_marginal(&self) -> Option<Marginal> {
        match self {
            TrueMarginal::Identity => Some(Marginal::Linear(LinearMarginal { mean: 0.0, scale: 1.0 })),
            TrueMarginal::Cubic => None,
            TrueMarginal::Step(m) => Some(Marginal::Ordinal(m.clone())),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthData {
    /// Complete data `X = G(Z)`, `n x p`.
    pub complete: DMatrix<f64>,
    /// Latent `Z = T Wᵀ + σE`.
    pub latent: DMatrix<f64>,
    pub params: CopulaParams,
    pub marginals: Vec<TrueMarginal>,
}

impl SynthData {
    /// True marginals as a model, if every column has a fittable form.
    pub fn marginal_model(&self) -> Option<MarginalModel> {
        let cols: Option<Vec<Marginal>> = self.marginals.iter().map(TrueMarginal::as_marginal).collect();
        cols.and_then(|c| MarginalModel::from_columns(c).ok())
    }
}

/// Mixes a base seed with a stream index into an independent seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    let data: Vec<f64> = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    DMatrix::from_row_slice(rows, cols, &data)
}

/// Draws `W`, `T`, `E` (in that order) and, for ordinal kinds, per-column cut
/// points sampled without replacement from the column's latent values.
pub fn generate(spec: &SynthSpec) -> Result<SynthData> {
    spec.validate()?;
    let (n, p, k) = (spec.n, spec.p, spec.k);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut w = normal_matrix(&mut rng, p, k);
    let target = (1.0 - spec.sigma2).sqrt();
    for mut row in w.row_iter_mut() {
        let norm = row.norm();
        row *= target / norm;
    }
    let t = normal_matrix(&mut rng, n, k);
    let e = normal_matrix(&mut rng, n, p);
    let latent = &t * w.transpose() + e * spec.sigma2.sqrt();

    let marginals: Vec<TrueMarginal> = match spec.kind {
        DataKind::ContinuousIdentity => vec![TrueMarginal::Identity; p],
        DataKind::ContinuousCubic => vec![TrueMarginal::Cubic; p],
        DataKind::Ordinal { .. } | DataKind::Binary => {
            let levels = spec.kind.levels().expect("ordinal kind");
            let codes: Vec<f64> = (1..=levels).map(|c| c as f64).collect();
            (0..p)
                .map(|j| {
                    let column: Vec<f64> = latent.column(j).iter().copied().collect();
                    let max = column.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    // Redraw cuts that leave the top level empty, i.e. that
                    // include the column maximum.
                    let cuts = loop {
                        let mut cuts: Vec<f64> = sample(&mut rng, n, levels - 1).into_iter().map(|i| column[i]).collect();
                        cuts.sort_by(f64::total_cmp);
                        if cuts[levels - 2] < max {
                            break cuts;
                        }
                    };
                    OrdinalMarginal::from_parts(codes.clone(), cuts).map(TrueMarginal::Step)
                })
                .collect::<Result<_>>()?
        }
    };
    let complete = DMatrix::from_fn(n, p, |i, j| marginals[j].forward(latent[(i, j)]));
    let params = CopulaParams::new(w, spec.sigma2)?;
    Ok(SynthData { complete, latent, params, marginals })
}

/// Masks exactly `round(ratio · n · p)` entries chosen uniformly without
/// replacement. A mask is redrawn if it empties a column, or leaves fewer than
/// two distinct observed values in a column that has at least two.
pub fn mask_mcar(complete: &DMatrix<f64>, missing_ratio: f64, seed: u64) -> Result<ObservedMatrix> {
    if !(missing_ratio > 0.0 && missing_ratio < 1.0) {
        return Err(Error::InvalidConfig(format!("missing ratio {missing_ratio} is outside (0, 1)")));
    }
    let (n, p) = (complete.nrows(), complete.ncols());
    let total = n * p;
    let count = (missing_ratio * total as f64).round() as usize;
    let distinct: Vec<bool> = complete.column_iter().map(|c| c.iter().any(|&x| x != c[0])).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MASK_RETRIES {
        let mut observed = vec![true; total];
        for idx in sample(&mut rng, total, count) {
            observed[idx] = false;
        }
        let covered = (0..p).all(|j| {
            let mut seen = (0..n).filter(|&i| observed[i * p + j]).map(|i| complete[(i, j)]);
            match seen.next() {
                None => false,
                Some(first) => !distinct[j] || seen.any(|x| x != first),
            }
        });
        if covered {
            let values: Vec<f64> = (0..total).map(|idx| complete[(idx / p, idx % p)]).collect();
            return ObservedMatrix::new(n, p, values, observed);
        }
    }
    Err(Error::InvalidConfig(format!(
        "could not draw a mask keeping every column usable after {MASK_RETRIES} attempts"
    )))
}

/// Generated data together with its mask; the mask seed is derived from the
/// spec seed.
pub fn simulate(spec: &SynthSpec) -> Result<(SynthData, ObservedMatrix)> {
    let data = generate(spec)?;
    let observed = mask_mcar(&data.complete, spec.missing_ratio, derive_seed(spec.seed, 1))?;
    Ok((data, observed))
}
