//! Low-rank Gaussian copula imputation with uncertainty quantification.
//!
//! Data columns are mapped to a latent Gaussian vector `z = W t + ε` through
//! monotone marginal transforms. `(W, σ²)` is fitted by approximate EM and
//! missing entries are imputed from the conditional latent mean. Each
//! imputation carries a reliability score, plus a confidence interval for
//! continuous data or a probability bound for ordinal data.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod data;
pub mod em;
pub mod error;
pub mod eval;
pub mod inference;
pub mod io;
pub mod marginals;
pub mod normal;
pub mod synth;
pub mod truncnorm;

pub use data::{ColumnKind, ObservedMatrix};
pub use em::{fit, init_params, CopulaParams, EmConfig, FitDiagnostics, FitResult, IterationRecord};
pub use error::{Error, ErrorCategory, Result};
pub use eval::{ExperimentConfig, ExperimentReport, Method, Metric};
pub use inference::{impute, ImputationResult, ImputeConfig, MissingEntryUQ};
pub use io::{Dataset, ModelFile, TruthFile};
pub use marginals::{LatentInterval, Marginal, MarginalModel};
pub use synth::{generate, mask_mcar, simulate, DataKind, SynthData, SynthSpec};
pub use truncnorm::{truncnorm_moments, LatentRowMoments, TruncMoments};
