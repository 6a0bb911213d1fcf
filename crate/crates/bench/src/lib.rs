//! Shared fixtures for the benchmarks.

use lrgc::synth::{simulate, SynthSpec};
use lrgc::{init_params, CopulaParams, MarginalModel, ObservedMatrix};

pub struct Fixture {
    pub data: ObservedMatrix,
    pub marginals: MarginalModel,
    pub params: CopulaParams,
}

/// A benchmark protocol with its row count replaced by `n`, marginals fitted
/// on the observed data and freshly initialized parameters.
pub fn fixture(protocol: &str, n: usize, seed: u64) -> Fixture {
    let mut spec = SynthSpec::protocol(protocol, seed).expect("known protocol");
    spec.n = n;
    let (_, data) = simulate(&spec).expect("simulation");
    let marginals = MarginalModel::fit(&data, spec.kind.column_kind()).expect("marginals");
    let params = init_params(spec.p, spec.k, seed).expect("parameters");
    Fixture { data, marginals, params }
}
