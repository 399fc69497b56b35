//! Fixtures shared by the benchmarks.

use ovb_core::simgen::gen_example2;
use ovb_core::{
    CarParams, CarStructure, GridSpec, Hyperparams, LogDetMethod, Model, ModelConfig, SubjectData,
    Variant,
};

/// Simulated spatial design on a `side × side` lattice with the matching
/// spatial-only model (R = 20).
pub fn spatial_fixture(
    side: usize,
    n: usize,
    times: usize,
    seed: u64,
) -> (Model, Vec<SubjectData>) {
    let sites = side * side;
    let (data, _, _) = gen_example2(sites, n, times, seed).expect("valid design");
    let mut cfg = ModelConfig::new(Variant::SpatialOnly, sites, times, times);
    cfg.truncation = 20;
    let grid = GridSpec::Lattice {
        rows: side,
        cols: side,
    };
    let car =
        CarStructure::new(grid, CarParams::default(), LogDetMethod::Exact).expect("valid lattice");
    let model =
        Model::new(cfg.clone(), Hyperparams::default_for(&cfg), Some(car)).expect("valid model");
    (model, data)
}
