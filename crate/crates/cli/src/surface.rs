//! Acquisition values over all pools of two points on a 1-d domain, for a
//! GP conditioned on three observations.

use qbo_core::acquisition::{Acquisition, AcquisitionSpec, BaseSampleBlock, Family, PoolOrdering};
use qbo_core::gp::{unit_bounds, Dataset, GpModel};
use qbo_core::kernel::KernelParams;
use qbo_core::linalg::{JitterPolicy, Matrix};
use qbo_core::par::{map_indexed, Parallelism};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const MIN_GRID: usize = 16;
pub const SURFACE_SAMPLES: usize = 1024;
pub const SURFACE_HEADER: [&str; 6] = ["i", "j", "x1", "x2", "value", "std_error"];

const OBSERVED_X: [f64; 3] = [0.15, 0.5, 0.8];
const OBSERVED_Y: [f64; 3] = [-0.3, 0.6, 0.1];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceRow {
    pub i: usize,
    pub j: usize,
    pub x1: f64,
    pub x2: f64,
    pub value: f64,
    pub std_error: f64,
}

pub fn surface_model() -> GpModel {
    let x = Matrix::from_vec(3, 1, OBSERVED_X.to_vec()).expect("3x1");
    let data = Dataset::new(x, OBSERVED_Y.to_vec(), unit_bounds(1)).expect("inside the unit interval");
    GpModel::new(data, KernelParams::benchmark_default(1), JitterPolicy::default()).expect("distinct inputs")
}

pub fn grid_point(k: usize, grid: usize) -> f64 {
    k as f64 / (grid - 1) as f64
}

/// Row-major `grid × grid` values of `family` over pools `(x1, x2)` on an
/// even grid of `[0, 1]`. Every pool shares one symmetrized base-sample
/// block and is evaluated in canonical order, so the surface is exactly
/// symmetric.
pub fn surface(family: Family, grid: usize, seed: u64, par: Parallelism) -> Result<Vec<SurfaceRow>, CliError> {
    if grid < MIN_GRID {
        return Err(CliError::Config(format!("grid must be at least {MIN_GRID}, got {grid}")));
    }
    let model = surface_model();
    let alpha = model.data().best_output().expect("three observations");
    let spec = AcquisitionSpec::new(family).with_alpha(alpha).with_samples(SURFACE_SAMPLES);
    let acq =
        Acquisition::new(&model, spec).with_ordering(PoolOrdering::Canonical).with_parallelism(Parallelism::Sequential);
    let z = BaseSampleBlock::symmetrized_pairs(SURFACE_SAMPLES, seed);
    let rows = map_indexed(par, grid * grid, |k| {
        let (i, j) = (k / grid, k % grid);
        let (x1, x2) = (grid_point(i, grid), grid_point(j, grid));
        let pool = Matrix::from_vec(2, 1, vec![x1, x2]).expect("2x1");
        acq.estimate(&pool, &z).map(|e| SurfaceRow { i, j, x1, x2, value: e.value, std_error: e.std_error })
    });
    Ok(rows.into_iter().collect::<qbo_core::Result<Vec<_>>>()?)
}
