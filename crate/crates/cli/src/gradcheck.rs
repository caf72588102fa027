//! Pathwise gradients against central finite differences of the same
//! fixed-sample estimate.

use qbo_core::acquisition::{Acquisition, AcquisitionSpec, BaseSampleBlock, Family};
use qbo_core::gp::{unit_bounds, Dataset, GpModel};
use qbo_core::kernel::KernelParams;
use qbo_core::linalg::{JitterPolicy, Matrix};
use qbo_core::par::{derive_seed, map_indexed, Parallelism};
use qbo_core::verify::{finite_diff_grad, relative_max_error, stencil_is_smooth};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::SCHEMA_VERSION;

pub const TOLERANCE: f64 = 1e-4;
pub const STEP: f64 = 1e-5;
pub const DEFAULT_TRIALS: usize = 50;
const DIM: usize = 3;
const POOL: usize = 2;
const DATA: usize = 8;
const SAMPLES: usize = 64;
/// Draws allowed per requested trial, counting excluded ones.
const MAX_DRAWS_PER_TRIAL: usize = 4;
/// Denominator floor of the relative error.
const FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Checked,
    /// A max or threshold tie lies inside the difference stencil.
    TieExcluded,
    /// Differences at `h` and `h/2` disagree by more than a quarter of the
    /// tolerance, so truncation error alone could exceed it.
    FdUnresolved,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradTrial {
    pub family: Family,
    pub draw: usize,
    pub status: TrialStatus,
    pub relative_error: Option<f64>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub schema_version: u32,
    pub command: String,
    pub seed: u64,
    pub trials_per_family: usize,
    pub tolerance: f64,
    pub step: f64,
    pub grad_scale: f64,
    pub passed: bool,
    pub trials: Vec<GradTrial>,
}

/// Random configuration: a GP fit to `DATA` points of a smooth function on
/// the unit cube, a random pool and a fixed base-sample block.
fn draw(seed: u64, family: Family) -> (GpModel, Matrix, BaseSampleBlock, AcquisitionSpec) {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let x = Matrix::from_fn(DATA, DIM, |_, _| r.random::<f64>());
    let y: Vec<f64> = (0..DATA).map(|i| x.row(i).iter().map(|v| (3.0 * v).sin()).sum()).collect();
    let data = Dataset::new(x, y, unit_bounds(DIM)).expect("points lie in the unit cube");
    let model = GpModel::new(data, KernelParams::isotropic(DIM, 1.0, 0.4, 1e-6), JitterPolicy::default())
        .expect("distinct random points factorize");
    let alpha = model.data().best_output().expect("nonempty data");
    let pool = Matrix::from_fn(POOL, DIM, |_, _| r.random::<f64>());
    let z = BaseSampleBlock::fixed(SAMPLES, POOL, r.random());
    (model, pool, z, AcquisitionSpec::new(family).with_alpha(alpha).with_samples(SAMPLES))
}

fn check_draw(family: Family, seed: u64, grad_scale: f64) -> (TrialStatus, Option<f64>) {
    let (model, x, z, spec) = draw(seed, family);
    let acq = Acquisition::new(&model, spec).with_parallelism(Parallelism::Sequential);
    if !stencil_is_smooth(&acq, &x, &z, STEP).unwrap_or(false) {
        return (TrialStatus::TieExcluded, None);
    }
    let value = |m: &Matrix| acq.estimate(m, &z).map_or(f64::NAN, |e| e.value);
    let fd = finite_diff_grad(value, &x, STEP);
    let fd_half = finite_diff_grad(value, &x, 0.5 * STEP);
    if relative_max_error(&fd, &fd_half, FLOOR) > 0.25 * TOLERANCE {
        return (TrialStatus::FdUnresolved, None);
    }
    let rel = acq
        .estimate_gradient(&x, &z)
        .map_or(f64::INFINITY, |g| relative_max_error(&g.grad.scaled(grad_scale), &fd, FLOOR));
    (TrialStatus::Checked, Some(if rel.is_nan() { f64::INFINITY } else { rel }))
}

/// Checks `trials` tie-free configurations per family. `grad_scale`
/// multiplies the analytic gradient before comparison; 1 in normal use.
pub fn gradcheck(families: &[Family], trials: usize, seed: u64, grad_scale: f64, par: Parallelism) -> GradcheckReport {
    let mut out = Vec::new();
    let mut passed = true;
    for &family in families {
        let mut checked = 0;
        let mut draw_index = 0;
        // Draws are evaluated in batches of the outstanding count so the
        // report does not depend on the parallelism.
        while checked < trials && draw_index < trials * MAX_DRAWS_PER_TRIAL {
            let batch = (trials - checked).min(trials * MAX_DRAWS_PER_TRIAL - draw_index);
            let results = map_indexed(par, batch, |i| {
                check_draw(family, derive_seed(seed, &[family as u64, (draw_index + i) as u64]), grad_scale)
            });
            for (status, rel) in results {
                if checked == trials {
                    break;
                }
                let ok = rel.is_none_or(|e| e <= TOLERANCE);
                if status == TrialStatus::Checked {
                    checked += 1;
                }
                passed &= ok;
                out.push(GradTrial { family, draw: draw_index, status, relative_error: rel, passed: ok });
                draw_index += 1;
            }
        }
        passed &= checked == trials;
    }
    GradcheckReport {
        schema_version: SCHEMA_VERSION,
        command: "gradcheck".into(),
        seed,
        trials_per_family: trials,
        tolerance: TOLERANCE,
        step: STEP,
        grad_scale,
        passed,
        trials: out,
    }
}
