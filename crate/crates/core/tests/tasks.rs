use qbo_core::acquisition::{AcquisitionSpec, Family};
use qbo_core::kernel::{kern, KernelParams};
use qbo_core::linalg::Matrix;
use qbo_core::optim::{OptimizerConfig, OptimizerKind};
use qbo_core::par::Parallelism;
use qbo_core::tasks::{
    bo_run, estimate_task_max, refine_task_max, regret_curve, rff_covariance_check, sample_task, task_eval, BoSettings,
    TrialEntry, TrialLog, DEFAULT_FEATURES, REGRET_FLOOR,
};
use qbo_core::Error;

fn params(d: usize) -> KernelParams {
    KernelParams::isotropic(d, 1.0, 0.2, 1e-6)
}

#[test]
fn same_seed_same_task() {
    let a = sample_task(3, &params(3), 256, 9).unwrap();
    let b = sample_task(3, &params(3), 256, 9).unwrap();
    let c = sample_task(3, &params(3), 256, 10).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.weights, c.weights);
    let x = [0.3, 0.6, 0.9];
    assert_eq!(a.value(&x).to_bits(), b.value(&x).to_bits());
}

#[test]
fn rejects_bad_arguments() {
    assert!(matches!(sample_task(2, &params(3), 256, 0), Err(Error::DimensionMismatch(_))));
    assert!(matches!(sample_task(2, &params(2), 32, 0), Err(Error::InvalidArgument(_))));
    let task = sample_task(2, &params(2), 128, 0).unwrap();
    let outside = Matrix::from_rows(&[[0.5, 1.2]]).unwrap();
    assert!(task_eval(&task, &outside).is_err());
    let wrong = Matrix::from_rows(&[[0.5, 0.5, 0.5]]).unwrap();
    assert!(matches!(task_eval(&task, &wrong), Err(Error::DimensionMismatch(_))));
}

#[test]
fn zero_weights_give_zero_function() {
    let mut task = sample_task(2, &params(2), 128, 1).unwrap();
    task.weights.iter_mut().for_each(|w| *w = 0.0);
    for x in [[0.0, 0.0], [0.3, 0.8], [1.0, 1.0]] {
        assert_eq!(task.value(&x), 0.0);
    }
}

#[test]
fn outputs_are_linear_in_weights() {
    let task = sample_task(3, &params(3), 128, 2).unwrap();
    let mut doubled = task.clone();
    doubled.weights.iter_mut().for_each(|w| *w *= 2.0);
    let x = Matrix::from_rows(&[[0.1, 0.2, 0.3], [0.9, 0.5, 0.0]]).unwrap();
    let y = task_eval(&task, &x).unwrap();
    let y2 = task_eval(&doubled, &x).unwrap();
    assert_eq!(y, task_eval(&task, &x).unwrap());
    for (a, b) in y.iter().zip(&y2) {
        assert_eq!(2.0 * a, *b);
    }
}

#[test]
fn flat_task_has_zero_max() {
    let mut task = sample_task(2, &params(2), 128, 1).unwrap();
    task.weights.iter_mut().for_each(|w| *w = 0.0);
    assert_eq!(estimate_task_max(&task, 16, 0, Parallelism::Sequential).unwrap(), 0.0);
    assert!(matches!(estimate_task_max(&task, 8, 0, Parallelism::Sequential), Err(Error::InvalidArgument(_))));
}

#[test]
fn covariance_check_is_close_for_full_feature_count() {
    let p = params(4);
    let (emp, exact) =
        rff_covariance_check(&p, DEFAULT_FEATURES, &[0.4; 4], &[0.45; 4], 2000, 3, Parallelism::default()).unwrap();
    assert!((emp - exact).abs() < 0.1 * exact, "{emp} vs {exact}");
}

#[test]
fn prior_moments_match_kernel() {
    let p = params(2);
    let x1 = [0.2, 0.4];
    let x2 = [0.3, 0.45];
    let n = 2000;
    let (mut s1, mut s2, mut s12, mut s11) = (0.0, 0.0, 0.0, 0.0);
    for seed in 0..n {
        let task = sample_task(2, &p, 256, seed).unwrap();
        let (a, b) = (task.value(&x1), task.value(&x2));
        s1 += a;
        s2 += b;
        s12 += a * b;
        s11 += a * a;
    }
    let nf = n as f64;
    let mean = s1 / nf;
    assert!(mean.abs() < 4.0 * (1.0 / nf).sqrt(), "mean {mean}");
    let var = s11 / nf - mean * mean;
    let cov = s12 / nf - mean * (s2 / nf);
    let k11 = kern(&x1, &x1, &p).unwrap();
    let k12 = kern(&x1, &x2, &p).unwrap();
    assert!((var - k11).abs() < 0.1 * k11, "var {var} vs {k11}");
    assert!((cov - k12).abs() < 0.1 * k11, "cov {cov} vs {k12}");
}

#[test]
fn gradient_matches_finite_differences() {
    let task = sample_task(3, &params(3), DEFAULT_FEATURES, 4).unwrap();
    let x = [0.31, 0.52, 0.77];
    let (v, g) = task.value_and_grad(&x);
    assert_eq!(v, task.value(&x));
    for k in 0..3 {
        let h = 1e-6;
        let mut xp = x;
        let mut xm = x;
        xp[k] += h;
        xm[k] -= h;
        let fd = (task.value(&xp) - task.value(&xm)) / (2.0 * h);
        assert!((fd - g[k]).abs() < 1e-6 * (1.0 + fd.abs()), "{k}: {fd} vs {}", g[k]);
    }
}

#[test]
fn one_dimensional_max_matches_grid() {
    let task = sample_task(1, &params(1), DEFAULT_FEATURES, 21).unwrap();
    let grid = (0..=100_000).map(|i| task.value(&[i as f64 / 100_000.0])).fold(f64::NEG_INFINITY, f64::max);
    let est = estimate_task_max(&task, 16, 5, Parallelism::Sequential).unwrap();
    assert!(est >= grid - 1e-9, "{est} < {grid}");
    assert!((est - grid).abs() < 1e-4, "{est} vs {grid}");
}

#[test]
fn more_restarts_never_lower_the_max() {
    let task = sample_task(4, &params(4), DEFAULT_FEATURES, 3).unwrap();
    let few = estimate_task_max(&task, 16, 8, Parallelism::Sequential).unwrap();
    let many = estimate_task_max(&task, 64, 8, Parallelism::default()).unwrap();
    assert!(many >= few);
}

#[test]
fn refine_covers_seen_points() {
    let task = sample_task(2, &params(2), 256, 6).unwrap();
    let seen: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64 / 19.0, 1.0 - i as f64 / 19.0]).collect();
    let refined = refine_task_max(&task, &seen, 16, 0, Parallelism::Sequential).unwrap();
    for x in &seen {
        assert!(refined >= task.value(x));
    }
}

fn small_config(kind: OptimizerKind) -> OptimizerConfig {
    OptimizerConfig { eval_budget: 32, n_starts: 4, sgd_steps: 16, ..OptimizerConfig::default() }.with_kind(kind)
}

#[test]
fn single_batch_run_has_one_entry() {
    let task = sample_task(2, &params(2), 256, 0).unwrap();
    let spec = AcquisitionSpec::new(Family::Ei).with_samples(32);
    let log = bo_run(&task, &spec, &small_config(OptimizerKind::Rs), 3, 3, 1, &BoSettings::default()).unwrap();
    assert_eq!(log.entries.len(), 1);
    assert_eq!(log.entries[0].observed.len(), 3);
    assert!(matches!(
        bo_run(&task, &spec, &small_config(OptimizerKind::Rs), 3, 4, 1, &BoSettings::default()),
        Err(Error::InvalidArgument(_))
    ));
}

#[test]
fn runs_are_reproducible_and_monotone() {
    let task = sample_task(2, &params(2), 256, 2).unwrap();
    for family in [Family::Ei, Family::Ucb] {
        let spec = AcquisitionSpec::new(family).with_samples(32);
        for kind in OptimizerKind::ALL {
            let cfg = small_config(kind);
            let a = bo_run(&task, &spec, &cfg, 2, 10, 7, &BoSettings::default()).unwrap();
            let b = bo_run(&task, &spec, &cfg, 2, 10, 7, &BoSettings::default()).unwrap();
            assert_eq!(a, b, "{family:?} {kind:?}");
            assert_eq!(a.entries.len(), 5);
            for w in a.entries.windows(2) {
                assert!(w[1].best_so_far >= w[0].best_so_far);
            }
            for (x, y) in a.observations() {
                assert!(x.iter().all(|v| (0.0..=1.0).contains(v)));
                assert_eq!(y, task.value(x));
            }
            assert!(a.entries.iter().all(|e| e.wall_time == 0.0));
        }
    }
}

#[test]
fn sequential_and_parallel_runs_agree() {
    let task = sample_task(2, &params(2), 256, 5).unwrap();
    let spec = AcquisitionSpec::new(Family::Ei).with_samples(32);
    let cfg = small_config(OptimizerKind::Lbfgs);
    let seq = BoSettings { par: Parallelism::Sequential, ..BoSettings::default() };
    let par = BoSettings { par: Parallelism::Rayon, ..BoSettings::default() };
    let a = bo_run(&task, &spec, &cfg, 2, 8, 3, &seq).unwrap();
    let b = bo_run(&task, &spec, &cfg, 2, 8, 3, &par).unwrap();
    assert_eq!(a, b);
}

fn log_with(best: &[f64], observed_max: f64) -> TrialLog {
    TrialLog {
        task_seed: 0,
        q: 2,
        d: 1,
        entries: best
            .iter()
            .enumerate()
            .map(|(i, &b)| TrialEntry {
                iteration: i,
                pool: vec![0.1, 0.2],
                observed: vec![b.min(observed_max), b],
                best_so_far: b,
                wall_time: 0.0,
                fallback: false,
            })
            .collect(),
        config_digest: String::new(),
    }
}

#[test]
fn regret_curve_examples() {
    let log = log_with(&[0.0, 0.5, 1.0], 1.0);
    let curve = regret_curve(&log, 1.0).unwrap();
    assert_eq!(curve.iter().map(|c| c.0).collect::<Vec<_>>(), vec![2, 4, 6]);
    assert!((curve[0].1 - (1.0 + REGRET_FLOOR).log10()).abs() < 1e-15);
    assert!((curve[1].1 - (0.5 + REGRET_FLOOR).log10()).abs() < 1e-15);
    assert_eq!(curve[2].1, REGRET_FLOOR.log10());
    assert!(matches!(regret_curve(&log, 0.9), Err(Error::InconsistentMax { .. })));
}
