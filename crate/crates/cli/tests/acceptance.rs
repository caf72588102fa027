//! One pass/fail line per acceptance criterion; the test fails if any
//! criterion fails.

use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use qbo_cli::gradcheck::{gradcheck, TrialStatus, TOLERANCE as GRAD_TOLERANCE};
use qbo_cli::oracle::pi_relaxation_errors;
use qbo_core::acquisition::{
    estimate_with, integrand_ei, integrand_sr, integrand_ucb, Acquisition, AcquisitionSpec, BaseSampleBlock, Family,
    PoolOrdering,
};
use qbo_core::gp::{unit_bounds, Dataset, GpModel, PosteriorGaussian};
use qbo_core::kernel::KernelParams;
use qbo_core::linalg::{JitterPolicy, Matrix};
use qbo_core::par::{derive_seed, Parallelism};
use qbo_core::verify::{
    adaptive_gaussian_expectation, closed_form_ei, closed_form_pi, closed_form_ucb1, gauss_hermite_expectation,
    half_normal_moment_quadrature, ucb_censored_quadrature,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 2024;

struct Outcome {
    passed: bool,
    detail: String,
}

fn rng(criterion: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(SEED, &[criterion]))
}

fn posterior(mu: Vec<f64>, sigma: Matrix) -> PosteriorGaussian {
    PosteriorGaussian::from_moments(mu, sigma, &JitterPolicy::default()).unwrap()
}

fn post1(mu: f64, sd: f64) -> PosteriorGaussian {
    posterior(vec![mu], Matrix::from_rows(&[[sd * sd]]).unwrap())
}

fn random_posterior(r: &mut ChaCha8Rng, q: usize) -> PosteriorGaussian {
    let a = Matrix::from_fn(q, q, |_, _| r.random::<f64>() * 2.0 - 1.0);
    let mut s = a.matmul(&a.transpose()).unwrap();
    for i in 0..q {
        s[(i, i)] += 0.2;
    }
    posterior((0..q).map(|_| r.random::<f64>() - 0.5).collect(), s)
}

fn random_model(r: &mut ChaCha8Rng, n: usize, d: usize) -> GpModel {
    let x = Matrix::from_fn(n, d, |_, _| r.random::<f64>());
    let y: Vec<f64> = (0..n).map(|i| x.row(i).iter().map(|v| (3.0 * v).sin()).sum()).collect();
    let data = Dataset::new(x, y, unit_bounds(d)).unwrap();
    GpModel::new(data, KernelParams::isotropic(d, 1.0, 0.4, 1e-6), JitterPolicy::default()).unwrap()
}

fn mc(spec: &AcquisitionSpec, post: &PosteriorGaussian, seed: u64) -> (f64, f64) {
    let z = BaseSampleBlock::fixed(spec.n_samples, post.q(), seed);
    let e = estimate_with(Parallelism::default(), spec, post, &z).unwrap();
    (e.value, e.std_error)
}

fn rel(v: f64, reference: f64) -> f64 {
    (v - reference).abs() / reference.abs()
}

fn marginal_ucb() -> Outcome {
    let mut r = rng(1);
    let mut triples = vec![(0.0, 1.0, 3.0)];
    triples.extend(
        (0..20).map(|_| (r.random::<f64>() * 2.0 - 1.0, 0.2 + r.random::<f64>(), 0.5 + 3.0 * r.random::<f64>())),
    );
    let mut worst: f64 = 0.0;
    for (k, &(mu, sd, beta)) in triples.iter().enumerate() {
        let spec = AcquisitionSpec::new(Family::Ucb).with_beta(beta).with_samples(200_000);
        let (v, _) = mc(&spec, &post1(mu, sd), derive_seed(SEED, &[1, k as u64]));
        worst = worst.max(rel(v, closed_form_ucb1(mu, sd, beta)));
    }
    let spec = AcquisitionSpec::new(Family::Ucb).with_beta(3.0).with_samples(200_000);
    let (root3, _) = mc(&spec, &post1(0.0, 1.0), derive_seed(SEED, &[1, 0]));
    Outcome {
        passed: worst <= 0.01,
        detail: format!(
            "mu=0 sigma=1 beta=3 gives {root3:.5} (sqrt 3 = {:.5}); worst rel err over 21 = {worst:.2e} (tol 1e-2)",
            3f64.sqrt()
        ),
    }
}

fn identities() -> Outcome {
    let mut worst_half: f64 = 0.0;
    for k in 0..10 {
        let sd = 0.1 * 1.6f64.powi(k);
        worst_half = worst_half.max(rel(half_normal_moment_quadrature(sd), sd));
    }
    let mut r = rng(2);
    let mut worst_censored: f64 = 0.0;
    for _ in 0..10 {
        let (mu, sd, beta) = (r.random::<f64>() * 2.0 - 1.0, 0.2 + r.random::<f64>(), 0.5 + 3.0 * r.random::<f64>());
        worst_censored = worst_censored.max(rel(ucb_censored_quadrature(mu, sd, beta), mu + beta.sqrt() * sd));
    }
    Outcome {
        passed: worst_half <= 1e-6 && worst_censored <= 1e-4,
        detail: format!("half-normal moment worst rel {worst_half:.2e} (tol 1e-6); censored form worst rel {worst_censored:.2e} (tol 1e-4)"),
    }
}

fn closed_forms() -> Outcome {
    let mut r = rng(3);
    let (mut worst_ei, mut worst_pi): (f64, f64) = (0.0, 0.0);
    for k in 0..20u64 {
        // Standardized improvement u = (mu - alpha)/sd in [-0.5, 1.5]; deeper
        // in the tail EI vanishes and a relative tolerance is meaningless.
        let (mu, sd, u) = (r.random::<f64>() * 2.0 - 1.0, 0.2 + r.random::<f64>(), 2.0 * r.random::<f64>() - 0.5);
        let alpha = mu - u * sd;
        let spec = AcquisitionSpec::new(Family::Ei).with_alpha(alpha).with_samples(200_000);
        let (v, _) = mc(&spec, &post1(mu, sd), derive_seed(SEED, &[3, 0, k]));
        worst_ei = worst_ei.max(rel(v, closed_form_ei(mu, sd, alpha)));
        let spec = AcquisitionSpec::new(Family::Pi).with_alpha(alpha).with_tau(1e-3).with_samples(200_000);
        let (v, _) = mc(&spec, &post1(mu, sd), derive_seed(SEED, &[3, 1, k]));
        worst_pi = worst_pi.max((v - closed_form_pi(mu, sd, alpha)).abs());
    }
    Outcome {
        passed: worst_ei <= 0.01 && worst_pi <= 0.01,
        detail: format!(
            "EI worst rel {worst_ei:.2e} (tol 1e-2); PI tau=1e-3 worst abs {worst_pi:.2e} (tol 1e-2); 20 configs each, u in [-0.5, 1.5]"
        ),
    }
}

/// Judged against adaptive quadrature; the order-64 Gauss-Hermite comparison
/// is reported alongside, with order 128 showing where that rule converges.
fn quadrature_q2() -> Outcome {
    let mut r = rng(4);
    let alpha = 0.2;
    let (mut passed, mut literal) = (true, true);
    let mut parts = Vec::new();
    let std2 = posterior(vec![0.0; 2], Matrix::identity(2));
    for family in [Family::Ei, Family::Sr, Family::Ucb] {
        let (mut worst, mut worst_gh, mut gap64, mut gap128): (f64, f64, f64, f64) = (0.0, 0.0, 0.0, 0.0);
        for k in 0..10u64 {
            let p = random_posterior(&mut r, 2);
            let spec = AcquisitionSpec::new(family).with_alpha(alpha).with_samples(1_000_000);
            let beta = spec.beta;
            let ucb = |z: &[f64]| integrand_ucb(z, &p, beta);
            let ei = |y: &[f64]| integrand_ei(y, alpha);
            let (gh, gh128, adaptive) = match family {
                Family::Ei => (
                    gauss_hermite_expectation(ei, &p, 64),
                    gauss_hermite_expectation(ei, &p, 128),
                    adaptive_gaussian_expectation(ei, &p, 1e-9),
                ),
                Family::Sr => (
                    gauss_hermite_expectation(integrand_sr, &p, 64),
                    gauss_hermite_expectation(integrand_sr, &p, 128),
                    adaptive_gaussian_expectation(integrand_sr, &p, 1e-9),
                ),
                _ => (
                    gauss_hermite_expectation(ucb, &std2, 64),
                    gauss_hermite_expectation(ucb, &std2, 128),
                    adaptive_gaussian_expectation(ucb, &std2, 1e-9),
                ),
            };
            let (gh, gh128, adaptive) = (gh.unwrap(), gh128.unwrap(), adaptive.unwrap());
            let (v, se) = mc(&spec, &p, derive_seed(SEED, &[4, family as u64, k]));
            let bound = |reference: f64| (0.005 * reference.abs()).max(3.0 * se);
            passed &= (v - adaptive).abs() <= bound(adaptive);
            literal &= (v - gh).abs() <= bound(gh);
            worst = worst.max((v - adaptive).abs() / bound(adaptive));
            worst_gh = worst_gh.max((v - gh).abs() / bound(gh));
            gap64 = gap64.max(rel(gh, adaptive));
            gap128 = gap128.max(rel(gh128, adaptive));
        }
        parts.push(format!(
            "{}: |err|/bound {worst:.2} (GH-64 {worst_gh:.2}; GH-64 off adaptive by {gap64:.1e}, GH-128 by {gap128:.1e})",
            family.name()
        ));
    }
    let literal = if literal { "pass" } else { "FAIL" };
    Outcome {
        passed,
        detail: format!(
            "n=1e6, 10 posteriors, bound max(0.5% rel, 3 SE) vs adaptive quadrature; GH-64 as reference: {literal}; {}",
            parts.join("; ")
        ),
    }
}

fn gradients() -> Outcome {
    let report = gradcheck(&Family::ALL, 50, 0, 1.0, Parallelism::default());
    let checked = report.trials.iter().filter(|t| t.status == TrialStatus::Checked).count();
    let ties = report.trials.iter().filter(|t| t.status == TrialStatus::TieExcluded).count();
    let unresolved = report.trials.iter().filter(|t| t.status == TrialStatus::FdUnresolved).count();
    let worst = report.trials.iter().filter_map(|t| t.relative_error).fold(0.0, f64::max);
    Outcome {
        passed: report.passed,
        detail: format!(
            "{checked} checked over {} families (50 each), worst rel {worst:.2e} (tol {GRAD_TOLERANCE:.0e}); excluded {ties} tie, {unresolved} fd-unresolved",
            Family::ALL.len()
        ),
    }
}

fn invariants() -> Outcome {
    let mut r = rng(6);
    let mut exact = true;
    for family in Family::ALL {
        for trial in 0..4u64 {
            let model = random_model(&mut r, 8, 2);
            let spec = AcquisitionSpec::new(family).with_alpha(model.data().best_output().unwrap()).with_samples(128);
            let acq = Acquisition::new(&model, spec).with_ordering(PoolOrdering::Canonical);
            let x = Matrix::from_fn(3, 2, |_, _| r.random::<f64>());
            let z = BaseSampleBlock::fixed(128, 3, derive_seed(SEED, &[6, trial]));
            for perm in [[1, 0, 2], [2, 0, 1], [2, 1, 0]] {
                let a = acq.estimate_gradient(&x, &z).unwrap();
                let b = acq.estimate_gradient(&x.permute_rows(&perm), &z.permute_columns(&perm)).unwrap();
                exact &= a.value.to_bits() == b.value.to_bits() && a.grad.permute_rows(&perm) == b.grad;
            }
        }
    }
    let model = random_model(&mut r, 8, 2);
    let mut dominance = 0;
    for trial in 0..20u64 {
        let x = Matrix::from_fn(3, 2, |_, _| r.random::<f64>());
        let spec = AcquisitionSpec::new(Family::Ucb).with_samples(4096);
        let est = Acquisition::new(&model, spec)
            .estimate(&x, &BaseSampleBlock::fixed(4096, 3, derive_seed(SEED, &[6, 1, trial])))
            .unwrap();
        let post = model.posterior(&x).unwrap();
        let sd = post.std_devs();
        let best = (0..3).map(|i| closed_form_ucb1(post.mu[i], sd[i], spec.beta)).fold(f64::NEG_INFINITY, f64::max);
        dominance += (est.value >= best - 3.0 * est.std_error) as usize;
    }
    let mut monotone = 0;
    for trial in 0..10u64 {
        let p = random_posterior(&mut r, 2);
        let z = BaseSampleBlock::fixed(4096, 2, derive_seed(SEED, &[6, 2, trial]));
        let errs = pi_relaxation_errors(&p, &z, 0.2);
        monotone += errs.windows(2).all(|w| w[1] <= w[0]) as usize;
    }
    Outcome {
        passed: exact && dominance == 20 && monotone == 10,
        detail: format!(
            "permutation exact over {} families x 4 pools x 3 perms: {exact}; UCB dominance {dominance}/20; PI relaxation monotone {monotone}/10",
            Family::ALL.len()
        ),
    }
}

fn qbo(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_qbo")).args(args).output().unwrap()
}

fn desk_run(dir: &Path) -> std::process::Output {
    qbo(&["run", "--set", "families=EI,UCB", "--output", dir.to_str().unwrap()])
}

fn benchmark(dir: &Path) -> Outcome {
    let o = desk_run(dir);
    if !o.status.success() {
        return Outcome { passed: false, detail: format!("run failed: {}", String::from_utf8_lossy(&o.stderr)) };
    }
    let mut reader = csv::Reader::from_path(dir.join("summary.csv")).unwrap();
    let rows: Vec<(String, String, f64)> = reader
        .records()
        .map(|r| r.unwrap())
        .map(|r| (r[0].to_string(), r[1].to_string(), r[3].parse().unwrap()))
        .collect();
    let median = |f: &str, o: &str| rows.iter().find(|r| r.0 == f && r.1 == o).map(|r| r.2).unwrap();
    let mut passed = true;
    let mut parts = Vec::new();
    for family in ["EI", "UCB"] {
        let worst_gradient = median(family, "LBFGS").max(median(family, "ADAM"));
        let best_free = median(family, "RS").min(median(family, "DIRECT"));
        passed &= worst_gradient <= best_free;
        parts.push(format!(
            "{family}: LBFGS {:.3} ADAM {:.3} RS {:.3} DIRECT {:.3}",
            median(family, "LBFGS"),
            median(family, "ADAM"),
            median(family, "RS"),
            median(family, "DIRECT")
        ));
    }
    Outcome { passed, detail: format!("median terminal log10 regret, {}", parts.join("; ")) }
}

fn determinism(first: &Path, second: &Path) -> Outcome {
    let o = desk_run(second);
    let identical = o.status.success()
        && std::fs::read(first.join("results.csv")).ok() == std::fs::read(second.join("results.csv")).ok();
    let out = second.join("checks");
    let out = out.to_str().unwrap();
    let grad = qbo(&["gradcheck", "--output", out]).status.code();
    let oracle = qbo(&["oracle", "--output", out]).status.code();
    Outcome {
        passed: identical && grad == Some(0) && oracle == Some(0),
        detail: format!("results.csv byte-identical: {identical}; gradcheck exit {grad:?}; oracle exit {oracle:?}"),
    }
}

#[test]
fn acceptance() {
    let first = tempfile::tempdir().unwrap();
    let second = tempfile::tempdir().unwrap();
    let criteria: Vec<(usize, Box<dyn Fn() -> Outcome + '_>)> = vec![
        (1, Box::new(marginal_ucb)),
        (2, Box::new(identities)),
        (3, Box::new(closed_forms)),
        (4, Box::new(quadrature_q2)),
        (5, Box::new(gradients)),
        (6, Box::new(invariants)),
        (7, Box::new(|| benchmark(first.path()))),
        (8, Box::new(|| determinism(first.path(), second.path()))),
    ];
    let mut failed = Vec::new();
    for (n, check) in criteria {
        let start = Instant::now();
        let outcome = check();
        let verdict = if outcome.passed { "PASS" } else { "FAIL" };
        // Bypasses the harness capture so the report shows without --nocapture.
        let line = format!("criterion {n} [{verdict}] ({:.1} s) {}\n", start.elapsed().as_secs_f64(), outcome.detail);
        std::io::stdout().lock().write_all(line.as_bytes()).unwrap();
        if !outcome.passed {
            failed.push(n);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
