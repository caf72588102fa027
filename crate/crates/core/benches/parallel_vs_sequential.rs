use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use qbo_core::acquisition::{Acquisition, AcquisitionSpec, BaseSampleBlock, Family};
use qbo_core::gp::{unit_bounds, Dataset, GpModel};
use qbo_core::kernel::KernelParams;
use qbo_core::linalg::{JitterPolicy, Matrix};
use qbo_core::par::Parallelism;
use qbo_core::tasks::{estimate_task_max, sample_task};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MODES: [(&str, Parallelism); 2] = [("sequential", Parallelism::Sequential), ("rayon", Parallelism::Rayon)];

fn model(d: usize, n: usize) -> GpModel {
    let mut r = ChaCha8Rng::seed_from_u64(1);
    let x = Matrix::from_fn(n, d, |_, _| r.random::<f64>());
    let y: Vec<f64> = (0..n).map(|i| x.row(i).iter().map(|v| (3.0 * v).sin()).sum()).collect();
    let data = Dataset::new(x, y, unit_bounds(d)).unwrap();
    GpModel::new(data, KernelParams::benchmark_default(d), JitterPolicy::default()).unwrap()
}

fn acquisition_gradient(c: &mut Criterion) {
    let (d, q) = (4, 4);
    let model = model(d, 32);
    let mut group = c.benchmark_group("estimate_gradient");
    for n in [1024, 8192] {
        let spec = AcquisitionSpec::new(Family::Ei).with_alpha(model.data().best_output().unwrap()).with_samples(n);
        let x = Matrix::from_fn(q, d, |i, j| ((i * d + j) as f64 * 0.37).fract());
        let z = BaseSampleBlock::fixed(n, q, 7);
        for (name, par) in MODES {
            let acq = Acquisition::new(&model, spec).with_parallelism(par);
            group.bench_with_input(BenchmarkId::new(name, n), &n, |b, _| {
                b.iter(|| acq.estimate_gradient(&x, &z).unwrap())
            });
        }
    }
    group.finish();
}

fn task_maximum(c: &mut Criterion) {
    let task = sample_task(4, &KernelParams::benchmark_default(4), 1024, 3).unwrap();
    let mut group = c.benchmark_group("estimate_task_max");
    group.sample_size(10);
    for (name, par) in MODES {
        group.bench_function(name, |b| b.iter(|| estimate_task_max(&task, 16, 5, par).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, acquisition_gradient, task_maximum);
criterion_main!(benches);
