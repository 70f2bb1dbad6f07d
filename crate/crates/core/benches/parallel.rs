//! Sequential versus rayon throughput for the data-parallel hot paths.
//!
//! With the `parallel` feature each benchmark runs twice: inside a
//! one-thread pool and inside the default global pool. Without it only the
//! sequential fallback is measured.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use l0sparse::features::LibrarySpec;
use l0sparse::gates::{draw_many, GateConfig};
use l0sparse::layers::{mse_loss, Matrix, Mode};
use l0sparse::models::{Model, ModelSpec, Target};
use l0sparse::pendulum::collect_dataset;
use l0sparse::training::evaluate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Execution modes to compare: a one-thread pool next to the global pool.
fn modes() -> Vec<(String, Option<Pool>)> {
    #[cfg(feature = "parallel")]
    {
        let single = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .expect("thread pool");
        vec![
            ("1-thread".into(), Some(single)),
            (format!("global-{}", rayon::current_num_threads()), None),
        ]
    }
    #[cfg(not(feature = "parallel"))]
    vec![("sequential".into(), None)]
}

#[cfg(feature = "parallel")]
type Pool = rayon::ThreadPool;
#[cfg(not(feature = "parallel"))]
type Pool = ();

fn run_in<R: Send>(pool: &Option<Pool>, f: impl FnOnce() -> R + Send) -> R {
    match pool {
        #[cfg(feature = "parallel")]
        Some(p) => p.install(f),
        _ => f(),
    }
}

fn gate_sampling(c: &mut Criterion) {
    let mut group = c.benchmark_group("draw_many_1e6");
    let cfg = GateConfig::default();
    for (mode, pool) in modes() {
        group.bench_function(BenchmarkId::from_parameter(&mode), |b| {
            b.iter(|| {
                run_in(&pool, || {
                    black_box(draw_many(0.5, &cfg, 1_000_000, 1).fraction_zero())
                })
            })
        });
    }
    group.finish();
}

fn data_collection(c: &mut Criterion) {
    let mut group = c.benchmark_group("collect_dataset_200x200");
    for (mode, pool) in modes() {
        group.bench_function(BenchmarkId::from_parameter(&mode), |b| {
            b.iter(|| {
                run_in(&pool, || {
                    black_box(collect_dataset(200, 200, 2).unwrap().len())
                })
            })
        });
    }
    group.finish();
}

fn forward_backward(c: &mut Criterion) {
    let mut group = c.benchmark_group("sparse_fcnn_step_batch1024");
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = Matrix::from_vec(
        1024,
        4,
        (0..4096).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap();
    let y = Matrix::zeros(1024, 3);
    for (mode, pool) in modes() {
        let mut model = Model::build(ModelSpec::sparse_fcnn(4, 3), 3).unwrap();
        let noise = model.draw_noise(&mut rng);
        group.bench_function(BenchmarkId::from_parameter(&mode), |b| {
            b.iter(|| {
                run_in(&pool, || {
                    let pred = model.forward_input(&x, Mode::Train, Some(&noise)).unwrap();
                    let (loss, d) = mse_loss(&pred, &y).unwrap();
                    model.backward(&d).unwrap();
                    black_box(loss)
                })
            })
        });
    }
    group.finish();
}

fn evaluation(c: &mut Criterion) {
    let mut group = c.benchmark_group("evaluate_40k");
    let data = collect_dataset(200, 200, 4).unwrap();
    let model = Model::build(
        ModelSpec::l0_sindy(4, 3, LibrarySpec::poly_fourier(3, 2)),
        4,
    )
    .unwrap();
    for (mode, pool) in modes() {
        group.bench_function(BenchmarkId::from_parameter(&mode), |b| {
            b.iter(|| {
                run_in(&pool, || {
                    black_box(evaluate(&model, &data, Target::Transition).unwrap())
                })
            })
        });
    }
    group.finish();
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = gate_sampling, data_collection, forward_backward, evaluation
}
criterion_main!(benches);
