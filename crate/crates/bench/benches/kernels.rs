use criterion::{black_box, criterion_group, criterion_main, Criterion};

use condlora_core::analysis::{subspace_similarity, Side};
use condlora_core::linalg::{invert, svd};
use condlora_core::model::build_model;
use condlora_core::trainer::loss_and_grads;
use condlora_core::{build_task, AdapterSpec, Matrix, Method, ModelConfig, TaskKind, TaskOptions};

fn matrix_kernels(c: &mut Criterion) {
    let a = Matrix::gaussian(64, 64, 0.0, 1.0, 1);
    let b = Matrix::gaussian(64, 64, 0.0, 1.0, 2);
    c.bench_function("matmul 64x64", |bench| {
        bench.iter(|| black_box(&a).matmul(black_box(&b)).unwrap())
    });
    c.bench_function("invert 64x64", |bench| {
        bench.iter(|| invert(black_box(&a)).unwrap())
    });

    let tall = Matrix::gaussian(768, 8, 0.0, 1.0, 3);
    c.bench_function("svd 768x8", |bench| {
        bench.iter(|| svd(black_box(&tall)).unwrap())
    });
    let other = Matrix::gaussian(768, 8, 0.0, 1.0, 4);
    c.bench_function("similarity 768x8", |bench| {
        bench.iter(|| {
            subspace_similarity(black_box(&tall), black_box(&other), 8, 8, Side::Left).unwrap()
        })
    });
}

fn training_step(c: &mut Criterion) {
    let weights = build_model(&ModelConfig::default()).unwrap();
    let task = build_task(TaskKind::Teacher, &weights, &TaskOptions::default(), 0).unwrap();
    let batch = task.batch(0, 16).unwrap();
    for method in [Method::Lora, Method::CondLora] {
        let spec = AdapterSpec::new(method, 4, 4);
        let params = condlora_core::adapters::init_params(&spec, 32, 0);
        c.bench_function(&format!("loss_and_grads {method} batch16"), |bench| {
            bench.iter(|| {
                loss_and_grads(
                    &weights,
                    &params,
                    &spec,
                    black_box(&batch),
                    task.loss_kind(),
                )
                .unwrap()
            })
        });
    }
}

criterion_group!(benches, matrix_kernels, training_step);
criterion_main!(benches);
